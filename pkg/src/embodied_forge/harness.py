"""Online evaluation of external agents against generated trajectories.

Plan-level evaluation runs each sub-goal plan independently: the environment
is reset to the ground-truth state at the plan boundary, the agent receives
the prior ground-truth history (never its own deviations), and the episode
stops at the first failing plan. The final-task evaluation hands the agent
the full history plus the held-out final goal and records staged success for
the go-to / pick-up / put phases.

Agents speak a line-delimited message protocol (init / observe / act / done)
either in process or over a subprocess's stdio; malformed or late messages
are recorded as failures, never raised past the harness.
"""
from __future__ import annotations

import json
import math
import random
import re
import subprocess
import threading
from dataclasses import dataclass, field

from . import planner, world
from .errors import ProtocolError, SpecError
from .trajgen import Trajectory

PROTOCOL_VERSION = "1.0"
FAILURE_PROTOCOL = "ProtocolError"
FAILURE_DEADLOCK = "Deadlock"

CONTEXT_MODES = ("interleaved", "memoryText", "memoryImage")


@dataclass
class EvalConfig:
    mode: str = "interleaved"
    token_budget: int = 128_000
    keep_recent: int = 8
    tokens_per_image: int = 121
    text_tokens_per_step: int = 8
    top_k: int = 10
    action_timeout: float = 30.0
    deadlock_factor: int = 10
    seed: int = 0


@dataclass
class AgentContext:
    mode: str
    goal_text: str
    entries: list          # ("state", step) / ("action", encoded) / ("memory", text)
    token_budget: int
    tokens: int = 0
    truncated: bool = False


@dataclass
class EpisodeReport:
    trajectory_id: str
    total_reward: float = 0.0
    plan_outcomes: list = field(default_factory=list)
    staged_success: dict = field(default_factory=dict)
    context_size_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"trajectoryId": self.trajectory_id,
                "totalReward": self.total_reward,
                "planOutcomes": self.plan_outcomes,
                "stagedSuccess": self.staged_success,
                "contextSizeTrace": self.context_size_trace}


# ---------------------------------------------------------------------------
# Context assembly
# ---------------------------------------------------------------------------

def _goal_tokens(goal_text: str) -> int:
    return len(goal_text.split())


def build_interleaved_context(history: list, goal_text: str,
                              config: EvalConfig) -> AgentContext:
    """Goal followed by the full (state, action) stream, oldest evicted first.

    history is a list of step records with .step and .action. The goal and
    the most recent keep_recent steps are always retained.
    """
    step_cost = config.tokens_per_image + config.text_tokens_per_step
    base = _goal_tokens(goal_text)
    if config.token_budget < base + step_cost:
        raise SpecError(f"budget {config.token_budget} cannot hold the goal "
                        f"plus one step")
    max_steps = (config.token_budget - base) // step_cost
    keep = max(config.keep_recent, 1)
    truncated = len(history) > max_steps
    kept = history[-max(max_steps, min(keep, len(history))):] if history else []
    entries = []
    for rec in kept:
        entries.append(("state", rec.step))
        entries.append(("action", rec.action))
    tokens = base + len(kept) * step_cost
    return AgentContext(mode="interleaved", goal_text=goal_text,
                        entries=entries, token_budget=config.token_budget,
                        tokens=tokens, truncated=truncated)


_PICK_RE = re.compile(r"^PickupObject\|(.+)$")
_PUT_RE = re.compile(r"^PutObject\|([^|]+)\|(.+)$")
_SLICE_RE = re.compile(r"^SliceObject\|(.+)$")


def build_text_memory(history: list) -> str:
    """Chronological digest: one line per interaction event, then a final
    snapshot of every receptacle observed in the last entry."""
    lines = []
    prev_holder: dict = {}
    for rec in history:
        log = rec.metadata["object_log"]
        m = _PICK_RE.match(rec.action)
        if m:
            oid = m.group(1)
            src = prev_holder.get(oid, "the floor")
            lines.append(f"step {rec.step}: picked up "
                         f"{world.display_name(world.obj_type_of(oid))} from {src}")
        m = _PUT_RE.match(rec.action)
        if m:
            oid, rid = m.groups()
            rt = world.obj_type_of(rid)
            prep = "in" if world.CATALOG[rt]["openable"] else "on"
            lines.append(f"step {rec.step}: put "
                         f"{world.display_name(world.obj_type_of(oid))} {prep} "
                         f"{world.display_name(rt)}")
        m = _SLICE_RE.match(rec.action)
        if m:
            lines.append(f"step {rec.step}: sliced "
                         f"{world.display_name(world.obj_type_of(m.group(1)))}")
        for rid, objs in log["recep_objs"].items():
            for oid in objs:
                prev_holder[oid] = world.display_name(world.obj_type_of(rid))
    if history:
        final = history[-1].metadata["object_log"]
        for rid in final["receptacles"]:
            names = ", ".join(world.display_name(world.obj_type_of(o))
                              for o in final["recep_objs"][rid]) or "nothing"
            lines.append(f"{world.display_name(world.obj_type_of(rid))} "
                         f"contains: {names}")
    return "\n".join(lines)


def default_embedder(visible_types: list) -> dict:
    """L2-normalized bag of visible object types."""
    counts: dict = {}
    for t in visible_types:
        counts[t] = counts.get(t, 0) + 1
    norm = math.sqrt(sum(v * v for v in counts.values()))
    return {k: v / norm for k, v in counts.items()} if norm else {}


def _cosine(a: dict, b: dict) -> float:
    return sum(v * b.get(k, 0.0) for k, v in a.items())


def _goal_types(goal_text: str) -> list:
    text = goal_text.lower()
    return [t for t in sorted(world.CATALOG)
            if world.display_name(t) in text]


def retrieve_image_memory(history: list, goal_text: str, k: int,
                          embedder=default_embedder):
    """Top-k historical steps by cosine similarity to the goal's object bag.

    Returns (steps, flagged) where flagged is True when k exceeded the
    history length. Ties rank the earlier step first.
    """
    if k < 1:
        raise SpecError("k must be >= 1")
    goal_vec = embedder(_goal_types(goal_text))
    scored = []
    for rec in history:
        types = [world.obj_type_of(o)
                 for o in rec.metadata["object_log"]["visible"]]
        scored.append((-_cosine(goal_vec, embedder(types)), rec.step))
    scored.sort()
    flagged = k > len(history)
    return [step for _neg, step in scored[:k]], flagged


def build_context(history: list, goal_text: str, config: EvalConfig) -> AgentContext:
    if config.mode == "interleaved":
        return build_interleaved_context(history, goal_text, config)
    if config.mode == "memoryText":
        digest = build_text_memory(history)
        tokens = _goal_tokens(goal_text) + len(digest.split())
        return AgentContext(mode=config.mode, goal_text=goal_text,
                            entries=[("memory", digest)],
                            token_budget=config.token_budget, tokens=tokens)
    if config.mode == "memoryImage":
        steps, flagged = retrieve_image_memory(history, goal_text, config.top_k)
        step_cost = config.tokens_per_image + config.text_tokens_per_step
        return AgentContext(mode=config.mode, goal_text=goal_text,
                            entries=[("state", s) for s in steps],
                            token_budget=config.token_budget,
                            tokens=_goal_tokens(goal_text) + len(steps) * step_cost,
                            truncated=flagged)
    raise SpecError(f"unknown context mode {config.mode!r}")


# ---------------------------------------------------------------------------
# Agent endpoints
# ---------------------------------------------------------------------------

class OracleAgent:
    """Replays the ground-truth primitive actions for each plan."""
    def __init__(self, traj: Trajectory):
        self._by_plan = gt_primitives(traj)

    def handle(self, message: dict) -> dict:
        if message["type"] == "init":
            key = message["config"]["planKey"]
            self._queue = list(self._by_plan[key])
            return {"type": "ready"}
        if message["type"] == "observe":
            if not self._queue:
                return {"type": "act", "action": "Init"}  # harmless no-op
            return {"type": "act", "action": self._queue.pop(0)}
        return {"type": "ok"}


class RandomAgent:
    """Uniform choice over actions that look plausible in the observation."""
    def __init__(self, seed: int = 0):
        self._rng = random.Random(seed)

    def handle(self, message: dict) -> dict:
        if message["type"] != "observe":
            return {"type": "ready"}
        log = message["observation"]["object_log"]
        options = ["MoveAhead", "RotateLeft", "RotateRight"]
        holding = log["inven_obj"][0] if log["inven_obj"] else None
        for oid in log["pickupable"]:
            if holding is None:
                options.append(f"PickupObject|{oid}")
        for rid in log["receptacles"]:
            if holding is not None:
                options.append(f"PutObject|{holding}|{rid}")
            if world.CATALOG[world.obj_type_of(rid)]["openable"]:
                verb = "CloseObject" if rid in log["isOpen"] else "OpenObject"
                options.append(f"{verb}|{rid}")
        return {"type": "act", "action": self._rng.choice(sorted(options))}


class SubprocessAgent:
    """Line-delimited JSON over a child process's stdio, with timeouts."""

    def __init__(self, command, timeout: float = 30.0):
        self._timeout = timeout
        self._proc = subprocess.Popen(
            command, shell=isinstance(command, str),
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
            bufsize=1)

    def handle(self, message: dict) -> dict:
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"agent pipe closed: {exc}") from exc
        if message["type"] == "done":
            return {"type": "ok"}
        line = self._read_line()
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed agent message: {line!r}") from exc
        if not isinstance(reply, dict) or "type" not in reply:
            raise ProtocolError(f"agent message missing type: {reply!r}")
        return reply

    def _read_line(self) -> str:
        result = {}
        def reader():
            result["line"] = self._proc.stdout.readline()
        t = threading.Thread(target=reader, daemon=True)
        t.start()
        t.join(self._timeout)
        if t.is_alive():
            raise ProtocolError(f"agent timed out after {self._timeout}s")
        line = result.get("line", "")
        if not line:
            raise ProtocolError("agent closed its output stream")
        return line

    def close(self):
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        self._proc.terminate()
        self._proc.wait(timeout=5)


# ---------------------------------------------------------------------------
# Ground-truth reconstruction
# ---------------------------------------------------------------------------

def gt_snapshots(traj: Trajectory):
    """(state at each plan boundary, final state) from a fresh replay."""
    state = world.init_scene(traj.seed, traj.scene)
    env = world.Env(state)
    boundaries = []
    current = -1
    for rec in traj.steps:
        if rec.subgoal_index != current and rec.subgoal_index >= 0:
            boundaries.append(state.clone())
            current = rec.subgoal_index
        if rec.action != "Init":
            result = env.step(world.parse_action(rec.action))
            if result.failure:
                raise SpecError(f"trajectory {traj.id} does not replay")
            env.done = False
    return boundaries, state.clone()


def gt_primitives(traj: Trajectory) -> dict:
    """Primitive action strings per plan key: 0..N-1 and 'final'."""
    out: dict = {}
    for rec in traj.steps:
        if rec.subgoal_index >= 0:
            out.setdefault(rec.subgoal_index, []).append(rec.action)
    _boundaries, final_state = gt_snapshots(traj)
    state = final_state.clone()
    env = world.Env(state)
    final = []
    for action in traj.final_plan.actions:
        if action.verb == "GotoObject":
            prims = world.expand_goto(state, action.target) or []
        else:
            prims = [action]
        for prim in prims:
            result = env.step(prim)
            if result.failure:
                raise SpecError(f"final plan of {traj.id} does not replay")
            env.done = False
            final.append(prim.encode())
    out["final"] = final
    return out


# ---------------------------------------------------------------------------
# Evaluation loops
# ---------------------------------------------------------------------------

def _send(agent, message: dict) -> dict:
    reply = agent.handle(message)
    if not isinstance(reply, dict) or "type" not in reply:
        raise ProtocolError(f"bad agent reply: {reply!r}")
    return reply


def _run_one_plan(agent, env: world.Env, goal: planner.GroundedGoal,
                  history: list, config: EvalConfig, plan_key,
                  max_steps: int, report: EpisodeReport):
    """Run a single plan; returns (success, failure_reason, trackers)."""
    seen_interactable = False
    held_target = False
    target = goal.params.get("pickObject")
    try:
        _send(agent, {"type": "init", "protocol": PROTOCOL_VERSION,
                      "goal": goal.goal_text, "mode": config.mode,
                      "config": {"planKey": plan_key,
                                 "tokenBudget": config.token_budget}})
    except ProtocolError:
        return False, FAILURE_PROTOCOL, 0, (False, False)
    steps = 0
    obs = env.observe()
    while True:
        context = build_context(history, goal.goal_text, config)
        report.context_size_trace.append(context.tokens)
        if target is not None and target in env.state.objects:
            if env.state.objects[target].parent == "inventory":
                held_target = True
            if _interactable(env.state, target):
                seen_interactable = True
        if planner.check_goal(env.state, goal):
            return True, None, steps, (seen_interactable, held_target)
        if steps >= max_steps:
            return False, FAILURE_DEADLOCK, steps, (seen_interactable, held_target)
        try:
            reply = _send(agent, {"type": "observe", "step": obs.step,
                                  "observation": obs.metadata_entry(),
                                  "contextTokens": context.tokens})
            if reply.get("type") != "act" or "action" not in reply:
                raise ProtocolError(f"expected act, got {reply!r}")
            action = world.parse_action(str(reply["action"]))
        except (ProtocolError, ValueError, KeyError) as exc:
            del exc
            return False, FAILURE_PROTOCOL, steps, (seen_interactable, held_target)
        result = env.step(action)
        env.done = False
        steps += 1
        obs = result.observation
        if result.failure:
            return False, result.failure, steps, (seen_interactable, held_target)


def _interactable(state: world.WorldState, oid: str) -> bool:
    if oid not in state.objects or state.objects[oid].parent == "inventory":
        return False
    hx, hy = world.HEADING_VEC[state.agent.heading]
    near = {state.agent.cell,
            (state.agent.cell[0] + hx, state.agent.cell[1] + hy)}
    return (state.effective_cell(oid) in near
            and oid in state.visible_ids())


def run_plan_level_eval(traj: Trajectory, agent,
                        config: EvalConfig = None) -> EpisodeReport:
    """Each plan starts from the ground-truth boundary state and ground-truth
    history; the episode stops at the first failing plan."""
    config = config or EvalConfig()
    report = EpisodeReport(trajectory_id=traj.id)
    boundaries, _final = gt_snapshots(traj)
    gt_lens = {}
    for rec in traj.steps:
        if rec.subgoal_index >= 0:
            gt_lens[rec.subgoal_index] = gt_lens.get(rec.subgoal_index, 0) + 1
    for i, plan in enumerate(traj.sub_goals):
        env = world.Env(boundaries[i].clone())
        history = [r for r in traj.steps if -1 <= r.subgoal_index < i]
        max_steps = config.deadlock_factor * gt_lens[i]
        success, reason, steps, _stages = _run_one_plan(
            agent, env, plan.goal, history, config, i, max_steps, report)
        report.plan_outcomes.append(
            {"planIndex": i, "success": success, "steps": steps,
             "failureReason": reason})
        if success:
            report.total_reward += 1.0
        else:
            break  # Break evaluation on the first failed plan.
    try:
        _send(agent, {"type": "done", "report": report.to_dict()})
    except ProtocolError:
        pass
    return report


def run_final_task_eval(traj: Trajectory, agent,
                        config: EvalConfig = None) -> EpisodeReport:
    """Final goal from the full ground-truth history; staged go-to / pick-up /
    put success booleans are monotone by construction."""
    config = config or EvalConfig()
    report = EpisodeReport(trajectory_id=traj.id)
    _boundaries, final_state = gt_snapshots(traj)
    env = world.Env(final_state.clone())
    gt_len = len(gt_primitives(traj)["final"])
    success, reason, steps, (seen, held) = _run_one_plan(
        agent, env, traj.final_goal, list(traj.steps), config, "final",
        config.deadlock_factor * max(gt_len, 1), report)
    put = success
    pickup = held or put
    goto = seen or pickup
    report.staged_success = {"goto": goto, "pickup": pickup, "put": put}
    report.plan_outcomes.append({"planIndex": "final", "success": success,
                                 "steps": steps, "failureReason": reason})
    if success:
        report.total_reward += 1.0
    try:
        _send(agent, {"type": "done", "report": report.to_dict()})
    except ProtocolError:
        pass
    return report
