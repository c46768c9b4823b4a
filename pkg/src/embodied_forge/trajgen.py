"""Long-horizon trajectory construction.

Chains planner-verified sub-goal rollouts into one long trajectory while
object state persists, then appends a held-out final goal whose pick object
was first seen in the earliest fraction of steps and whose target receptacle
was first seen in the latest fraction. Generation is a pure function of the
seed; replaying the logged actions reproduces every metadata entry byte for
byte.
"""
from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field, asdict
from pathlib import Path

from . import planner, world
from .errors import ConfigError, GiveUp, Unreachable
from .ioutil import read_jsonl, write_jsonl

# Image token costs per step for known vision-language model families.
TOKENS_PER_IMAGE = {
    "deepseek-vl": 576,
    "qwen2.5-vl": 121,
    "gemini-2.0-flash": 258,
}

MANIFEST_KEYS = [
    "# trajectory",
    "# avg subgoals",
    "# max subgoals",
    "# avg steps",
    "# max steps",
    "# avg token length",
    "# max token length",
]


@dataclass
class GenConfig:
    max_subgoals: int = 5
    early_frac: float = 0.20
    late_frac: float = 0.20
    tokens_per_image: int = TOKENS_PER_IMAGE["qwen2.5-vl"]
    text_tokens_per_step: int = 8
    seed: int = 0
    final_retry_budget: int = 200
    max_objects: int = 14

    def __post_init__(self):
        if not (0 < self.early_frac <= 0.5):
            raise ConfigError(f"early_frac must be in (0, 0.5], got {self.early_frac}")
        if not (0 < self.late_frac <= 0.5):
            raise ConfigError(f"late_frac must be in (0, 0.5], got {self.late_frac}")
        if self.max_subgoals < 1:
            raise ConfigError("max_subgoals must be >= 1")
        if self.tokens_per_image <= 0 or self.text_tokens_per_step <= 0:
            raise ConfigError("token constants must be positive")


@dataclass
class StepRecord:
    step: int
    action: str          # encoded action string
    metadata: dict       # per-step replay-log entry
    subgoal_index: int   # -1 for the initial observation


@dataclass
class Trajectory:
    id: str
    seed: int
    scene: world.SceneConfig
    sub_goals: list        # planner.Plan per completed sub-goal
    steps: list            # StepRecord, step 0 is the initial observation
    final_goal: planner.GroundedGoal
    final_plan: planner.Plan
    first_seen: dict       # object id -> step index of first visibility
    token_length: int = 0

    @property
    def total_steps(self) -> int:
        return self.steps[-1].step if self.steps else 0

    def to_records(self) -> list:
        header = {
            "type": "header",
            "id": self.id,
            "seed": self.seed,
            "scene": self.scene.to_text(),
            "subGoals": [{
                "goal": p.goal.to_dict(),
                "actions": [a.encode() for a in p.actions],
                "reward": 1.0,
            } for p in self.sub_goals],
            "finalGoal": self.final_goal.to_dict(),
            "finalPlan": [a.encode() for a in self.final_plan.actions],
            "firstSeen": self.first_seen,
            "tokenLength": self.token_length,
        }
        records = [header]
        for s in self.steps:
            records.append({"type": "step", "step": s.step, "action": s.action,
                            "subgoalIndex": s.subgoal_index, "metadata": s.metadata})
        return records

    @classmethod
    def from_records(cls, records: list) -> "Trajectory":
        if not records or records[0].get("type") != "header":
            raise ConfigError("trajectory file must start with a header record")
        h = records[0]
        scene = world.SceneConfig.from_text(h["scene"])
        sub_goals = []
        for sg in h["subGoals"]:
            goal = planner.ground(sg["goal"]["template"], sg["goal"]["params"])
            sub_goals.append(planner.Plan(goal=goal,
                                          actions=[world.parse_action(a)
                                                   for a in sg["actions"]]))
        final_goal = planner.ground(h["finalGoal"]["template"], h["finalGoal"]["params"])
        final_plan = planner.Plan(goal=final_goal,
                                  actions=[world.parse_action(a)
                                           for a in h["finalPlan"]])
        steps = [StepRecord(step=r["step"], action=r["action"],
                            metadata=r["metadata"], subgoal_index=r["subgoalIndex"])
                 for r in records[1:]]
        return cls(id=h["id"], seed=h["seed"], scene=scene, sub_goals=sub_goals,
                   steps=steps, final_goal=final_goal, final_plan=final_plan,
                   first_seen={k: int(v) for k, v in h["firstSeen"].items()},
                   token_length=h["tokenLength"])


def _execute_plan(env: world.Env, plan: planner.Plan, steps: list,
                  first_seen: dict, subgoal_index: int) -> None:
    """Run a plan's macro actions, logging one record per primitive step."""
    for action in plan.actions:
        if action.verb == "GotoObject":
            primitives = world.expand_goto(env.state, action.target)
            if primitives is None:
                raise Unreachable(f"goto target {action.target} unreachable at replay")
        else:
            primitives = [action]
        for prim in primitives:
            result = env.step(prim)
            if result.failure:
                raise Unreachable(f"verified plan failed on {prim.encode()}: "
                                  f"{result.failure}")
            _log_step(result.observation, prim.encode(), steps, first_seen,
                      subgoal_index)


def _log_step(obs: world.Observation, action: str, steps: list,
              first_seen: dict, subgoal_index: int) -> None:
    entry = obs.metadata_entry()
    steps.append(StepRecord(step=obs.step, action=action, metadata=entry,
                            subgoal_index=subgoal_index))
    for oid in entry["object_log"]["visible"]:
        first_seen.setdefault(oid, obs.step)


def _on_fixture(state: world.WorldState, oid: str, fixture: str) -> bool:
    """True if the object is the fixture or rests (transitively) on it."""
    if oid == fixture:
        return True
    obj = state.objects.get(oid)
    while obj is not None and obj.parent not in ("floor", "inventory"):
        if obj.parent == fixture:
            return True
        obj = state.objects.get(obj.parent)
    return False


def _param_ids(goal: planner.GroundedGoal) -> list:
    """Object ids referenced by a goal's slot bindings (flags excluded)."""
    ids = []
    for v in goal.params.values():
        for item in (v if isinstance(v, list) else [v]):
            if isinstance(item, str):
                ids.append(item)
    return ids


def _goal_reachable(state: world.WorldState, goal: planner.GroundedGoal) -> bool:
    """Cheap feasibility screen: every referenced object (and any required
    effect station) must be reachable, so the search cannot exhaust itself on
    goals that temporary obstacles made impossible."""
    ids = _param_ids(goal)
    effect = planner.TEMPLATE_EFFECTS.get(goal.template)
    if effect is not None:
        stations = [o.id for o in state.objects.values() if not o.pickupable
                    and world.CATALOG[o.obj_type].get("effect") == effect]
        if not any(world.goto_pose(state, s) is not None for s in stations):
            return False
    for oid in ids:
        if oid not in state.objects:
            return False
        if state.objects[oid].parent == "inventory":
            continue
        if world.goto_pose(state, oid) is None:
            return False
    return True


def _touches(state: world.WorldState, goal: planner.GroundedGoal,
             fixture: str) -> bool:
    """True if executing the goal would have to approach the given fixture."""
    return any(_on_fixture(state, oid, fixture) for oid in _param_ids(goal))


def _reserved_candidates(state: world.WorldState) -> list:
    """Fixture receptacles not visible from the start pose, farthest first."""
    visible0 = set(state.visible_ids())
    ax, ay = state.agent.cell
    cands = [o for o in state.objects.values()
             if o.receptacle and not o.pickupable and o.id not in visible0]
    cands.sort(key=lambda o: (-((o.cell[0] - ax) ** 2 + (o.cell[1] - ay) ** 2),
                              o.id))
    return [o.id for o in cands]


def generate_trajectory(config: GenConfig, task_pool: list = None,
                        scene: world.SceneConfig = None) -> Trajectory:
    """Build one trajectory per the chained sub-goal procedure.

    Sub-goals are sampled, planned, verified by simulation, and only then
    executed; failures are discarded and re-sampled. To guarantee the final
    goal's early/late first-seen windows, one far-off fixture is reserved:
    earlier sub-goals avoid it, the last sub-goal is forced to place something
    on it (so it is first seen near the end), and the final goal pairs an
    early-seen pick object with that fixture. Windows are verified post hoc
    and the whole rollout is re-attempted on violation.
    """
    task_pool = list(task_pool or planner.TEMPLATE_NAMES)
    if not task_pool:
        raise ConfigError("task pool is empty")
    scene = scene or world.random_scene_config(config.seed,
                                               max_objects=config.max_objects)

    last_error = "no reserved fixture available"
    for attempt in range(8):
        rng = random.Random(config.seed * 100_003 + attempt)
        state = world.init_scene(config.seed, scene)
        reserved_pool = _reserved_candidates(state)
        if not reserved_pool:
            break
        reserved = reserved_pool[attempt % len(reserved_pool)]
        try:
            return _attempt_trajectory(config, task_pool, scene, state, rng,
                                       reserved)
        except GiveUp as exc:
            last_error = str(exc)
    raise GiveUp(f"seed {config.seed}: {last_error}")


def _exclusion_zone(state: world.WorldState, fixture: str) -> frozenset:
    """Cells from which the reserved fixture could become visible."""
    fx, fy = state.objects[fixture].cell
    radius = state.scene.visibility_range
    r2 = radius * radius
    return frozenset(
        (x, y)
        for x in range(state.scene.width) for y in range(state.scene.height)
        if (x - fx) ** 2 + (y - fy) ** 2 <= r2)


def _attempt_trajectory(config: GenConfig, task_pool: list,
                        scene: world.SceneConfig, state: world.WorldState,
                        rng, reserved: str) -> Trajectory:
    # Phase 1 walls off every cell the reserved fixture is visible from, so
    # no route can reveal it before the deliberately late visit.
    base_blocked = state.blocked
    zone = _exclusion_zone(state, reserved)
    if state.agent.cell in zone:
        raise GiveUp(f"agent starts too close to reserved fixture {reserved}")
    state.blocked = frozenset(base_blocked | zone)

    env = world.Env(state)
    steps: list = []
    first_seen: dict = {}
    _log_step(env.observe(), "Init", steps, first_seen, -1)

    sub_plans: list = []
    budget = config.final_retry_budget + 50 * config.max_subgoals
    while len(sub_plans) < config.max_subgoals:
        budget -= 1
        if budget < 0:
            raise GiveUp(f"could not chain {config.max_subgoals} sub-goals")
        last = len(sub_plans) == config.max_subgoals - 1
        if last and state.blocked is not base_blocked:
            state.blocked = base_blocked
        goal = (_forced_last_goal(state, rng, reserved) if last
                else planner.sample_goal(rng.choice(task_pool), state, rng))
        if goal is None or planner.check_goal(state, goal):
            continue
        # Avoid immediate repeats; back-to-back identical goals add steps
        # without adding events worth asking about.
        if sub_plans and goal.goal_text == sub_plans[-1].goal.goal_text:
            continue
        if not last and _touches(state, goal, reserved):
            continue
        if not _goal_reachable(state, goal):
            continue
        try:
            plan = planner.plan(state, goal)
        except Unreachable:
            continue
        if not planner.simulate(state, plan):
            continue
        _execute_plan(env, plan, steps, first_seen, len(sub_plans))
        if not planner.check_goal(state, goal):
            raise Unreachable(f"goal {goal.goal_text!r} not met after execution")
        env.done = False
        sub_plans.append(plan)
        if not last and reserved in first_seen:
            raise GiveUp(f"reserved fixture {reserved} revealed too early")

    total = steps[-1].step
    if first_seen.get(reserved, total + 1) < (1 - config.late_frac) * total:
        raise GiveUp(f"reserved fixture {reserved} seen before the late window")
    final_goal, final_plan = _sample_final_goal(config, state, rng, first_seen,
                                                total, reserved)
    traj = Trajectory(
        id=f"traj-{config.seed:08d}", seed=config.seed, scene=scene,
        sub_goals=sub_plans, steps=steps, final_goal=final_goal,
        final_plan=final_plan, first_seen=dict(sorted(first_seen.items())))
    traj.token_length = compute_token_length(traj, config.tokens_per_image,
                                             config.text_tokens_per_step)
    return traj


def _forced_last_goal(state: world.WorldState, rng, reserved: str):
    picks = [o.id for o in state.objects.values()
             if o.pickupable and not _on_fixture(state, o.id, reserved)]
    if not picks:
        return None
    return planner.ground("pick_and_place_simple",
                          {"pickObject": rng.choice(sorted(picks)),
                           "receptacle": reserved})


def _sample_final_goal(config: GenConfig, state: world.WorldState, rng,
                       first_seen: dict, total_steps: int, reserved: str):
    early = [o for o, s in sorted(first_seen.items())
             if s <= config.early_frac * total_steps
             and o in state.objects and state.objects[o].pickupable
             and not _on_fixture(state, o, reserved)]
    for _ in range(config.final_retry_budget):
        if not early:
            break
        obj = rng.choice(early)
        goal = planner.ground("pick_and_place_simple",
                              {"pickObject": obj, "receptacle": reserved})
        try:
            plan = planner.plan(state, goal)
        except Unreachable:
            continue
        if planner.simulate(state, plan):
            return goal, plan
    raise GiveUp("no final goal satisfies the early/late windows")


def compute_token_length(traj: Trajectory, tokens_per_image: int,
                         text_tokens_per_step: int) -> int:
    """Context cost: one image plus a fixed text stub per step, plus goal text."""
    if tokens_per_image <= 0 or text_tokens_per_step <= 0:
        raise ConfigError("token constants must be positive")
    goal_tokens = sum(len(p.goal.goal_text.split()) for p in traj.sub_goals)
    goal_tokens += len(traj.final_goal.goal_text.split())
    return len(traj.steps) * (tokens_per_image + text_tokens_per_step) + goal_tokens


def replay_trajectory(traj: Trajectory) -> bool:
    """Re-run the logged actions from (seed, scene); True iff every metadata
    entry matches the log byte for byte and no step fails."""
    state = world.init_scene(traj.seed, traj.scene)
    env = world.Env(state)
    for rec in traj.steps:
        if rec.action == "Init":
            obs = env.observe()
        else:
            result = env.step(world.parse_action(rec.action))
            if result.failure:
                return False
            obs = result.observation
        if world.canonical_json(obs.metadata_entry()) != world.canonical_json(rec.metadata):
            return False
    return True


def dataset_stats(trajs: list) -> dict:
    """Summary statistics keyed by the standard dataset-card row names."""
    if not trajs:
        return {k: 0 for k in MANIFEST_KEYS}
    subgoals = [len(t.sub_goals) for t in trajs]
    nsteps = [t.total_steps for t in trajs]
    tokens = [t.token_length for t in trajs]
    return {
        "# trajectory": len(trajs),
        "# avg subgoals": statistics.mean(subgoals),
        "# max subgoals": max(subgoals),
        "# avg steps": statistics.mean(nsteps),
        "# max steps": max(nsteps),
        "# avg token length": statistics.mean(tokens),
        "# max token length": max(tokens),
    }


def export_dataset(trajs: list, out_dir) -> dict:
    """Write one trajectory file per episode plus a manifest of statistics."""
    out_dir = Path(out_dir)
    for traj in trajs:
        write_jsonl(out_dir / f"{traj.id}.jsonl", traj.to_records())
    manifest = dataset_stats(trajs)
    manifest["files"] = sorted(f"{t.id}.jsonl" for t in trajs)
    write_jsonl(out_dir / "manifest.json", [manifest])
    return manifest


def load_trajectory(path) -> Trajectory:
    return Trajectory.from_records(read_jsonl(path))


def load_dataset(traj_dir) -> list:
    traj_dir = Path(traj_dir)
    return [load_trajectory(p) for p in sorted(traj_dir.glob("traj-*.jsonl"))]
