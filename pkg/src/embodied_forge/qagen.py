"""Rule-based QA synthesis over trajectory replay logs.

Questions are generated by re-simulating the trajectory and watching events
as they happen; ground-truth answers can be recomputed by a second,
independent path (`answer_from_metadata`) that only scans the logged step
records. Both paths must agree for every generated instance.

Question texts instantiate the fixed template inventory (presence, open
state, location tracing, slicing, container content, put action, final
state, movement counting); sampling balances (type, object) frequency cells;
filtering keeps a question iff at least one validator answers it correctly.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from . import world
from .errors import ConfigError
from .trajgen import Trajectory

QA_TYPES = [
    "presence",
    "openState",
    "locationTrace",
    "slicing",
    "containerContent",
    "putAction",
    "finalState",
    "movementCount",
]

UNANSWERABLE = "<unanswerable>"


@dataclass
class QAInstance:
    qa_id: str
    trajectory_id: str
    qa_type: str
    question: str
    answer: str
    gt_steps: list
    params: dict = field(default_factory=dict)

    @property
    def evidence_class(self) -> str:
        return "multi" if len(self.gt_steps) >= 2 else "single"

    def to_dict(self) -> dict:
        return {"qaId": self.qa_id, "trajectoryId": self.trajectory_id,
                "qaType": self.qa_type, "question": self.question,
                "answer": self.answer, "gtSteps": self.gt_steps,
                "evidenceClass": self.evidence_class, "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "QAInstance":
        return cls(qa_id=d["qaId"], trajectory_id=d["trajectoryId"],
                   qa_type=d["qaType"], question=d["question"],
                   answer=d["answer"], gt_steps=list(d["gtSteps"]),
                   params=dict(d.get("params", {})))


def _name(oid_or_type: str) -> str:
    t = oid_or_type.rsplit("_", 1)[0] if "_" in oid_or_type else oid_or_type
    return world.display_name(t)


def _the(oid_or_type: str) -> str:
    return "the " + _name(oid_or_type)


def _a_an(oid_or_type: str) -> str:
    n = _name(oid_or_type)
    return ("an " if n[0] in "aeiou" else "a ") + n


def _in_on(obj_type: str) -> str:
    return "in" if world.CATALOG[obj_type]["openable"] else "on"


def _loc_name(parent: str) -> str:
    return "the floor" if parent == "floor" else _name(parent)


def _unique_types(traj: Trajectory) -> set:
    counts: dict = {}
    for rec in traj.steps:
        for oid in rec.metadata["object_log"]["visible"]:
            counts.setdefault(world.obj_type_of(oid), set()).add(oid)
    state = world.init_scene(traj.seed, traj.scene)
    for oid in state.objects:
        counts.setdefault(world.obj_type_of(oid), set()).add(oid)
    return {t for t, ids in counts.items() if len(ids) == 1}


# ---------------------------------------------------------------------------
# Generation path: re-simulate the trajectory and watch events happen.
# ---------------------------------------------------------------------------

@dataclass
class _ReplayEvents:
    pickups: list       # (step, obj_id, from_parent)
    puts: list          # (step, obj_id, recep_id)
    slices: list        # (step, obj_id)
    first_visible: dict  # obj_id -> step
    first_open: dict     # recep_id -> step first observed open
    recep_snapshots: list  # (step, recep_id, tuple of direct contents)
    final_state: world.WorldState
    final_step: int


def _watch(events: _ReplayEvents, obs: world.Observation) -> None:
    for oid in obs.visible:
        events.first_visible.setdefault(oid, obs.step)
    for rid, is_open in obs.open_states.items():
        if is_open:
            events.first_open.setdefault(rid, obs.step)
    for rid, contents in obs.recep_contents.items():
        events.recep_snapshots.append((obs.step, rid, tuple(contents)))


def replay_events(traj: Trajectory) -> _ReplayEvents:
    state = world.init_scene(traj.seed, traj.scene)
    env = world.Env(state)
    events = _ReplayEvents([], [], [], {}, {}, [], None, 0)
    _watch(events, env.observe())
    for rec in traj.steps[1:]:
        action = world.parse_action(rec.action)
        if action.verb == "PickupObject":
            events.pickups.append((rec.step, action.target,
                                   state.objects[action.target].parent))
        result = env.step(action)
        if result.failure:
            raise ConfigError(f"trajectory {traj.id} does not replay: "
                              f"{rec.action} -> {result.failure}")
        env.done = False
        if action.verb == "PutObject":
            events.puts.append((rec.step, action.target, action.receptacle))
        elif action.verb == "SliceObject":
            events.slices.append((rec.step, action.target))
        _watch(events, result.observation)
    events.final_state = state
    events.final_step = traj.steps[-1].step
    return events


def generate_qa(traj: Trajectory, seed: int = 0) -> list:
    """Apply every trigger rule to one trajectory; deterministic order."""
    ev = replay_events(traj)
    unique = _unique_types(traj)
    rng = random.Random(seed)
    out: list = []

    def emit(qa_type, question, answer, gt_steps, **params):
        gt = sorted(set(gt_steps))
        out.append(QAInstance(
            qa_id="", trajectory_id=traj.id, qa_type=qa_type,
            question=question, answer=answer, gt_steps=gt, params=params))

    # presence: object type appears visibly somewhere in the trajectory.
    seen_types: dict = {}
    for oid, step in sorted(ev.first_visible.items()):
        t = world.obj_type_of(oid)
        if t not in seen_types or step < seen_types[t]:
            seen_types[t] = step
    for t, step in sorted(seen_types.items()):
        template = rng.choice([
            f"Is there any {_name(t)} in this room?",
            f"Have you seen {_a_an(t)}?",
        ])
        emit("presence", template, "yes", [step], objType=t)

    # openState: container observed open in the replay log.
    for rid, step in sorted(ev.first_open.items()):
        t = world.obj_type_of(rid)
        if t not in unique:
            continue
        emit("openState", f"Was {_the(t)} open?", "yes", [step],
             containerType=t)

    # per-object pickup/put chronology for location tracing and counting.
    moves: dict = {}
    for step, oid, src in ev.pickups:
        moves.setdefault(oid, []).append(("pick", step, src))
    for step, oid, dst in ev.puts:
        moves.setdefault(oid, []).append(("put", step, dst))
    for oid in moves:
        moves[oid].sort(key=lambda m: m[1])

    # locationTrace: where an object came from, went to, or rests now.
    # Guards keep each question's answer unique: the referenced (object,
    # container) pairing must occur exactly once in the chronology.
    for oid in sorted(moves):
        t = world.obj_type_of(oid)
        if t not in unique:
            continue
        seq = moves[oid]
        put_dsts = [m[2] for m in seq if m[0] == "put"]
        pick_srcs = [m[2] for m in seq if m[0] == "pick"]
        for i in range(len(seq) - 1):
            kind, pstep, src = seq[i]
            kind2, qstep, dst = seq[i + 1]
            if kind != "pick" or kind2 != "put":
                continue
            if src == "floor" or world.obj_type_of(src) not in unique:
                continue
            if put_dsts.count(dst) == 1:
                emit("locationTrace",
                     f"Where was {_the(t)} before you put it to {_the(dst)}?",
                     _loc_name(src), [pstep, qstep],
                     objType=t, containerType=world.obj_type_of(dst),
                     variant="before")
            if pick_srcs.count(src) == 1:
                emit("locationTrace",
                     f"Where did you move {_the(t)} from {_the(src)}?",
                     _name(dst), [pstep, qstep],
                     objType=t, containerType=world.obj_type_of(src),
                     variant="from")
        last = seq[-1]
        if last[0] == "put":
            emit("locationTrace", f"Where is {_the(t)} now?",
                 _name(last[2]), [last[1]], objType=t, variant="now")

    # slicing: what was sliced, and what sat in a visible container then.
    sliced_types = {world.obj_type_of(o) for _, o in ev.slices}
    if len(ev.slices) >= 1 and len(sliced_types) == 1:
        step, oid = ev.slices[0]
        emit("slicing", "What did you slice?", _name(oid),
             [s for s, _ in ev.slices], objType=world.obj_type_of(oid))
    for step, oid in ev.slices:
        t = world.obj_type_of(oid)
        if t not in unique:
            continue
        for sstep, rid, contents in ev.recep_snapshots:
            rt = world.obj_type_of(rid)
            if sstep == step and contents and rt in unique and rid != oid:
                names = ", ".join(sorted(_name(c) for c in contents))
                emit("slicing",
                     f"What objects were {_in_on(rt)} {_the(rt)} when you "
                     f"slice {_the(t)}?",
                     names, [step], objType=t, containerType=rt)

    # containerContent: first sighting of a non-empty container.
    first_nonempty: dict = {}
    for step, rid, contents in ev.recep_snapshots:
        if contents and rid not in first_nonempty:
            first_nonempty[rid] = (step, contents)
    for rid, (step, contents) in sorted(first_nonempty.items()):
        rt = world.obj_type_of(rid)
        if rt not in unique:
            continue
        # Anchored at the container's first non-empty sighting, which is the
        # answer-step rule both answer paths share.
        names = ", ".join(sorted(_name(c) for c in contents))
        emit("containerContent",
             f"What objects were {_in_on(rt)} {_the(rt)}?",
             names, [step], containerType=rt)

    # putAction: container that received exactly one put.
    puts_by_recep: dict = {}
    for step, oid, rid in ev.puts:
        puts_by_recep.setdefault(rid, []).append((step, oid))
    for rid, entries in sorted(puts_by_recep.items()):
        rt = world.obj_type_of(rid)
        if len(entries) != 1 or rt not in unique:
            continue
        step, oid = entries[0]
        emit("putAction",
             f"What object did you put {_in_on(rt)} {_the(rt)}?",
             _name(oid), [step], containerType=rt)

    # finalState: where things ended up, per the last observation.
    final_obs = world.observe(ev.final_state, ev.final_step)
    final_entry = final_obs.metadata_entry()["object_log"]
    for rid in final_entry["receptacles"]:
        rt = world.obj_type_of(rid)
        if rt not in unique:
            continue
        contents = final_entry["recep_objs"][rid]
        for oid in contents:
            t = world.obj_type_of(oid)
            if t in unique:
                emit("finalState",
                     f"Is {_the(t)} {_in_on(rt)} {_the(rt)}?", "yes",
                     [ev.final_step], objType=t, containerType=rt,
                     variant="membership")
        absent = [t for t in sorted(unique)
                  if t in seen_types
                  and world.CATALOG[t]["pickupable"]
                  and not any(world.obj_type_of(c) == t for c in contents)]
        if absent:
            t = rng.choice(absent)
            emit("finalState", f"Is {_the(t)} {_in_on(rt)} {_the(rt)}?", "no",
                 [ev.final_step], objType=t, containerType=rt,
                 variant="membership")
        if contents:
            names = ", ".join(sorted(_name(c) for c in contents))
            emit("finalState",
                 f"What objects are {_in_on(rt)} {_the(rt)}?", names,
                 [ev.final_step], containerType=rt, variant="listing")
        emit("finalState",
             f"How many objects were {_in_on(rt)} {_the(rt)}?",
             str(len(contents)), [ev.final_step], containerType=rt,
             variant="count")

    # movementCount: object type picked up more than once.
    pickup_steps: dict = {}
    for step, oid, _src in ev.pickups:
        pickup_steps.setdefault(world.obj_type_of(oid), []).append(step)
    for t, steps in sorted(pickup_steps.items()):
        if len(steps) < 2:
            continue
        emit("movementCount", f"How many times did you move {_the(t)}?",
             str(len(steps)), steps, objType=t)

    for i, qa in enumerate(out):
        qa.qa_id = f"{traj.id}-qa-{i:04d}"
    return out

# ---------------------------------------------------------------------------
# Oracle path: recompute the answer by scanning the logged records only.
# ---------------------------------------------------------------------------

def _records(traj: Trajectory) -> list:
    return [(r.step, r.action, r.metadata["object_log"]) for r in traj.steps]


def _ids_of_type(log: dict, obj_type: str, key: str) -> list:
    return [o for o in log[key] if world.obj_type_of(o) == obj_type]


def _containment_events(records: list, oid: str) -> list:
    """Chronological (step, kind, recep) events for one object id, where kind
    is 'enter' (appears in a receptacle) or 'hold' (appears in inventory)."""
    events = []
    prev_recep = None
    prev_hand = False
    for step, _action, log in records:
        in_hand = oid in log["inven_obj"]
        recep = next((r for r, objs in log["recep_objs"].items()
                      if oid in objs), None)
        if in_hand and not prev_hand:
            events.append((step, "hold", None))
        if recep is not None and (prev_hand or recep != prev_recep):
            if prev_hand or prev_recep is None or recep != prev_recep:
                events.append((step, "enter", recep))
        if recep is not None:
            prev_recep = recep
        prev_hand = in_hand
    return events


def _unique_instance(records: list, obj_type: str):
    ids = set()
    for _step, _action, log in records:
        ids.update(_ids_of_type(log, obj_type, "visible"))
        ids.update(_ids_of_type(log, obj_type, "inven_obj"))
        for objs in log["recep_objs"].values():
            ids.update(o for o in objs if world.obj_type_of(o) == obj_type)
    return ids.pop() if len(ids) == 1 else None


def answer_from_metadata(traj: Trajectory, qa: QAInstance) -> str:
    """Independent ground-truth resolver over the logged step records."""
    records = _records(traj)
    p = qa.params
    t = qa.qa_type

    if t == "presence":
        for _step, _action, log in records:
            if _ids_of_type(log, p["objType"], "visible"):
                return "yes"
        return "no"

    if t == "openState":
        for _step, _action, log in records:
            if any(world.obj_type_of(o) == p["containerType"]
                   for o in log["isOpen"]):
                return "yes"
        return "no"

    if t == "locationTrace":
        oid = _unique_instance(records, p["objType"])
        if oid is None:
            return UNANSWERABLE
        events = _containment_events(records, oid)
        variant = p.get("variant")
        if variant == "now":
            last = next((e for e in reversed(events)), None)
            if last is None or last[1] != "enter":
                return UNANSWERABLE
            return _name(last[2])
        if variant == "before":
            # Anchor on a genuine put (an 'enter' directly after a 'hold');
            # the container sighting before that hold is the prior location.
            for i, (_s, kind, recep) in enumerate(events):
                if (kind == "enter" and i > 0 and events[i - 1][1] == "hold"
                        and world.obj_type_of(recep) == p["containerType"]):
                    prior = [e for e in events[:i - 1] if e[1] == "enter"]
                    return _name(prior[-1][2]) if prior else "the floor"
            return UNANSWERABLE
        if variant == "from":
            for i, (_s, kind, recep) in enumerate(events):
                if (kind == "enter"
                        and world.obj_type_of(recep) == p["containerType"]):
                    after = [e for e in events[i + 1:] if e[1] == "enter"]
                    return _name(after[0][2]) if after else UNANSWERABLE
            return UNANSWERABLE
        return UNANSWERABLE

    if t == "movementCount":
        total = 0
        prev_held: set = set()
        for _step, _action, log in records:
            held = set(_ids_of_type(log, p["objType"], "inven_obj"))
            total += len(held - prev_held)
            prev_held = held
        return str(total)

    if t == "slicing":
        sliced = []
        for step, action, _log in records:
            if action.startswith("SliceObject|"):
                sliced.append((step, action.split("|")[1]))
        if "containerType" not in p:
            types = {world.obj_type_of(o) for _s, o in sliced}
            if len(types) != 1:
                return UNANSWERABLE
            return _name(types.pop())
        target = next(((s, o) for s, o in sliced
                       if world.obj_type_of(o) == p["objType"]), None)
        if target is None:
            return UNANSWERABLE
        step = target[0]
        log = next(l for s, _a, l in records if s == step)
        recep = next((r for r in log["recep_objs"]
                      if world.obj_type_of(r) == p["containerType"]), None)
        if recep is None or not log["recep_objs"][recep]:
            return UNANSWERABLE
        return ", ".join(sorted(_name(o) for o in log["recep_objs"][recep]))

    if t == "containerContent":
        for _step, _action, log in records:
            for r in log["receptacles"]:
                if (world.obj_type_of(r) == p["containerType"]
                        and log["recep_objs"][r]):
                    return ", ".join(sorted(_name(o)
                                            for o in log["recep_objs"][r]))
        return UNANSWERABLE

    if t == "putAction":
        placed = []
        prev_held: set = set()
        for _step, _action, log in records:
            held = set(log["inven_obj"])
            for r, objs in log["recep_objs"].items():
                if world.obj_type_of(r) != p["containerType"]:
                    continue
                placed.extend(o for o in objs if o in prev_held)
            prev_held = held
        if len(placed) != 1:
            return UNANSWERABLE
        return _name(placed[0])

    if t == "finalState":
        log = records[-1][2]
        recep = next((r for r in log["receptacles"]
                      if world.obj_type_of(r) == p["containerType"]), None)
        if recep is None:
            return UNANSWERABLE
        contents = log["recep_objs"][recep]
        variant = p.get("variant")
        if variant == "membership":
            return ("yes" if any(world.obj_type_of(o) == p["objType"]
                                 for o in contents) else "no")
        if variant == "listing":
            if not contents:
                return UNANSWERABLE
            return ", ".join(sorted(_name(o) for o in contents))
        if variant == "count":
            return str(len(contents))
        return UNANSWERABLE

    return UNANSWERABLE


# ---------------------------------------------------------------------------
# Sampling and filtering
# ---------------------------------------------------------------------------

def sample_balanced(pool: list, target: int, seed: int = 0):
    """Inverse-frequency sampling over (qaType, objType) cells.

    Returns (sample, truncated) where truncated flags target > pool size.
    Small cells are drained round-robin so every cell is represented; no cell
    exceeds ceil(target / number-of-cells) + 2.
    """
    if target >= len(pool):
        return list(pool), target > len(pool)
    cells: dict = {}
    for qa in pool:
        key = (qa.qa_type, qa.params.get("objType",
                                         qa.params.get("containerType", "")))
        cells.setdefault(key, []).append(qa)
    rng = random.Random(seed)
    for key in sorted(cells):
        rng.shuffle(cells[key])
    cap = math.ceil(target / len(cells)) + 2
    sample: list = []
    order = sorted(cells)
    taken = {key: 0 for key in order}
    while len(sample) < target:
        progressed = False
        for key in order:
            if len(sample) >= target:
                break
            if taken[key] >= cap or taken[key] >= len(cells[key]):
                continue
            sample.append(cells[key][taken[key]])
            taken[key] += 1
            progressed = True
        if not progressed:
            cap += 1  # every cell hit its cap; relax to fill the target
    return sample, False


class OracleValidator:
    """Built-in validator: answers by scanning the replay log."""
    name = "oracle"

    def answer(self, traj: Trajectory, qa: QAInstance) -> str:
        return answer_from_metadata(traj, qa)


class CallableValidator:
    """Wraps any (traj, qa) -> str function, e.g. a wire-protocol client."""

    def __init__(self, name: str, fn):
        self.name = name
        self._fn = fn

    def answer(self, traj: Trajectory, qa: QAInstance) -> str:
        return self._fn(traj, qa)


def _normalize(answer: str) -> str:
    return " ".join(answer.strip().lower().split())


def filter_answerable(trajs: dict, qas: list, validators: list):
    """Keep a QA iff at least one validator answers it correctly.

    trajs maps trajectory id -> Trajectory. Returns (kept, dropped, verdicts)
    where verdicts is a list of audit records keyed by QA id; a validator
    failure is recorded as an incorrect verdict, never an exception.
    """
    if not validators:
        raise ConfigError("at least one validator is required")
    kept, dropped, verdicts = [], [], []
    for qa in qas:
        any_correct = False
        for v in validators:
            try:
                model_answer = v.answer(trajs[qa.trajectory_id], qa)
                correct = _normalize(model_answer) == _normalize(qa.answer)
                note = ""
            except Exception as exc:  # transport/validator failure
                model_answer, correct, note = "", False, repr(exc)
            verdicts.append({"qaId": qa.qa_id, "validatorName": v.name,
                             "correct": correct, "modelAnswer": model_answer,
                             **({"error": note} if note else {})})
            any_correct = any_correct or correct
        (kept if any_correct else dropped).append(qa)
    return kept, dropped, verdicts
