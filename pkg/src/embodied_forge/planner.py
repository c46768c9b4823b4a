"""Task templates and search-based planning over the symbolic household world.

Plans are sequences of macro actions (GotoObject, PickupObject, ...); the
search applies them through the environment itself, so every returned plan is
sound by construction. Cost is lexicographic (operator count, travel
distance, action strings), which makes plans optimal in high-level operator
count and fully deterministic.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import world
from .errors import Unreachable
from .world import Action, Env, WorldState, display_name, obj_type_of

TEMPLATE_NAMES = [
    "pick_and_place_simple",
    "pick_two_obj_and_place",
    "pick_and_place_with_movable_recep",
    "pick_clean_then_place",
    "pick_heat_then_place",
    "pick_cool_then_place",
    "look_at_obj_in_light",
]

# Effect each pick-X-then-place template requires from a fixture visit.
TEMPLATE_EFFECTS = {"pick_clean_then_place": "clean",
                    "pick_heat_then_place": "heat",
                    "pick_cool_then_place": "cool"}
_EFFECT_FIXTURE = TEMPLATE_EFFECTS
_EFFECT_FLAG = {"clean": "is_clean", "heat": "is_heated", "cool": "is_cooled"}


def _in_on(recep_type: str) -> str:
    return "in" if world.CATALOG[recep_type]["openable"] else "on"


@dataclass
class GroundedGoal:
    template: str
    params: dict
    goal_text: str
    predicate: Callable[[WorldState], bool] = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        return {"template": self.template, "params": self.params,
                "goalText": self.goal_text}


@dataclass
class Plan:
    goal: GroundedGoal
    actions: list  # macro Action list


def _fixture_receptacles(state: WorldState) -> list:
    return sorted(o.id for o in state.objects.values()
                  if o.receptacle and not o.pickupable)


def _pickupables(state: WorldState) -> list:
    return sorted(o.id for o in state.objects.values() if o.pickupable)


def ground(template: str, params: dict) -> GroundedGoal:
    """Build a grounded goal (with predicate and NL text) from slot bindings."""
    if template == "pick_and_place_simple":
        obj, recep = params["pickObject"], params["receptacle"]
        sliced = bool(params.get("sliced"))
        adjective = "sliced " if sliced else ""
        text = (f"Put the {adjective}{display_name(obj_type_of(obj))} "
                f"{_in_on(obj_type_of(recep))} the {display_name(obj_type_of(recep))}")
        pred = lambda s: (obj in s.objects and recep in s.objects
                          and s.objects[obj].parent == recep
                          and (not sliced or s.objects[obj].is_sliced))
    elif template == "pick_two_obj_and_place":
        o1, o2, recep = params["pickObjects"][0], params["pickObjects"][1], params["receptacle"]
        text = (f"Put two {display_name(obj_type_of(o1))}s "
                f"{_in_on(obj_type_of(recep))} the {display_name(obj_type_of(recep))}")
        pred = lambda s: all(o in s.objects and s.objects[o].parent == recep
                             for o in (o1, o2))
    elif template == "pick_and_place_with_movable_recep":
        obj, mrecep, recep = params["pickObject"], params["movableReceptacle"], params["receptacle"]
        text = (f"Put the {display_name(obj_type_of(obj))} in the "
                f"{display_name(obj_type_of(mrecep))} and the "
                f"{display_name(obj_type_of(mrecep))} "
                f"{_in_on(obj_type_of(recep))} the {display_name(obj_type_of(recep))}")
        pred = lambda s: (obj in s.objects and mrecep in s.objects
                          and s.objects[obj].parent == mrecep
                          and s.objects[mrecep].parent == recep)
    elif template in _EFFECT_FIXTURE:
        obj, recep = params["pickObject"], params["receptacle"]
        flag = _EFFECT_FLAG[_EFFECT_FIXTURE[template]]
        adjective = {"is_clean": "clean", "is_heated": "heated", "is_cooled": "chilled"}[flag]
        text = (f"Put a {adjective} {display_name(obj_type_of(obj))} "
                f"{_in_on(obj_type_of(recep))} the {display_name(obj_type_of(recep))}")
        pred = lambda s: (obj in s.objects and s.objects[obj].parent == recep
                          and getattr(s.objects[obj], flag))
    elif template == "look_at_obj_in_light":
        obj, lamp = params["pickObject"], params["toggleTarget"]
        text = (f"Look at the {display_name(obj_type_of(obj))} under the "
                f"{display_name(obj_type_of(lamp))}")
        pred = lambda s: (obj in s.objects and s.objects[obj].parent == "inventory"
                          and lamp in s.visible_ids())
    else:
        raise ValueError(f"unknown template {template!r}")
    return GroundedGoal(template=template, params=params, goal_text=text, predicate=pred)


def sample_goal(template: str, state: WorldState, rng) -> Optional[GroundedGoal]:
    """Bind template slots against the current scene; None if not satisfiable."""
    receps = _fixture_receptacles(state)
    picks = [o for o in _pickupables(state)
             if not state.objects[o].receptacle]  # keep movable receps distinct
    if template == "pick_and_place_simple":
        pool = [o for o in _pickupables(state)]
        if not pool or not receps:
            return None
        obj = rng.choice(pool)
        targets = [r for r in receps if state.objects[obj].parent != r]
        if not targets:
            return None
        params = {"pickObject": obj, "receptacle": rng.choice(targets)}
        knives = [o for o in _pickupables(state)
                  if obj_type_of(o) in world.KNIFE_TYPES]
        if (state.objects[obj].sliceable and not state.objects[obj].is_sliced
                and knives and rng.random() < 0.5):
            params["sliced"] = True
        return ground(template, params)
    if template == "pick_two_obj_and_place":
        by_type: dict = {}
        for o in picks:
            by_type.setdefault(obj_type_of(o), []).append(o)
        pairs = sorted(t for t, os in by_type.items() if len(os) >= 2)
        if not pairs or not receps:
            return None
        t = rng.choice(pairs)
        recep = rng.choice(receps)
        return ground(template, {"pickObjects": by_type[t][:2], "receptacle": recep})
    if template == "pick_and_place_with_movable_recep":
        mreceps = sorted(o.id for o in state.objects.values()
                         if o.receptacle and o.pickupable)
        cands = [o for o in picks if o not in mreceps]
        if not mreceps or not cands or not receps:
            return None
        return ground(template, {"pickObject": rng.choice(cands),
                                 "movableReceptacle": rng.choice(mreceps),
                                 "receptacle": rng.choice(receps)})
    if template in _EFFECT_FIXTURE:
        effect = _EFFECT_FIXTURE[template]
        stations = [o.id for o in state.objects.values()
                    if world.CATALOG[o.obj_type].get("effect") == effect
                    and not o.pickupable]
        if not stations or not picks or not receps:
            return None
        obj = rng.choice(picks)
        targets = [r for r in receps
                   if world.CATALOG[state.objects[r].obj_type].get("effect") != effect]
        if not targets:
            return None
        return ground(template, {"pickObject": obj, "receptacle": rng.choice(targets)})
    if template == "look_at_obj_in_light":
        lamps = sorted(o.id for o in state.objects.values()
                       if o.obj_type in world.LAMP_TYPES)
        if not lamps or not picks:
            return None
        return ground(template, {"pickObject": rng.choice(picks),
                                 "toggleTarget": rng.choice(lamps)})
    raise ValueError(f"unknown template {template!r}")


def check_goal(state: WorldState, goal: GroundedGoal) -> bool:
    try:
        return bool(goal.predicate(state))
    except KeyError:
        return False


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

# Sorts below every character the action grammar can produce.
_SEQ_SEP = "\x1f"


def _heuristic(goal: GroundedGoal) -> Callable[[WorldState], int]:
    """Admissible, consistent lower bound on remaining operator count.

    Counts only the pick/put/slice operators each unsatisfied goal clause
    still requires (never gotos, which may be unnecessary), so it never
    overestimates; every operator changes the bound by at most one, which
    keeps it consistent. It is zero on every goal state, so returned plans
    stay optimal in operator count.
    """
    t, p = goal.template, goal.params

    def misplaced(o, recep):
        # A put (1) plus a pickup when the object is not already held.
        if o is None or o.parent == recep:
            return 0
        return 1 if o.parent == "inventory" else 2

    if t == "pick_and_place_simple":
        obj, recep = p["pickObject"], p["receptacle"]
        sliced = bool(p.get("sliced"))

        def h(s):
            o = s.objects.get(obj)
            n = misplaced(o, recep)
            if sliced and o is not None and not o.is_sliced:
                n += 1
            return n
    elif t == "pick_two_obj_and_place":
        o1, o2 = p["pickObjects"][0], p["pickObjects"][1]
        recep = p["receptacle"]

        def h(s):
            return (misplaced(s.objects.get(o1), recep)
                    + misplaced(s.objects.get(o2), recep))
    elif t == "pick_and_place_with_movable_recep":
        obj, mrecep, recep = (p["pickObject"], p["movableReceptacle"],
                              p["receptacle"])

        def h(s):
            return (misplaced(s.objects.get(obj), mrecep)
                    + misplaced(s.objects.get(mrecep), recep))
    elif t in _EFFECT_FIXTURE:
        obj, recep = p["pickObject"], p["receptacle"]
        flag = _EFFECT_FLAG[_EFFECT_FIXTURE[t]]

        def h(s):
            o = s.objects.get(obj)
            if o is None:
                return 0
            if getattr(o, flag):
                return misplaced(o, recep)
            # Put into an effect fixture, pick back up, final put -- plus an
            # initial pickup when not already held.
            return 3 if o.parent == "inventory" else 4
    elif t == "look_at_obj_in_light":
        obj = p["pickObject"]

        def h(s):
            o = s.objects.get(obj)
            return 0 if o is not None and o.parent == "inventory" else 1
    else:
        def h(s):
            return 0
    return h


def _state_key(state: WorldState) -> tuple:
    # Every clone preserves the object table's insertion order, so keys built
    # from states of the same search are comparable without re-sorting.
    objs = tuple((o.id, o.parent, o.is_open, o.is_sliced, o.is_clean,
                  o.is_heated, o.is_cooled) for o in state.objects.values())
    return (state.agent.cell, state.agent.heading, objs)


def candidate_actions(state: WorldState, layout: dict = None,
                      visible=None, ordered_ids: list = None) -> list:
    """Grounded macro actions worth trying, in canonical (deterministic) order.

    Interactions are limited to objects on the agent's own cell or the faced
    cell (the geometry GotoObject establishes); the environment re-validates
    every precondition when the action is applied. `layout` / `visible`
    optionally supply precomputed `state.layout()` / `state.visible_ids()`
    results for the search hot path.
    """
    hx, hy = world.HEADING_VEC[state.agent.heading]
    near = {state.agent.cell, (state.agent.cell[0] + hx, state.agent.cell[1] + hy)}
    if layout is None:
        layout = state.layout()
    visible = set(state.visible_ids(layout) if visible is None else visible)
    holding = None
    for o in state.objects.values():
        if o.parent == "inventory" and (holding is None or o.id < holding):
            holding = o.id
    knife_held = holding is not None and obj_type_of(holding) in world.KNIFE_TYPES
    # Bucket per verb while iterating ids in sorted order; concatenating the
    # buckets yields the encoded-string sort order directly ("CloseObject" <
    # "GotoObject" < "OpenObject" < "PickupObject" < "PutObject" <
    # "SliceObject", and within a verb the target/receptacle id ascends).
    close, goto, open_, pickup, put, slice_ = [], [], [], [], [], []
    if ordered_ids is None:
        ordered_ids = sorted(state.objects)
    for oid in ordered_ids:
        obj = state.objects[oid]
        if obj.parent != "inventory":
            goto.append(Action("GotoObject", target=oid))
        if obj.parent == "inventory" or layout[oid][0] not in near:
            continue
        if oid not in visible:
            continue
        if obj.openable:
            (close if obj.is_open else open_).append(
                Action("CloseObject" if obj.is_open else "OpenObject", target=oid))
        if obj.pickupable and holding is None:
            pickup.append(Action("PickupObject", target=oid))
        if obj.sliceable and not obj.is_sliced and knife_held:
            slice_.append(Action("SliceObject", target=oid))
        if (holding is not None and obj.receptacle
                and oid != holding and state.accepts(oid)):
            put.append(Action("PutObject", target=holding, receptacle=oid))
    return close + goto + open_ + pickup + put + slice_


def plan(state: WorldState, goal: GroundedGoal, max_expansions: int = 100_000) -> Plan:
    """A* over macro actions; raises Unreachable when no plan exists."""
    if check_goal(state, goal):
        return Plan(goal=goal, actions=[])
    start = state.clone()
    counter = 0
    h = _heuristic(goal)
    # Priority: (operators so far + heuristic, travel distance, actions).
    # The action strings are kept as one _SEQ_SEP-joined string; since the
    # separator sorts below every character of the action grammar and equal
    # operator counts mean equal segment counts, string order matches the
    # tuple-of-strings order.
    start_key = _state_key(start)
    obj_index = {oid: i for i, oid in enumerate(start.objects)}
    ordered_ids = sorted(start.objects)
    frontier = [((h(start), 0, ""), counter, start, start_key, 0)]
    best = {start_key: (0, 0, "")}
    expansions = 0
    while frontier:
        (_, dist, seq), _, cur, key, n_ops = heapq.heappop(frontier)
        if best.get(key, (n_ops, dist, seq)) < (n_ops, dist, seq):
            continue
        objs_part = key[2]
        expansions += 1
        if expansions > max_expansions:
            break
        layout = cur.layout()
        visible = cur.visible_ids(layout)
        # Pose of a goto depends only on the target's effective cell, so
        # targets sharing a cell (e.g. on one fixture) resolve once.
        goto_memo: dict = {}
        for action in candidate_actions(cur, layout, visible, ordered_ids):
            if action.verb == "GotoObject":
                tcell = layout[action.target][0]
                if tcell in goto_memo:
                    pose = goto_memo[tcell]
                else:
                    pose = world.goto_pose(cur, action.target, tcell=tcell)
                    goto_memo[tcell] = pose
                if pose is None:
                    continue
                cell, heading, step_dist = pose
                if (cell, heading) == (cur.agent.cell, cur.agent.heading):
                    continue
                new_cost = (n_ops + 1, dist + step_dist,
                            seq + _SEQ_SEP + action.encode())
                nkey = (cell, heading, objs_part)
                if nkey in best and best[nkey] <= new_cost:
                    continue
                nxt = cur.clone(copy_objects=False)
                nxt.agent.cell = cell
                nxt.agent.heading = heading
            else:
                # Copy-on-write successor: macro interactions only ever mutate
                # the targeted object, so share the rest of the object table.
                nxt = cur.clone(copy_objects=False)
                nxt.objects = dict(cur.objects)
                nxt.objects[action.target] = nxt.objects[action.target].copy()
                if Env(nxt).apply(action, visible=visible) != world.FAILURE_NONE:
                    continue
                new_cost = (n_ops + 1, dist, seq + _SEQ_SEP + action.encode())
                o = nxt.objects[action.target]
                i = obj_index[action.target]
                nkey = (key[0], key[1],
                        objs_part[:i]
                        + ((o.id, o.parent, o.is_open, o.is_sliced, o.is_clean,
                            o.is_heated, o.is_cooled),)
                        + objs_part[i + 1:])
                if nkey in best and best[nkey] <= new_cost:
                    continue
            if check_goal(nxt, goal):
                return Plan(goal=goal,
                            actions=[_decode(a) for a in
                                     new_cost[2].split(_SEQ_SEP) if a])
            best[nkey] = new_cost
            counter += 1
            priority = (new_cost[0] + h(nxt), new_cost[1], new_cost[2])
            heapq.heappush(frontier, (priority, counter, nxt, nkey,
                                      new_cost[0]))
    raise Unreachable(f"no plan for {goal.goal_text!r}")


def _decode(encoded: str) -> Action:
    return world.parse_action(encoded)


def simulate(state: WorldState, p: Plan, goal: Optional[GroundedGoal] = None) -> bool:
    """Replay a plan's macro actions on a copy; True iff no failure and goal holds."""
    goal = goal or p.goal
    test = state.clone()
    env = Env(test)
    for action in p.actions:
        if env.step(action).failure:
            return False
    return check_goal(test, goal)
