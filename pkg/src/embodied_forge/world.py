"""Deterministic symbolic household environment.

Grid-based scenes with fixtures (counters, fridges, lamps, ...) and movable
objects, discrete agent navigation plus an optional continuous arm with a
magnet-sphere pickup. All transitions are pure functions of (state, action);
replaying the same action list from the same seed reproduces every
observation byte-for-byte.
"""
from __future__ import annotations

import configparser
import copy
import io
import json
import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .errors import ConfigError

HEADINGS = ["N", "E", "S", "W"]
HEADING_VEC = {"N": (0, -1), "E": (1, 0), "S": (0, 1), "W": (-1, 0)}

BAND_HEIGHT = {0: 0.1, 1: 0.9, 2: 1.5}
SHOULDER_HEIGHT = 0.9

DEFAULT_VISIBILITY_RANGE = 3
DEFAULT_ARM_REACH = 1.0
DEFAULT_ARM_STEP_LIMIT = 0.05
DEFAULT_MAGNET_RADIUS = 0.4
DEFAULT_FIXTURE_CAPACITY = 6


def _load_catalog() -> dict:
    with resources.files("embodied_forge.data").joinpath("object_catalog.json").open() as f:
        return json.load(f)


CATALOG = _load_catalog()

KNIFE_TYPES = {t for t, v in CATALOG.items() if v.get("knife")}
LAMP_TYPES = {t for t, v in CATALOG.items() if v.get("lamp")}
FIXTURE_TYPES = {t for t, v in CATALOG.items() if not v["pickupable"]}
SURFACE_RECEPTACLES = {t for t, v in CATALOG.items()
                       if v["receptacle"] and not v["openable"] and not v["pickupable"]}
OPENABLE_RECEPTACLES = {t for t, v in CATALOG.items() if v["receptacle"] and v["openable"]}
MOVABLE_RECEPTACLES = {t for t, v in CATALOG.items() if v["receptacle"] and v["pickupable"]}
PICKUPABLE_TYPES = {t for t, v in CATALOG.items() if v["pickupable"]}
SLICEABLE_TYPES = {t for t, v in CATALOG.items() if v["sliceable"]}


def obj_type_of(obj_id: str) -> str:
    return obj_id.rsplit("_", 1)[0]


def display_name(obj_type: str) -> str:
    """CamelCase catalog name -> natural-language name ('CounterTop' -> 'counter top')."""
    return re.sub(r"(?<!^)(?=[A-Z])", " ", obj_type).lower()


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------

NAV_VERBS = ("MoveAhead", "RotateLeft", "RotateRight")
VERBS = NAV_VERBS + ("GotoObject", "PickupObject", "PutObject", "OpenObject",
                     "CloseObject", "SliceObject", "MoveArm", "PickupMagnet",
                     "ReleaseMagnet", "Init")


@dataclass(frozen=True)
class Action:
    verb: str
    target: Optional[str] = None
    receptacle: Optional[str] = None
    delta: Optional[tuple] = None

    def encode(self) -> str:
        if self.verb == "PutObject":
            return f"PutObject|{self.target}|{self.receptacle}"
        if self.verb == "MoveArm":
            dx, dy, dz = self.delta
            return f"MoveArm|{dx:.4f}|{dy:.4f}|{dz:.4f}"
        if self.target is not None:
            return f"{self.verb}|{self.target}"
        return self.verb


def parse_action(text: str) -> Action:
    """Parse the canonical action grammar, e.g. 'PickupObject|Apple_1'."""
    parts = text.strip().split("|")
    verb = parts[0]
    if verb not in VERBS:
        raise ValueError(f"unknown action verb: {verb!r}")
    if verb == "PutObject":
        if len(parts) != 3:
            raise ValueError(f"PutObject needs object and receptacle: {text!r}")
        return Action("PutObject", target=parts[1], receptacle=parts[2])
    if verb == "MoveArm":
        if len(parts) != 4:
            raise ValueError(f"MoveArm needs three deltas: {text!r}")
        return Action("MoveArm", delta=tuple(float(p) for p in parts[1:4]))
    if verb in ("GotoObject", "PickupObject", "OpenObject", "CloseObject",
                "SliceObject", "PickupMagnet"):
        if len(parts) != 2:
            raise ValueError(f"{verb} needs a target id: {text!r}")
        return Action(verb, target=parts[1])
    if len(parts) != 1:
        raise ValueError(f"{verb} takes no arguments: {text!r}")
    return Action(verb)


# ---------------------------------------------------------------------------
# Scene configuration
# ---------------------------------------------------------------------------

@dataclass
class SceneConfig:
    width: int = 10
    height: int = 10
    agent_start: tuple = (0, 0, "S")
    fixtures: list = field(default_factory=list)  # (id, type, (x, y))
    object_counts: dict = field(default_factory=dict)
    arm_reach: float = DEFAULT_ARM_REACH
    arm_step_limit: float = DEFAULT_ARM_STEP_LIMIT
    visibility_range: int = DEFAULT_VISIBILITY_RANGE
    fixture_capacity: int = DEFAULT_FIXTURE_CAPACITY
    magnet_radius: float = DEFAULT_MAGNET_RADIUS
    low_level: bool = False
    version: int = 1

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp["scene"] = {
            "version": str(self.version),
            "width": str(self.width),
            "height": str(self.height),
            "agent": "%d,%d,%s" % self.agent_start,
            "arm_reach": repr(self.arm_reach),
            "arm_step_limit": repr(self.arm_step_limit),
            "visibility_range": str(self.visibility_range),
            "fixture_capacity": str(self.fixture_capacity),
            "magnet_radius": repr(self.magnet_radius),
            "low_level": str(self.low_level).lower(),
        }
        cp["fixtures"] = {fid: f"{ftype} @ {x},{y}" for fid, ftype, (x, y) in self.fixtures}
        cp["objects"] = {t: str(n) for t, n in self.object_counts.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "SceneConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        sc = cp["scene"]
        ax, ay, heading = sc["agent"].split(",")
        fixtures = []
        for fid, spec in cp["fixtures"].items():
            ftype, pos = spec.split("@")
            x, y = pos.strip().split(",")
            fixtures.append((_restore_case(fid), ftype.strip(), (int(x), int(y))))
        objects = {_restore_case(t): int(n) for t, n in cp["objects"].items()}
        return cls(
            width=int(sc["width"]),
            height=int(sc["height"]),
            agent_start=(int(ax), int(ay), heading.strip()),
            fixtures=fixtures,
            object_counts=objects,
            arm_reach=float(sc.get("arm_reach", DEFAULT_ARM_REACH)),
            arm_step_limit=float(sc.get("arm_step_limit", DEFAULT_ARM_STEP_LIMIT)),
            visibility_range=int(sc.get("visibility_range", DEFAULT_VISIBILITY_RANGE)),
            fixture_capacity=int(sc.get("fixture_capacity", DEFAULT_FIXTURE_CAPACITY)),
            magnet_radius=float(sc.get("magnet_radius", DEFAULT_MAGNET_RADIUS)),
            low_level=sc.get("low_level", "false") == "true",
            version=int(sc.get("version", 1)),
        )


_TYPE_BY_LOWER = {t.lower(): t for t in CATALOG}


def _restore_case(name: str) -> str:
    # configparser lowercases keys; catalog names are CamelCase.
    base, sep, idx = name.rpartition("_")
    if sep and base.lower() in _TYPE_BY_LOWER:
        return _TYPE_BY_LOWER[base.lower()] + "_" + idx
    return _TYPE_BY_LOWER.get(name.lower(), name)


# ---------------------------------------------------------------------------
# World state
# ---------------------------------------------------------------------------

@dataclass
class ObjectInstance:
    id: str
    obj_type: str
    pickupable: bool
    openable: bool
    sliceable: bool
    receptacle: bool
    is_open: bool = False
    is_sliced: bool = False
    is_clean: bool = False
    is_heated: bool = False
    is_cooled: bool = False
    parent: str = "floor"  # fixture/movable-receptacle id, "floor" or "inventory"
    cell: tuple = (0, 0)
    band: int = 1

    def to_dict(self) -> dict:
        return {
            "id": self.id, "objType": self.obj_type,
            "flags": {"pickupable": self.pickupable, "openable": self.openable,
                      "sliceable": self.sliceable, "receptacle": self.receptacle},
            "isOpen": self.is_open, "isSliced": self.is_sliced,
            "isClean": self.is_clean, "isHeated": self.is_heated,
            "isCooled": self.is_cooled,
            "parent": self.parent, "cell": list(self.cell), "band": self.band,
        }

    def copy(self) -> "ObjectInstance":
        # Hot path: search clones millions of instances, so bypass the
        # generic copy machinery.
        new = object.__new__(ObjectInstance)
        new.__dict__.update(self.__dict__)
        return new

    __copy__ = copy


@dataclass
class AgentPose:
    cell: tuple = (0, 0)
    heading: str = "S"
    arm_offset: tuple = (0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return {"cell": list(self.cell), "heading": self.heading,
                "armOffset": list(self.arm_offset)}


class WorldState:
    def __init__(self, scene: SceneConfig):
        self.scene = scene
        self.objects: dict[str, ObjectInstance] = {}
        self.agent = AgentPose(cell=scene.agent_start[:2], heading=scene.agent_start[2])
        self.blocked: set = set()

    def clone(self, copy_objects: bool = True) -> "WorldState":
        """Copy this state. With copy_objects=False the object table is shared
        (read-only); callers must clone fully before mutating any object."""
        other = WorldState.__new__(WorldState)
        other.scene = self.scene
        if copy_objects:
            other.objects = {k: v.copy() for k, v in self.objects.items()}
        else:
            other.objects = self.objects
        pose = object.__new__(AgentPose)
        pose.__dict__.update(self.agent.__dict__)
        other.agent = pose
        other.blocked = self.blocked
        return other

    # -- queries ----------------------------------------------------------
    def inventory(self) -> list:
        return sorted(o.id for o in self.objects.values() if o.parent == "inventory")

    def contents(self, recep_id: str) -> list:
        return sorted(o.id for o in self.objects.values() if o.parent == recep_id)

    def effective_cell(self, obj_id: str) -> tuple:
        """Grid cell an object occupies, following containment up to a fixture/floor."""
        obj = self.objects[obj_id]
        seen = set()
        while obj.parent not in ("floor", "inventory") and obj.id not in seen:
            seen.add(obj.id)
            obj = self.objects[obj.parent]
        if obj.parent == "inventory":
            return self.agent.cell
        return obj.cell

    def inside_closed(self, obj_id: str) -> bool:
        obj = self.objects[obj_id]
        while obj.parent not in ("floor", "inventory"):
            parent = self.objects[obj.parent]
            if parent.openable and not parent.is_open:
                return True
            obj = parent
        return False

    def accepts(self, recep_id: str) -> bool:
        """Receptacle can receive an object right now (open or a surface)."""
        recep = self.objects[recep_id]
        return recep.receptacle and (recep.is_open or not recep.openable)

    def object_position(self, obj_id: str) -> tuple:
        """Continuous 3D position (cell center + band height) used by the arm."""
        obj = self.objects[obj_id]
        x, y = self.effective_cell(obj_id)
        return (x + 0.5, y + 0.5, BAND_HEIGHT[obj.band])

    def arm_endpoint(self) -> tuple:
        ax, ay = self.agent.cell
        dx, dy, dz = self.agent.arm_offset
        return (ax + 0.5 + dx, ay + 0.5 + dy, SHOULDER_HEIGHT + dz)

    def layout(self) -> dict:
        """id -> (effective cell, hidden-by-closed-ancestor) for every object,
        in one memoized pass over the containment forest (search hot path)."""
        objects = self.objects
        resolved: dict = {}
        agent_cell = self.agent.cell

        def resolve(oid: str) -> tuple:
            got = resolved.get(oid)
            if got is not None:
                return got
            obj = objects[oid]
            parent_id = obj.parent
            if parent_id == "floor":
                got = (obj.cell, False)
            elif parent_id == "inventory":
                got = (agent_cell, False)
            else:
                resolved[oid] = (obj.cell, False)  # cycle guard
                parent = objects[parent_id]
                cell, hidden = resolve(parent_id)
                got = (cell, hidden or (parent.openable and not parent.is_open))
            resolved[oid] = got
            return got

        for oid in objects:
            resolve(oid)
        return resolved

    def visible_ids(self, layout: Optional[dict] = None) -> list:
        rng2 = self.scene.visibility_range ** 2
        hx, hy = HEADING_VEC[self.agent.heading]
        ax, ay = self.agent.cell
        if layout is None:
            layout = self.layout()
        out = []
        for oid, obj in self.objects.items():
            if obj.parent == "inventory":
                continue
            (ox, oy), hidden = layout[oid]
            if hidden:
                continue
            rx, ry = ox - ax, oy - ay
            if rx * rx + ry * ry > rng2:
                continue
            if rx * hx + ry * hy >= abs(rx * -hy + ry * hx):
                out.append(oid)
        return sorted(out)

    def containment_ok(self) -> bool:
        """Parent links form a forest rooted at floor/inventory/fixtures (no cycles)."""
        for oid, obj in self.objects.items():
            seen = set()
            cur = obj
            while cur.parent not in ("floor", "inventory"):
                if cur.parent not in self.objects:
                    return False
                if not self.objects[cur.parent].receptacle:
                    return False
                if cur.id in seen:
                    return False
                seen.add(cur.id)
                cur = self.objects[cur.parent]
        return True

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "agent": self.agent.to_dict(),
            "objects": {oid: self.objects[oid].to_dict() for oid in sorted(self.objects)},
            "scene": {"width": self.scene.width, "height": self.scene.height,
                      "version": self.scene.version},
        }

    def serialize(self) -> str:
        return canonical_json(self.to_dict())


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Observation / metadata
# ---------------------------------------------------------------------------

@dataclass
class Observation:
    step: int
    visible: list
    inventory: list
    open_states: dict
    recep_contents: dict

    def metadata_entry(self) -> dict:
        """Per-step metadata record with the canonical replay-log schema."""
        return {
            "img_idx": self.step + 1,
            "img_filename": "%09d.png" % (self.step + 1),
            "step": self.step,
            "object_log": {
                "visible": self.visible,
                "pickupable": [o for o in self.visible
                               if CATALOG[obj_type_of(o)]["pickupable"]],
                "isOpen": sorted(k for k, v in self.open_states.items() if v),
                "inven_obj": self.inventory,
                "receptacles": sorted(self.recep_contents),
                "recep_objs": {k: self.recep_contents[k]
                               for k in sorted(self.recep_contents)},
            },
        }


def observe(state: WorldState, step: int = 0) -> Observation:
    visible = state.visible_ids()
    open_states = {oid: state.objects[oid].is_open for oid in visible
                   if state.objects[oid].openable}
    recep_contents = {}
    for oid in visible:
        obj = state.objects[oid]
        if obj.receptacle and state.accepts(oid):
            recep_contents[oid] = state.contents(oid)
    return Observation(step=step, visible=visible, inventory=state.inventory(),
                       open_states=open_states, recep_contents=recep_contents)


# ---------------------------------------------------------------------------
# Scene initialization
# ---------------------------------------------------------------------------

def init_scene(seed: int, scene: SceneConfig) -> WorldState:
    """Deterministically instantiate a scene: same (seed, spec) => identical state."""
    state = WorldState(scene)
    if scene.agent_start[2] not in HEADINGS:
        raise ConfigError(f"bad agent heading {scene.agent_start[2]!r}")
    occupied = set()
    for fid, ftype, (x, y) in scene.fixtures:
        if ftype not in CATALOG or CATALOG[ftype]["pickupable"]:
            raise ConfigError(f"{ftype} is not a fixture type")
        if not (0 <= x < scene.width and 0 <= y < scene.height):
            raise ConfigError(f"fixture {fid} out of bounds at {(x, y)}")
        if (x, y) in occupied or (x, y) == tuple(scene.agent_start[:2]):
            raise ConfigError(f"fixture {fid} overlaps at {(x, y)}")
        occupied.add((x, y))
        info = CATALOG[ftype]
        state.objects[fid] = ObjectInstance(
            id=fid, obj_type=ftype, pickupable=False, openable=info["openable"],
            sliceable=False, receptacle=info["receptacle"], cell=(x, y),
            band=info["band"])
    state.blocked = frozenset(occupied)

    rng = random.Random(seed)
    receptacle_ids = [fid for fid, ftype, _ in scene.fixtures
                      if CATALOG[ftype]["receptacle"]]
    capacity = {rid: scene.fixture_capacity for rid in receptacle_ids}
    free_cells = [(x, y) for y in range(scene.height) for x in range(scene.width)
                  if (x, y) not in occupied and (x, y) != tuple(scene.agent_start[:2])]

    total_slots = sum(capacity.values()) + len(free_cells)
    n_objects = sum(scene.object_counts.values())
    if n_objects > total_slots:
        raise ConfigError(f"{n_objects} objects exceed {total_slots} placement slots")

    for obj_type, count in scene.object_counts.items():
        if obj_type not in CATALOG or not CATALOG[obj_type]["pickupable"]:
            raise ConfigError(f"{obj_type} is not a placeable object type")
        info = CATALOG[obj_type]
        for i in range(1, count + 1):
            oid = f"{obj_type}_{i}"
            parents = sorted(rid for rid in receptacle_ids if capacity[rid] > 0)
            slots = parents + (["floor"] if free_cells else [])
            if not slots:
                raise ConfigError("no placement slot left for " + oid)
            parent = rng.choice(slots)
            if parent == "floor":
                cell = rng.choice(sorted(free_cells))
                free_cells.remove(cell)
                band = 0
            else:
                capacity[parent] -= 1
                cell = state.objects[parent].cell
                band = state.objects[parent].band
            state.objects[oid] = ObjectInstance(
                id=oid, obj_type=obj_type, pickupable=True,
                openable=info["openable"], sliceable=info["sliceable"],
                receptacle=info["receptacle"], parent=parent, cell=cell, band=band)
    return state


def random_scene_config(seed: int, max_objects: int = 10, width: int = 11,
                        height: int = 11, low_level: bool = False) -> SceneConfig:
    """Sample a solvable household scene. Deterministic in the seed."""
    rng = random.Random(seed)
    fixture_pool = ["CounterTop", "DiningTable", "Shelf", "SideTable", "CoffeeTable",
                    "Sink", "Fridge", "Microwave", "Drawer", "Cabinet", "GarbageCan",
                    "Safe", "FloorLamp", "DeskLamp"]
    n_fixtures = rng.randint(6, 8)
    # Always keep at least two plain surfaces so place-goals are satisfiable.
    chosen = ["CounterTop", "DiningTable"] + rng.sample(fixture_pool[2:], n_fixtures - 2)
    cells = [(x, y) for y in range(height) for x in range(width)]
    agent = (width // 2, height // 2, rng.choice(HEADINGS))
    cells.remove(agent[:2])
    rng.shuffle(cells)
    fixtures = []
    # Bias fixtures toward walls so travel paths leave map corners unseen.
    edge_cells = [c for c in cells if c[0] in (0, width - 1) or c[1] in (0, height - 1)]
    inner_cells = [c for c in cells if c not in edge_cells]
    pool = edge_cells + inner_cells
    for i, ftype in enumerate(chosen):
        fixtures.append((f"{ftype}_1", ftype, pool[i]))

    object_pool = sorted(PICKUPABLE_TYPES - KNIFE_TYPES)
    n_objects = rng.randint(max(4, min(6, max_objects)), max_objects)
    counts: dict = {}
    has_knife = rng.random() < 0.8 and n_objects >= 2
    budget = n_objects - (1 if has_knife else 0)
    while budget > 0:
        t = rng.choice(object_pool)
        take = 1 if rng.random() < 0.8 else min(2, budget)
        counts[t] = counts.get(t, 0) + take
        budget -= take
    if has_knife:
        counts["Knife"] = 1
    return SceneConfig(width=width, height=height, agent_start=agent,
                       fixtures=fixtures, object_counts=counts, low_level=low_level)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

FAILURE_NONE = "None"
FAILURE_INVALID = "InvalidAction"
FAILURE_COLLISION = "Collision"
FAILURE_DEADLOCK = "Deadlock"


@dataclass
class StepResult:
    observation: Observation
    reward: float = 0.0
    done: bool = False
    failure: bool = False
    failure_reason: str = FAILURE_NONE


def _rotations(cur: str, target: str) -> list:
    diff = (HEADINGS.index(target) - HEADINGS.index(cur)) % 4
    if diff == 0:
        return []
    if diff == 1:
        return [Action("RotateRight")]
    if diff == 3:
        return [Action("RotateLeft")]
    return [Action("RotateRight"), Action("RotateRight")]


def _flood(state: WorldState, start: tuple) -> dict:
    """BFS flood fill from start over free cells; returns came-from map.

    Floods are memoized on the scene, keyed by the blocked set so states with
    temporary extra obstacles do not share entries.
    """
    cache = state.scene.__dict__.setdefault("_flood_cache", {})
    cache_key = (state.blocked, start)
    cached = cache.get(cache_key)
    if cached is not None:
        return cached
    frontier = [start]
    came = {start: None}
    w, h = state.scene.width, state.scene.height
    blocked = state.blocked
    while frontier:
        nxt = []
        for cell in frontier:
            x, y = cell
            for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
                n = (x + dx, y + dy)
                if n in came or not (0 <= n[0] < w and 0 <= n[1] < h) or n in blocked:
                    continue
                came[n] = cell
                nxt.append(n)
        frontier = nxt
    cache[cache_key] = came
    return came


def shortest_path(state: WorldState, start: tuple, goal: tuple) -> Optional[list]:
    """Shortest cell sequence (start..goal) over free cells, or None."""
    came = _flood(state, start)
    if goal not in came:
        return None
    path = [goal]
    while path[-1] != start:
        path.append(came[path[-1]])
    return path[::-1]


def _stand_candidates(state: WorldState, tcell: tuple) -> list:
    candidates = [] if tcell in state.blocked else [tcell]
    for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
        c = (tcell[0] + dx, tcell[1] + dy)
        if (0 <= c[0] < state.scene.width and 0 <= c[1] < state.scene.height
                and c not in state.blocked):
            candidates.append(c)
    return candidates


def _goto_path(state: WorldState, target_id: str):
    """(path, target cell) for a canonical goto, or None if unreachable.

    The standing cell is chosen canonically per target (first free candidate
    around the target, in a fixed order, that is reachable) so it does not
    depend on where the agent starts; plans that route through the same
    targets therefore reach identical states.
    """
    if target_id not in state.objects:
        return None
    if state.objects[target_id].parent == "inventory":
        return None
    tcell = state.effective_cell(target_id)
    came = _flood(state, state.agent.cell)
    end = next((c for c in _stand_candidates(state, tcell) if c in came), None)
    if end is None:
        return None
    path = [end]
    while path[-1] != state.agent.cell:
        path.append(came[path[-1]])
    return path[::-1], tcell


def goto_pose(state: WorldState, target_id: str, tcell: tuple = None):
    """Resulting (cell, heading, travel distance) of a goto, without expanding.

    Results are cached on the scene per (blocked set, start cell, target
    cell); callers may vary the blocked set between plans, so it is part of
    the key. `tcell` optionally supplies the target's precomputed effective
    cell.
    """
    obj = state.objects.get(target_id)
    if obj is None or obj.parent == "inventory":
        return None
    if tcell is None:
        tcell = state.effective_cell(target_id)
    cache = state.scene.__dict__.setdefault("_goto_pose_cache", {})
    ckey = (state.blocked, state.agent.cell, tcell)
    if ckey in cache:
        hit = cache[ckey]
    else:
        hit = _goto_path(state, target_id)
        if hit is not None:
            path, _ = hit
            end = path[-1]
            if end != tcell:
                delta = (tcell[0] - end[0], tcell[1] - end[1])
                heading = next(h for h, v in HEADING_VEC.items() if v == delta)
            elif len(path) > 1:
                delta = (path[-1][0] - path[-2][0], path[-1][1] - path[-2][1])
                heading = next(h for h, v in HEADING_VEC.items() if v == delta)
            else:
                heading = None  # already standing on target cell: keep heading
            hit = (end, heading, len(path) - 1)
        cache[ckey] = hit
    if hit is None:
        return None
    end, heading, dist = hit
    return end, heading if heading is not None else state.agent.heading, dist


def expand_goto(state: WorldState, target_id: str) -> Optional[list]:
    """Expand GotoObject into Move/Rotate primitives; None if unreachable."""
    hit = _goto_path(state, target_id)
    if hit is None:
        return None
    path, tcell = hit
    end = path[-1]
    actions = []
    heading = state.agent.heading
    for prev, cur in zip(path, path[1:]):
        delta = (cur[0] - prev[0], cur[1] - prev[1])
        desired = next(h for h, v in HEADING_VEC.items() if v == delta)
        actions.extend(_rotations(heading, desired))
        heading = desired
        actions.append(Action("MoveAhead"))
    if end != tcell:
        delta = (tcell[0] - end[0], tcell[1] - end[1])
        desired = next(h for h, v in HEADING_VEC.items() if v == delta)
        actions.extend(_rotations(heading, desired))
    return actions


class Env:
    """Mutable episode wrapper around a WorldState.

    A goal predicate may be attached; reaching it yields reward 1.0 and ends
    the episode. Any failed action also ends the episode (failure => done).
    Failed preconditions never mutate the state.
    """

    def __init__(self, state: WorldState, goal=None):
        self.state = state
        self.goal = goal  # callable(state) -> bool
        self.done = False
        self.step_count = 0
        self._visible = None  # caller-supplied visibility for apply()

    def _vis(self):
        if self._visible is not None:
            return self._visible
        return self.state.visible_ids()

    def observe(self) -> Observation:
        return observe(self.state, self.step_count)

    def apply(self, action: Action, visible=None) -> str:
        """Apply an action without building an observation; returns the failure
        reason (FAILURE_NONE on success). Never mutates the state on failure.
        Intended for search, where observations are not needed.

        `visible` optionally supplies a precomputed `state.visible_ids()`
        result for precondition checks; it must match the current state."""
        self._visible = visible
        try:
            return self._apply(action)
        finally:
            self._visible = None

    def step(self, action: Action) -> StepResult:
        if self.done:
            raise RuntimeError("episode is terminal")
        failure_reason = self._apply(action)
        self.step_count += 1
        obs = observe(self.state, self.step_count)
        if failure_reason != FAILURE_NONE:
            self.done = True
            return StepResult(obs, 0.0, True, True, failure_reason)
        reward = 0.0
        if self.goal is not None and self.goal(self.state):
            reward = 1.0
            self.done = True
        return StepResult(obs, reward, self.done, False, FAILURE_NONE)

    # Returns a failure reason; guaranteed not to mutate on failure.
    def _apply(self, action: Action) -> str:
        st = self.state
        verb = action.verb
        if verb == "Init":
            return FAILURE_NONE
        if verb == "MoveAhead":
            hx, hy = HEADING_VEC[st.agent.heading]
            nxt = (st.agent.cell[0] + hx, st.agent.cell[1] + hy)
            if not (0 <= nxt[0] < st.scene.width and 0 <= nxt[1] < st.scene.height):
                return FAILURE_COLLISION
            if nxt in st.blocked:
                return FAILURE_COLLISION
            st.agent.cell = nxt
            return FAILURE_NONE
        if verb == "RotateLeft":
            st.agent.heading = HEADINGS[(HEADINGS.index(st.agent.heading) - 1) % 4]
            return FAILURE_NONE
        if verb == "RotateRight":
            st.agent.heading = HEADINGS[(HEADINGS.index(st.agent.heading) + 1) % 4]
            return FAILURE_NONE
        if verb == "GotoObject":
            expansion = expand_goto(st, action.target)
            if expansion is None:
                return FAILURE_INVALID
            for sub in expansion:
                reason = self._apply(sub)
                if reason != FAILURE_NONE:  # planned routes never collide
                    return reason
            return FAILURE_NONE
        if verb == "PickupObject":
            obj = st.objects.get(action.target)
            if obj is None or not obj.pickupable or obj.parent == "inventory":
                return FAILURE_INVALID
            if st.inventory() or action.target not in self._vis():
                return FAILURE_INVALID
            obj.parent = "inventory"
            obj.cell = st.agent.cell
            return FAILURE_NONE
        if verb == "PutObject":
            obj = st.objects.get(action.target)
            recep = st.objects.get(action.receptacle)
            if obj is None or recep is None or obj.parent != "inventory":
                return FAILURE_INVALID
            if not recep.receptacle or action.receptacle not in self._vis():
                return FAILURE_INVALID
            if not st.accepts(action.receptacle):
                return FAILURE_INVALID
            if obj.id == recep.id:
                return FAILURE_INVALID
            # reject containment cycles (putting a box into its own contents)
            cur = recep
            while cur.parent not in ("floor", "inventory"):
                if cur.parent == obj.id:
                    return FAILURE_INVALID
                cur = st.objects[cur.parent]
            obj.parent = recep.id
            obj.cell = st.effective_cell(recep.id)
            obj.band = recep.band
            effect = CATALOG[recep.obj_type].get("effect")
            if effect == "clean":
                obj.is_clean = True
            elif effect == "heat":
                obj.is_heated = True
            elif effect == "cool":
                obj.is_cooled = True
            return FAILURE_NONE
        if verb in ("OpenObject", "CloseObject"):
            obj = st.objects.get(action.target)
            if obj is None or not obj.openable:
                return FAILURE_INVALID
            if action.target not in self._vis():
                return FAILURE_INVALID
            want_open = verb == "OpenObject"
            if obj.is_open == want_open:
                return FAILURE_INVALID
            obj.is_open = want_open
            return FAILURE_NONE
        if verb == "SliceObject":
            obj = st.objects.get(action.target)
            if obj is None or not obj.sliceable or obj.is_sliced:
                return FAILURE_INVALID
            if action.target not in self._vis():
                return FAILURE_INVALID
            if not any(obj_type_of(i) in KNIFE_TYPES for i in st.inventory()):
                return FAILURE_INVALID
            obj.is_sliced = True
            return FAILURE_NONE
        if verb == "MoveArm":
            if not st.scene.low_level:
                return FAILURE_INVALID
            dx, dy, dz = action.delta
            lim = st.scene.arm_step_limit
            if max(abs(dx), abs(dy), abs(dz)) > lim + 1e-12:
                return FAILURE_INVALID
            ox, oy, oz = st.agent.arm_offset
            new = (ox + dx, oy + dy, oz + dz)
            if math.sqrt(sum(c * c for c in new)) > st.scene.arm_reach + 1e-12:
                return FAILURE_INVALID
            st.agent.arm_offset = new
            return FAILURE_NONE
        if verb == "PickupMagnet":
            if not st.scene.low_level:
                return FAILURE_INVALID
            obj = st.objects.get(action.target)
            if obj is None or not obj.pickupable or obj.parent == "inventory":
                return FAILURE_INVALID
            if st.inventory():
                return FAILURE_INVALID
            ex, ey, ez = st.arm_endpoint()
            px, py, pz = st.object_position(action.target)
            dist = math.sqrt((ex - px) ** 2 + (ey - py) ** 2 + (ez - pz) ** 2)
            if dist > st.scene.magnet_radius:
                return FAILURE_INVALID
            obj.parent = "inventory"
            obj.cell = st.agent.cell
            return FAILURE_NONE
        if verb == "ReleaseMagnet":
            if not st.scene.low_level:
                return FAILURE_INVALID
            inv = st.inventory()
            if not inv:
                return FAILURE_INVALID
            obj = st.objects[inv[0]]
            obj.parent = "floor"
            obj.cell = st.agent.cell
            obj.band = 0
            return FAILURE_NONE
        return FAILURE_INVALID


def magnet_pickup(state: WorldState, target_id: str) -> StepResult:
    """One-shot magnet-sphere pickup (low-level mode)."""
    env = Env(state)
    return env.step(Action("PickupMagnet", target=target_id))
