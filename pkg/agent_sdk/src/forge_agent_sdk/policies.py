"""Reference policies for the `forge-agent` console script.

OraclePolicy replays the logged actions from a trajectory file (the same
line-delimited JSON artifact the evaluator produces), RandomPolicy samples a
plausible action from each observation, and ScriptedPolicy plays a fixed
action list from a JSON file.
"""
from __future__ import annotations

import json
import random

from .protocol import ProtocolError


def _load_records(path: str) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records or records[0].get("type") != "header":
        raise ProtocolError(f"{path} is not a trajectory file")
    return records


class OraclePolicy:
    """Replays the per-plan action log from a trajectory file."""

    def __init__(self, trajectory_path: str):
        records = _load_records(trajectory_path)
        self._by_plan: dict = {}
        self._history_len: dict = {}
        steps = [r for r in records if r.get("type") == "step"]
        for rec in steps:
            idx = rec["subgoalIndex"]
            if idx >= 0:
                self._by_plan.setdefault(idx, []).append(rec["action"])
        for key in list(self._by_plan) + ["final"]:
            bound = len(steps) if key == "final" else None
            if bound is None:
                self._history_len[key] = sum(
                    1 for r in steps if -1 <= r["subgoalIndex"] < key)
            else:
                self._history_len[key] = bound
        self._queue: list = []

    def history_steps(self, plan_key) -> int:
        return self._history_len.get(plan_key, 0)

    def begin(self, message: dict, state) -> None:
        self._queue = list(self._by_plan.get(state.plan_key, []))

    def act(self, observation: dict, state) -> str:
        if self._queue:
            return self._queue.pop(0)
        return "Init"  # nothing left to replay: harmless no-op


class RandomPolicy:
    """Uniform choice over actions that look plausible in the observation."""

    def __init__(self, seed: int = 0):
        self._rng = random.Random(seed)

    def act(self, observation: dict, state) -> str:
        log = observation.get("object_log") or {}
        options = ["MoveAhead", "RotateLeft", "RotateRight"]
        inventory = log.get("inven_obj") or []
        holding = inventory[0] if inventory else None
        if holding is None:
            options += [f"PickupObject|{oid}" for oid in log.get("pickupable", [])]
        else:
            options += [f"PutObject|{holding}|{rid}"
                        for rid in log.get("receptacles", [])]
        for rid in log.get("isOpen", []):
            options.append(f"CloseObject|{rid}")
        return self._rng.choice(sorted(options))


class ScriptedPolicy:
    """Plays a fixed action list loaded from a JSON array file."""

    def __init__(self, script_path: str):
        with open(script_path, encoding="utf-8") as fh:
            actions = json.load(fh)
        if not isinstance(actions, list) or \
                not all(isinstance(a, str) for a in actions):
            raise ProtocolError(f"{script_path} must hold a JSON array of "
                                f"action strings")
        self._actions = actions
        self._pos = 0

    def begin(self, message: dict, state) -> None:
        self._pos = 0

    def act(self, observation: dict, state) -> str:
        if self._pos < len(self._actions):
            action = self._actions[self._pos]
            self._pos += 1
            return action
        return "Init"
