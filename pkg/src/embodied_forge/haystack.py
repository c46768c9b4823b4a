"""Token-budgeted evaluation contexts around needle steps.

Single-evidence questions get a contiguous crop of the trajectory positioned
so the needle sits at a target depth (percentage of tokens before it);
multi-evidence questions keep every ground-truth step and fill the remaining
budget with intermediate steps allocated to the gaps between needles in
proportion to the original gap sizes. Depth is measured in tokens. The grid
builder enumerates (length, depth) cells and flags infeasible combinations.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .errors import SpecError
from .qagen import QAInstance
from .trajgen import Trajectory

DEPTH_TOLERANCE = 2.0  # percentage points


@dataclass
class HaystackSpec:
    target_tokens: int
    target_depth: float = 50.0
    tokens_per_image: int = 121
    text_tokens_per_step: int = 8

    def __post_init__(self):
        if not (0 <= self.target_depth <= 100):
            raise SpecError(f"depth must be in [0, 100], got {self.target_depth}")
        if self.tokens_per_image <= 0 or self.text_tokens_per_step <= 0:
            raise SpecError("token constants must be positive")

    @property
    def step_cost(self) -> int:
        return self.tokens_per_image + self.text_tokens_per_step


@dataclass
class HaystackContext:
    trajectory_id: str
    qa_id: str
    included_steps: list       # ordered original step indices
    realized_tokens: int
    realized_depths: list      # percent per needle, in gt-step order
    target_tokens: int
    target_depth: float = None  # None for multi-evidence contexts
    clamped: bool = False

    def to_records(self, traj: Trajectory) -> list:
        by_step = {r.step: r for r in traj.steps}
        header = {"type": "header", "trajectoryId": self.trajectory_id,
                  "qaId": self.qa_id, "targetTokens": self.target_tokens,
                  "targetDepth": self.target_depth,
                  "realizedTokens": self.realized_tokens,
                  "realizedDepths": self.realized_depths,
                  "clamped": self.clamped}
        records = [header]
        for s in self.included_steps:
            rec = by_step[s]
            records.append({"type": "step", "step": rec.step,
                            "action": rec.action, "metadata": rec.metadata})
        return records


def _step_indices(traj: Trajectory) -> list:
    return [r.step for r in traj.steps]


def build_single(traj: Trajectory, qa: QAInstance, spec: HaystackSpec) -> HaystackContext:
    """Contiguous crop containing the needle at ~target depth (in tokens)."""
    if qa.evidence_class != "single":
        raise SpecError(f"{qa.qa_id} is not single-evidence")
    cost = spec.step_cost
    if spec.target_tokens < cost:
        raise SpecError(f"budget {spec.target_tokens} below one step's cost {cost}")
    steps = _step_indices(traj)
    n = min(len(steps), max(1, spec.target_tokens // cost))
    needle = qa.gt_steps[0]
    pos = steps.index(needle)
    # Depth 0 puts the needle first in the window, depth 100 puts it last.
    want_before = round(spec.target_depth / 100 * (n - 1))
    start = pos - min(n - 1, want_before)
    start = max(0, min(start, len(steps) - n))
    included = steps[start:start + n]
    realized_depth = ((pos - start) / (n - 1) * 100 if n > 1
                      else spec.target_depth)
    clamped = abs(realized_depth - spec.target_depth) > DEPTH_TOLERANCE
    return HaystackContext(
        trajectory_id=traj.id, qa_id=qa.qa_id, included_steps=included,
        realized_tokens=n * cost, realized_depths=[realized_depth],
        target_tokens=spec.target_tokens, target_depth=spec.target_depth,
        clamped=clamped)


def allocate_filler(gap_sizes: list, budget: int) -> list:
    """Proportional allocation with deterministic largest-remainder rounding.

    Allocations never exceed the gap's capacity; leftovers cascade to the
    largest remaining gaps (ties broken by position).
    """
    total = sum(gap_sizes)
    if total == 0 or budget <= 0:
        return [0] * len(gap_sizes)
    budget = min(budget, total)
    quotas = [budget * g / total for g in gap_sizes]
    alloc = [int(q) for q in quotas]
    remainders = sorted(range(len(gap_sizes)),
                        key=lambda i: (-(quotas[i] - alloc[i]), i))
    short = budget - sum(alloc)
    for i in remainders:
        if short == 0:
            break
        if alloc[i] < gap_sizes[i]:
            alloc[i] += 1
            short -= 1
    # Cascade anything still unplaced into gaps with spare capacity.
    for i in sorted(range(len(gap_sizes)), key=lambda i: (-(gap_sizes[i] - alloc[i]), i)):
        if short == 0:
            break
        take = min(short, gap_sizes[i] - alloc[i])
        alloc[i] += take
        short -= take
    return alloc


def build_multi(traj: Trajectory, qa: QAInstance, spec: HaystackSpec) -> HaystackContext:
    """All needles plus gap-proportional intermediate filler, in order."""
    if qa.evidence_class != "multi":
        raise SpecError(f"{qa.qa_id} is not multi-evidence")
    cost = spec.step_cost
    needles = qa.gt_steps
    if spec.target_tokens < len(needles) * cost:
        raise SpecError(f"budget {spec.target_tokens} below needle cost "
                        f"{len(needles) * cost}")
    budget_steps = spec.target_tokens // cost - len(needles)
    gaps = [list(range(needles[i] + 1, needles[i + 1]))
            for i in range(len(needles) - 1)]
    alloc = allocate_filler([len(g) for g in gaps], budget_steps)
    included = set(needles)
    for gap, take in zip(gaps, alloc):
        if take == 0:
            continue
        included.update(gap[(j * len(gap)) // take] for j in range(take))
    included = sorted(included)
    realized = len(included) * cost
    depths = [included.index(s) / max(len(included) - 1, 1) * 100
              for s in needles]
    return HaystackContext(
        trajectory_id=traj.id, qa_id=qa.qa_id, included_steps=included,
        realized_tokens=realized, realized_depths=depths,
        target_tokens=spec.target_tokens)


def build_context(traj: Trajectory, qa: QAInstance, spec: HaystackSpec) -> HaystackContext:
    if qa.evidence_class == "single":
        return build_single(traj, qa, spec)
    return build_multi(traj, qa, spec)


def build_grid(traj: Trajectory, qas: list, lengths: list, depths: list,
               tokens_per_image: int = 121, text_tokens_per_step: int = 8) -> list:
    """One cell per (length, depth); infeasible cells carry feasible=False.

    Each cell uses the first single-evidence question whose needle can sit at
    the requested depth within tolerance; a cell is N/A when no question fits
    (budget below one step, trajectory shorter than the window allows, or the
    depth unreachable for every candidate).
    """
    singles = [q for q in qas if q.evidence_class == "single"]
    cells = []
    for length in lengths:
        for depth in depths:
            cell = {"length": length, "depth": depth, "feasible": False,
                    "qaId": None, "realizedTokens": None, "realizedDepth": None}
            try:
                spec = HaystackSpec(target_tokens=length, target_depth=depth,
                                    tokens_per_image=tokens_per_image,
                                    text_tokens_per_step=text_tokens_per_step)
                for qa in singles:
                    ctx = build_single(traj, qa, spec)
                    if ctx.clamped:
                        continue
                    if length - ctx.realized_tokens >= spec.step_cost:
                        continue  # trajectory too short to fill the budget
                    cell.update(feasible=True, qaId=qa.qa_id,
                                realizedTokens=ctx.realized_tokens,
                                realizedDepth=round(ctx.realized_depths[0], 3))
                    break
            except SpecError:
                pass
            cells.append(cell)
    return cells


def grid_csv(cells: list) -> str:
    """Heatmap rows: one line per (length, depth) cell; N/A when infeasible."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["length", "depth", "qa_id", "realized_tokens",
                     "realized_depth"])
    for cell in cells:
        if cell["feasible"]:
            writer.writerow([cell["length"], cell["depth"], cell["qaId"],
                             cell["realizedTokens"], cell["realizedDepth"]])
        else:
            writer.writerow([cell["length"], cell["depth"], "N/A", "N/A", "N/A"])
    return buf.getvalue()
