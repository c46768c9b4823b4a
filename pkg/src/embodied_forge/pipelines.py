"""High-level pipelines shared by the HTTP service and the CLI.

Each pipeline is a pure function from a validated parameter set to a
JSON-serializable report. Pipelines that produce artifacts (trajectory files,
QA files, haystack grids) write them atomically under the caller-supplied
output directory and return the file names in the report, together with a
provenance block: package version, seed, and a hash of the exact
configuration that produced the result.
"""
from __future__ import annotations

import hashlib
import time
from pathlib import Path

import numpy as np

from . import __version__, harness, haystack, longctx, qagen, trajgen, world
from .errors import ConfigError, GiveUp
from .ioutil import atomic_write_text, write_jsonl


def config_hash(config: dict) -> str:
    return hashlib.sha256(world.canonical_json(config).encode()).hexdigest()


def provenance(seed: int, config: dict) -> dict:
    return {"version": __version__, "seed": seed,
            "configHash": config_hash(config)}


def _tokens_per_image(model: str) -> int:
    try:
        return trajgen.TOKENS_PER_IMAGE[model]
    except KeyError:
        raise ConfigError(
            f"unknown vision model {model!r}; choose one of "
            f"{sorted(trajgen.TOKENS_PER_IMAGE)}") from None


# ---------------------------------------------------------------------------
# Trajectory generation
# ---------------------------------------------------------------------------

def run_gen(n_traj: int, max_subgoals: int, seed: int, out_dir: str,
            model: str = "qwen2.5-vl", max_objects: int = 14) -> dict:
    """Generate n_traj trajectories and export them with a manifest.

    Seeds are consumed consecutively starting at `seed`; seeds whose scenes
    cannot satisfy the construction constraints are skipped and reported.
    """
    if n_traj < 1:
        raise ConfigError(f"nTraj must be >= 1, got {n_traj}")
    params = {"nTraj": n_traj, "maxSubgoals": max_subgoals, "seed": seed,
              "model": model, "maxObjects": max_objects}
    tokens_per_image = _tokens_per_image(model)
    trajs, skipped = [], []
    s = seed
    while len(trajs) < n_traj:
        config = trajgen.GenConfig(max_subgoals=max_subgoals, seed=s,
                                   tokens_per_image=tokens_per_image,
                                   max_objects=max_objects)
        try:
            trajs.append(trajgen.generate_trajectory(config))
        except GiveUp:
            skipped.append(s)
            if len(skipped) > 4 * n_traj + 16:
                raise
        s += 1
    manifest = trajgen.export_dataset(trajs, out_dir)
    return {"provenance": provenance(seed, params),
            "outDir": str(Path(out_dir)),
            "trajectoryIds": [t.id for t in trajs],
            "skippedSeeds": skipped,
            "manifest": manifest}


def run_stats(traj_dir: str) -> dict:
    trajs = trajgen.load_dataset(traj_dir)
    if not trajs:
        raise ConfigError(f"no trajectory files under {traj_dir}")
    return {"provenance": provenance(0, {"trajDir": "stats"}),
            "stats": trajgen.dataset_stats(trajs)}


# ---------------------------------------------------------------------------
# QA synthesis
# ---------------------------------------------------------------------------

def run_qa(traj_dir: str, target_count: int, seed: int, out_file: str,
           validators: list = None) -> dict:
    """Generate, validate, balance, and export QA instances.

    Every candidate is kept only if at least one validator answers it
    correctly; the audit verdicts ride along in the report.
    """
    validator_names = list(validators or ["oracle"])
    params = {"targetCount": target_count, "seed": seed,
              "validators": validator_names}
    for name in validator_names:
        if name != "oracle":
            raise ConfigError(f"unknown validator {name!r}; only the built-in "
                              f"'oracle' validator is available here")
    trajs = trajgen.load_dataset(traj_dir)
    if not trajs:
        raise ConfigError(f"no trajectory files under {traj_dir}")
    pool = []
    for traj in trajs:
        pool.extend(qagen.generate_qa(traj, seed=seed))
    by_id = {t.id: t for t in trajs}
    kept, dropped, verdicts = qagen.filter_answerable(
        by_id, pool, [qagen.OracleValidator()])
    sample, truncated = qagen.sample_balanced(kept, target_count, seed=seed)
    records = [{"type": "header", "provenance": provenance(seed, params),
                "count": len(sample), "truncated": truncated}]
    records += [qa.to_dict() for qa in sample]
    write_jsonl(out_file, records)
    type_counts: dict = {}
    for qa in sample:
        type_counts[qa.qa_type] = type_counts.get(qa.qa_type, 0) + 1
    return {"provenance": provenance(seed, params),
            "outFile": str(Path(out_file)),
            "generated": len(pool), "kept": len(kept),
            "dropped": len(dropped), "sampled": len(sample),
            "truncated": truncated, "typeCounts": type_counts}


def load_qa_file(path: str) -> list:
    from .ioutil import read_jsonl
    records = read_jsonl(path)
    return [qagen.QAInstance.from_dict(r) for r in records
            if r.get("type") != "header"]


# ---------------------------------------------------------------------------
# Haystack grids
# ---------------------------------------------------------------------------

def run_haystack(traj_dir: str, qa_file: str, lengths: list, depths: list,
                 out_dir: str, model: str = "qwen2.5-vl",
                 emit_contexts: bool = False) -> dict:
    """Build the (length, depth) grid per trajectory and emit grid.csv."""
    params = {"lengths": lengths, "depths": depths, "model": model}
    tokens_per_image = _tokens_per_image(model)
    trajs = trajgen.load_dataset(traj_dir)
    if not trajs:
        raise ConfigError(f"no trajectory files under {traj_dir}")
    qas = load_qa_file(qa_file)
    by_traj: dict = {}
    for qa in qas:
        by_traj.setdefault(qa.trajectory_id, []).append(qa)
    out = Path(out_dir)
    all_rows = ["trajectory_id,length,depth,qa_id,realized_tokens,realized_depth"]
    cells_out = []
    n_feasible = 0
    for traj in trajs:
        cells = haystack.build_grid(traj, by_traj.get(traj.id, []),
                                    lengths, depths,
                                    tokens_per_image=tokens_per_image)
        for cell in cells:
            cells_out.append({"trajectoryId": traj.id, **cell})
            n_feasible += cell["feasible"]
        for line in haystack.grid_csv(cells).splitlines()[1:]:
            all_rows.append(f"{traj.id},{line}")
        if emit_contexts:
            spec_qas = {q.qa_id: q for q in by_traj.get(traj.id, [])}
            for cell in cells:
                if not cell["feasible"]:
                    continue
                spec = haystack.HaystackSpec(
                    target_tokens=cell["length"], target_depth=cell["depth"],
                    tokens_per_image=tokens_per_image)
                ctx = haystack.build_single(traj, spec_qas[cell["qaId"]], spec)
                name = f"{traj.id}-L{cell['length']}-D{cell['depth']}.jsonl"
                write_jsonl(out / "contexts" / name, ctx.to_records(traj))
    atomic_write_text(out / "grid.csv", "\n".join(all_rows) + "\n")
    return {"provenance": provenance(0, params),
            "outDir": str(out), "csv": str(out / "grid.csv"),
            "cells": cells_out,
            "feasibleCells": n_feasible,
            "totalCells": len(cells_out)}


# ---------------------------------------------------------------------------
# Agent evaluation
# ---------------------------------------------------------------------------

def _make_agent(spec: str, traj: trajgen.Trajectory, seed: int,
                timeout: float):
    if spec == "oracle":
        return harness.OracleAgent(traj), False
    if spec == "random":
        return harness.RandomAgent(seed=seed), False
    return harness.SubprocessAgent(spec, timeout=timeout), True


def run_eval(traj_dir: str, agent: str, mode: str = "interleaved",
             top_k: int = 10, final: bool = False, seed: int = 0,
             timeout: float = 30.0) -> dict:
    """Evaluate an agent on every trajectory in traj_dir.

    `agent` is `oracle`, `random`, or a shell command speaking the
    line-delimited stdio protocol.
    """
    if mode not in harness.CONTEXT_MODES:
        raise ConfigError(f"unknown context mode {mode!r}; choose one of "
                          f"{harness.CONTEXT_MODES}")
    params = {"agent": agent, "mode": mode, "topK": top_k,
              "final": final, "seed": seed}
    trajs = trajgen.load_dataset(traj_dir)
    if not trajs:
        raise ConfigError(f"no trajectory files under {traj_dir}")
    config = harness.EvalConfig(mode=mode, top_k=top_k, seed=seed,
                                action_timeout=timeout)
    reports = []
    for traj in trajs:
        endpoint, external = _make_agent(agent, traj, seed, timeout)
        try:
            if final:
                report = harness.run_final_task_eval(traj, endpoint, config)
            else:
                report = harness.run_plan_level_eval(traj, endpoint, config)
        finally:
            if external:
                endpoint.close()
        reports.append(report.to_dict())
    rewards = [r["totalReward"] for r in reports]
    return {"provenance": provenance(seed, params),
            "reports": reports,
            "meanReward": sum(rewards) / len(rewards),
            "episodes": len(reports)}


# ---------------------------------------------------------------------------
# Long-context numerics
# ---------------------------------------------------------------------------

RING_DEFAULTS = {"lengths": [64, 128, 256, 512], "dims": [16, 64],
                 "workers": [1, 2, 4, 8], "causal": [False, True],
                 "seeds": [0, 1, 2]}


def run_ringcheck(lengths: list = None, dims: list = None,
                  workers: list = None, causal: list = None,
                  seeds: list = None, tolerance: float = 1e-5) -> dict:
    """Sweep the sharded-attention simulator against the dense oracle."""
    lengths = lengths or RING_DEFAULTS["lengths"]
    dims = dims or RING_DEFAULTS["dims"]
    workers = workers or RING_DEFAULTS["workers"]
    causal = RING_DEFAULTS["causal"] if causal is None else causal
    seeds = seeds or RING_DEFAULTS["seeds"]
    params = {"lengths": lengths, "dims": dims, "workers": workers,
              "causal": causal, "seeds": seeds, "tolerance": tolerance}
    t0 = time.monotonic()
    cases = []
    worst = 0.0
    for L in lengths:
        for d in dims:
            for P in workers:
                if L % P:
                    continue
                for c in causal:
                    for s in seeds:
                        rng = np.random.default_rng(s * 7919 + L + d + P)
                        q = rng.standard_normal((L, d))
                        k = rng.standard_normal((L, d))
                        v = rng.standard_normal((L, d))
                        plan = longctx.RingPlan(workers=P, seq_len=L)
                        ring = longctx.ring_attention(q, k, v, plan, causal=c)
                        dense = longctx.dense_attention(q, k, v, causal=c)
                        err = float(np.max(np.abs(ring - dense)))
                        worst = max(worst, err)
                        cases.append({"L": L, "d": d, "P": P,
                                      "causal": bool(c), "seed": s,
                                      "maxAbsError": err,
                                      "residentRows": plan.shard_size,
                                      "messages": len(plan.messages)})
    elapsed = time.monotonic() - t0
    return {"provenance": provenance(0, params),
            "cases": cases, "worstError": worst,
            "passed": worst < tolerance,
            "tolerance": tolerance, "elapsedSeconds": elapsed}


def run_rope(method: str, scale: float = 1.0, dim: int = 64,
             base: float = 10_000.0, train_len: int = 4096,
             seq_len: int = None, positions: list = None) -> dict:
    """Report the frequency schedule and position remapping for one config."""
    cfg = longctx.RopeConfig(head_dim=dim, base=base, train_len=train_len,
                             method=method, scale=scale,
                             per_dim_factors=([scale] * (dim // 2)
                                              if method == "longrope" else None))
    theta, pos_mult, temperature = longctx.rope_frequencies(cfg, seq_len)
    positions = positions if positions is not None else [0, 100, train_len]
    params = {"method": method, "scale": scale, "dim": dim, "base": base,
              "trainLen": train_len, "seqLen": seq_len}
    return {"provenance": provenance(0, params),
            "frequencies": theta.tolist(),
            "positionMultiplier": pos_mult,
            "temperature": temperature,
            "remappedPositions": {str(p): p * pos_mult for p in positions},
            "budget": longctx.simulate_context_budget(
                seq_len or train_len, method, scale, train_len)}
