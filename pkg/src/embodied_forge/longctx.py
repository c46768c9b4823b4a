"""Position-scaling transforms and a ring-topology attention simulator.

Rotary-embedding frequency schedules (linear / dynamic-base / blended-ramp /
per-dimension factors) are computed as pure functions of the config; the ring
attention simulator circulates key-value shards across P simulated workers
with online-softmax accumulators and must match the dense oracle to 1e-5.
All accumulation happens in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, PlanError

ROPE_METHODS = ("none", "linear", "dynamic", "yarn", "longrope")


@dataclass
class RopeConfig:
    head_dim: int
    base: float = 10_000.0
    train_len: int = 4096
    method: str = "none"
    scale: float = 1.0
    yarn_alpha: float = 1.0
    yarn_beta: float = 32.0
    per_dim_factors: list = None

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2:
            raise ConfigError(f"head_dim must be a positive even integer, "
                              f"got {self.head_dim}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.method not in ROPE_METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method == "longrope":
            if (self.per_dim_factors is None
                    or len(self.per_dim_factors) != self.head_dim // 2):
                raise ConfigError("longrope needs per_dim_factors of length "
                                  f"{self.head_dim // 2}")
            if any(f < 1 for f in self.per_dim_factors):
                raise ConfigError("per-dimension factors must be >= 1")


def _base_frequencies(head_dim: int, base: float) -> np.ndarray:
    i = np.arange(head_dim // 2, dtype=np.float64)
    return base ** (-2.0 * i / head_dim)


def rope_frequencies(cfg: RopeConfig, seq_len: int = None):
    """(frequencies θ'_i, position multiplier, attention temperature).

    Effective rotation angle for position m and dimension i is
    (m * position multiplier) * θ'_i. Temperature is 1.0 except for the
    blended-ramp method, where t = 0.1·ln(s) + 1.
    """
    theta = _base_frequencies(cfg.head_dim, cfg.base)
    if cfg.method == "none":
        return theta, 1.0, 1.0
    if cfg.method == "linear":
        # Positions rescaled into the pretrained range: m -> m / s.
        return theta, 1.0 / cfg.scale, 1.0
    if cfg.method == "dynamic":
        length = seq_len if seq_len is not None else cfg.train_len
        s_eff = max(1.0, length / cfg.train_len)
        d = cfg.head_dim
        new_base = cfg.base * s_eff ** (d / (d - 2))
        return _base_frequencies(d, new_base), 1.0, 1.0
    if cfg.method == "yarn":
        s = cfg.scale
        if s == 1.0:  # no extension requested: exact identity
            return theta, 1.0, 1.0
        wavelengths = 2.0 * math.pi / theta
        ramp = (cfg.train_len / wavelengths - cfg.yarn_alpha) \
            / (cfg.yarn_beta - cfg.yarn_alpha)
        gamma = np.clip(ramp, 0.0, 1.0)
        blended = (1.0 - gamma) * (theta / s) + gamma * theta
        temperature = 0.1 * math.log(s) + 1.0
        return blended, 1.0, temperature
    if cfg.method == "longrope":
        factors = np.asarray(cfg.per_dim_factors, dtype=np.float64)
        return theta / factors, 1.0, 1.0
    raise ConfigError(f"unknown method {cfg.method!r}")


def apply_rotary(vec, position: float, cfg: RopeConfig,
                 seq_len: int = None) -> np.ndarray:
    """Rotate each (2i, 2i+1) pair of vec by the position-scaled angle."""
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (cfg.head_dim,):
        raise ConfigError(f"expected vector of dim {cfg.head_dim}, "
                          f"got shape {v.shape}")
    theta, pos_mult, _temp = rope_frequencies(cfg, seq_len)
    angles = (position * pos_mult) * theta
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = v[0::2], v[1::2]
    out = np.empty_like(v)
    out[0::2] = even * cos - odd * sin
    out[1::2] = even * sin + odd * cos
    return out


def simulate_context_budget(traj_tokens: int, method: str, scale: float,
                            train_len: int) -> dict:
    """Do remapped positions stay within the pretrained range?"""
    if method == "linear":
        effective = traj_tokens / scale
    elif method in ("dynamic", "yarn", "longrope"):
        # These methods alter frequencies rather than positions; their
        # design reach is scale * train_len.
        effective = traj_tokens / max(scale, 1.0)
    else:
        effective = float(traj_tokens)
    return {"trajTokens": traj_tokens, "method": method, "scale": scale,
            "trainLen": train_len, "effectivePositions": effective,
            "feasible": effective <= train_len}


# ---------------------------------------------------------------------------
# Ring attention
# ---------------------------------------------------------------------------

@dataclass
class RingPlan:
    workers: int
    seq_len: int
    schedule: list = field(default_factory=list)  # per round: (sender, receiver)
    messages: list = field(default_factory=list)  # filled in by the simulator

    def __post_init__(self):
        if self.workers < 1:
            raise PlanError(f"workers must be >= 1, got {self.workers}")
        if self.seq_len % self.workers:
            raise PlanError(f"{self.workers} workers do not divide "
                            f"sequence length {self.seq_len}")
        if not self.schedule:
            # One directed cycle: each round every worker sends its current
            # KV shard to the next worker.
            self.schedule = [[(w, (w + 1) % self.workers)
                              for w in range(self.workers)]
                             for _ in range(self.workers - 1)]

    @property
    def shard_size(self) -> int:
        return self.seq_len // self.workers


def _check_finite(name: str, m: np.ndarray) -> None:
    if not np.isfinite(m).all():
        raise InputError(f"{name} contains NaN/Inf")


def _online_merge(acc_max, acc_den, acc_num, logits, values):
    """Merge one block of logits/values into online-softmax accumulators."""
    block_max = np.max(logits, axis=1)
    new_max = np.maximum(acc_max, block_max)
    old_scale = np.exp(acc_max - new_max)
    probs = np.exp(logits - new_max[:, None])
    den = acc_den * old_scale + probs.sum(axis=1)
    num = acc_num * old_scale[:, None] + probs @ values
    return new_max, den, num


def dense_attention(q, k, v, causal: bool = False,
                    temperature: float = 1.0) -> np.ndarray:
    """Reference oracle: numerically stable softmax(QKᵀ/(t·√d))·V.

    Uses the same online-softmax merge as the ring path over a single block,
    so a 1-worker ring is bitwise identical.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for name, m in (("Q", q), ("K", k), ("V", v)):
        _check_finite(name, m)
    L, d = q.shape
    # Same scaling expression as the ring path, so P=1 is bitwise identical.
    logits = q @ k.T * (1.0 / (temperature * math.sqrt(d)))
    if causal:
        logits = np.where(np.arange(L)[None, :] <= np.arange(L)[:, None],
                          logits, -np.inf)
    acc_max = np.full(L, -np.inf)
    acc_den = np.zeros(L)
    acc_num = np.zeros((L, v.shape[1]))
    acc_max, acc_den, acc_num = _online_merge(acc_max, acc_den, acc_num,
                                              logits, v)
    return acc_num / acc_den[:, None]


def ring_attention(q, k, v, plan: RingPlan, causal: bool = False,
                   temperature: float = 1.0) -> np.ndarray:
    """Simulated context-parallel attention over a worker ring.

    Each worker keeps its Q shard; KV shards hop one worker per round.
    plan.messages records every transfer as (round, sender, receiver,
    shard_index); per-worker resident KV never exceeds one shard (L/P rows).
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for name, m in (("Q", q), ("K", k), ("V", v)):
        _check_finite(name, m)
    L, d = q.shape
    if k.shape != q.shape or v.shape[0] != L:
        raise PlanError("Q, K, V must agree on sequence length")
    if plan.seq_len != L:
        raise PlanError(f"plan is for L={plan.seq_len}, inputs have L={L}")
    P = plan.workers
    S = plan.shard_size
    scale = 1.0 / (temperature * math.sqrt(d))
    positions = np.arange(L)

    q_shards = [q[w * S:(w + 1) * S] for w in range(P)]
    # resident[w] holds exactly one KV shard at any time.
    resident = [(w, k[w * S:(w + 1) * S], v[w * S:(w + 1) * S])
                for w in range(P)]
    acc_max = [np.full(S, -np.inf) for _ in range(P)]
    acc_den = [np.zeros(S) for _ in range(P)]
    acc_num = [np.zeros((S, v.shape[1])) for _ in range(P)]
    plan.messages = []
    peak_resident = [S] * P

    for rnd in range(P):
        for w in range(P):
            shard_idx, ks, vs = resident[w]
            logits = q_shards[w] @ ks.T * scale
            if causal:
                qpos = positions[w * S:(w + 1) * S][:, None]
                kpos = positions[shard_idx * S:(shard_idx + 1) * S][None, :]
                logits = np.where(kpos <= qpos, logits, -np.inf)
            if causal and not np.isfinite(logits).any(axis=1).all():
                # Rows with no visible keys yet: merge only valid rows.
                valid = np.isfinite(logits).any(axis=1)
                if valid.any():
                    m, dn, nm = _online_merge(
                        acc_max[w][valid], acc_den[w][valid],
                        acc_num[w][valid], logits[valid], vs)
                    acc_max[w][valid] = m
                    acc_den[w][valid] = dn
                    acc_num[w][valid] = nm
            else:
                acc_max[w], acc_den[w], acc_num[w] = _online_merge(
                    acc_max[w], acc_den[w], acc_num[w], logits, vs)
        if rnd < P - 1:
            moved = [None] * P
            for sender, receiver in plan.schedule[rnd]:
                moved[receiver] = resident[sender]
                plan.messages.append((rnd, sender, receiver,
                                      resident[sender][0]))
            resident = moved
    out = np.vstack([acc_num[w] / acc_den[w][:, None] for w in range(P)])
    return out
