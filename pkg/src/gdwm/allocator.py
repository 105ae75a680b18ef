"""Integer budget allocation: coverage first, then softmax-weighted remainders.

Every path conserves the budget exactly: floors plus largest-remainder
increments in the feasible regime, and a documented top-k fallback when the
coverage constraint cannot be met. Ties anywhere break toward the lower chunk
index so runs are reproducible.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class AllocatorConfig:
    k_total: int = 32
    k_min: int = 1
    tau: float = 1.0
    greedy: bool = False  # documented tau -> 0 mode; tau itself must stay > 0

    def __post_init__(self):
        if self.k_total < 0:
            raise InvalidArgumentError("k_total must be >= 0")
        if self.k_min < 0:
            raise InvalidArgumentError("k_min must be >= 0")
        if not (self.tau > 0.0) or not math.isfinite(self.tau):
            raise InvalidArgumentError("tau must be a finite positive number")


@dataclass(frozen=True)
class AllocationSchedule:
    """Integer step counts per chunk plus the bookkeeping behind them."""

    k: np.ndarray                 # (M,) int
    weights: np.ndarray           # (M,) softmax weights (one-hot argmax in greedy mode)
    k_rem: int                    # budget left after coverage
    remainders: np.ndarray        # fractional parts behind the largest-remainder step
    residual: int                 # number of +1 increments handed out
    mode: str                     # "feasible" | "fallback"
    config: AllocatorConfig

    @property
    def total(self) -> int:
        return int(self.k.sum())

    def to_dict(self) -> dict:
        return {
            "k": self.k.tolist(),
            "weights": self.weights.tolist(),
            "k_rem": self.k_rem,
            "remainders": self.remainders.tolist(),
            "residual": self.residual,
            "mode": self.mode,
            "config": dataclasses.asdict(self.config),
        }


def softmax_weights(utilities, tau: float) -> np.ndarray:
    """exp(U/tau) normalized, computed with max subtraction."""
    if not (tau > 0.0) or not math.isfinite(tau):
        raise InvalidArgumentError("tau must be a finite positive number")
    u = np.asarray(utilities, dtype=np.float64)
    if u.size < 1:
        raise InvalidArgumentError("need at least one chunk")
    if not np.isfinite(u).all():
        raise InvalidArgumentError("utilities must be finite")
    z = u / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def largest_remainder(remainders, residual: int, priority=None) -> np.ndarray:
    """0/1 increments for the `residual` largest fractional remainders.

    Ties break by higher `priority` (the caller's utilities) when given, then
    toward the lower chunk index.
    """
    r = np.asarray(remainders, dtype=np.float64)
    if not 0 <= residual < r.size:
        raise InvalidArgumentError(
            f"residual count {residual} must lie in [0, {r.size})"
        )
    inc = np.zeros(r.size, dtype=np.int64)
    if residual:
        if priority is None:
            order = np.argsort(-r, kind="stable")  # stable sort => lower index wins ties
        else:
            pr = np.asarray(priority, dtype=np.float64)
            order = np.lexsort((np.arange(r.size), -pr, -r))
        inc[order[:residual]] = 1
    return inc


def allocate(utilities, config: AllocatorConfig) -> AllocationSchedule:
    """Turn chunk utilities and a budget into an exact integer schedule.

    Feasible (k_total >= M*k_min): every chunk gets k_min, the remainder is
    split as floor(k_rem * w_c) plus largest-remainder increments.
    Infeasible (k_min > 0): the top floor(k_total/k_min) chunks by utility get
    k_min each and the leftover k_total mod k_min goes to the single
    highest-utility chunk, so the whole budget is always spent.
    """
    u = np.asarray(utilities, dtype=np.float64)
    if u.size < 1:
        raise InvalidArgumentError("need at least one chunk")
    if not np.isfinite(u).all():
        raise InvalidArgumentError("utilities must be finite")
    M = u.size
    w = softmax_weights(u, config.tau)
    if config.greedy:
        w = np.zeros(M)
        w[int(np.argmax(u))] = 1.0  # argmax ties resolve to the lower index

    if config.k_total < M * config.k_min:
        # coverage cannot be satisfied; invest in the best chunks first
        top = int(config.k_total // config.k_min)
        order = np.argsort(-u, kind="stable")
        k = np.zeros(M, dtype=np.int64)
        k[order[:top]] = config.k_min
        k[order[0]] += int(config.k_total % config.k_min)
        return AllocationSchedule(k=k, weights=w, k_rem=0,
                                  remainders=np.zeros(M), residual=0,
                                  mode="fallback", config=config)

    k_rem = config.k_total - M * config.k_min
    targets = k_rem * w
    # the 1e-9 nudge keeps exact proportions (e.g. 3 * 1/3) from flooring low
    floors = np.floor(targets + 1e-9).astype(np.int64)
    remainders = targets - floors
    residual = int(k_rem - floors.sum())
    if residual == M:  # unreachable after the nudge, kept as a hard guarantee
        floors += 1
        remainders = np.zeros(M)
        residual = 0
    # utilities as the tie priority keep the schedule monotone even when two
    # distinct utilities collapse to the same float weight
    inc = largest_remainder(remainders, residual, priority=u)
    k = config.k_min + floors + inc
    return AllocationSchedule(k=k, weights=w, k_rem=int(k_rem),
                              remainders=remainders, residual=residual,
                              mode="feasible", config=config)


def uniform_schedule(num_chunks: int, k_total: int) -> AllocationSchedule:
    """Equal-as-possible split; earlier chunks take the extras.

    Chunk-order-matched uniform baseline for comparisons against the gated
    schedule at the same per-step cost.
    """
    if num_chunks < 1:
        raise InvalidArgumentError("num_chunks must be >= 1")
    if k_total < 0:
        raise InvalidArgumentError("k_total must be >= 0")
    base, extra = divmod(k_total, num_chunks)
    k = np.full(num_chunks, base, dtype=np.int64)
    k[:extra] += 1
    cfg = AllocatorConfig(k_total=k_total, k_min=0, tau=1.0)
    return AllocationSchedule(k=k, weights=np.full(num_chunks, 1.0 / num_chunks),
                              k_rem=k_total, remainders=np.zeros(num_chunks),
                              residual=int(extra), mode="feasible", config=cfg)
