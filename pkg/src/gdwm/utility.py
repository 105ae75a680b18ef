"""Contextual utility: per-position surprisal divergence aggregated per chunk.

The divergence at position t compares the model's full-prefix prediction with
its local-window prediction. Positions whose window coincides with the full
prefix (t <= window+1) reuse the global value, so their divergence is zero
exactly, not merely to float tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .corpus import ChunkPartition, TokenSequence
from .errors import ConsistencyError, InvalidArgumentError

GATE_MODES = ("abs", "positive_part", "surprisal")


class SequenceModel(Protocol):
    """What the utility pass needs from a model (duck-typed; tests may use
    exact tabular stand-ins)."""

    def base_logprobs_all(self, seq: TokenSequence) -> np.ndarray: ...

    def local_logprobs(self, seq: TokenSequence, window: int, positions) -> np.ndarray: ...


@dataclass(frozen=True)
class UtilityProfile:
    """Per-position divergences and per-chunk utilities (nats)."""

    window: int
    gate_mode: str
    positions: np.ndarray          # evaluated positions (t >= 2)
    delta: np.ndarray              # divergence at each evaluated position
    chunk_utilities: np.ndarray    # (M,) mean divergence per chunk
    evaluated_counts: np.ndarray   # (M,) evaluated positions per chunk
    empty_chunk_flags: np.ndarray  # (M,) True where a chunk had nothing to evaluate
    wall_time_s: float = 0.0

    def delta_at(self, t: int) -> float:
        idx = np.nonzero(self.positions == t)[0]
        if idx.size == 0:
            raise KeyError(t)
        return float(self.delta[idx[0]])


def surprisal_divergence(global_lp, local_lp, gate_mode: str = "abs") -> np.ndarray:
    """Per-position divergence under the chosen gate.

    abs           |log P_full - log P_local|
    positive_part max(0, log P_full - log P_local)
    surprisal     -log P_local  (difficulty only; ignores the global pass)
    """
    if gate_mode not in GATE_MODES:
        raise InvalidArgumentError(f"unknown gate_mode {gate_mode!r}")
    g_pos, g_val = _as_arrays(global_lp)
    l_pos, l_val = _as_arrays(local_lp)
    if g_pos.shape != l_pos.shape or not np.array_equal(g_pos, l_pos):
        raise ConsistencyError("global and local passes must cover the same positions")
    if gate_mode == "abs":
        return np.abs(g_val - l_val)
    if gate_mode == "positive_part":
        return np.maximum(0.0, g_val - l_val)
    return -l_val


def _as_arrays(lp):
    if hasattr(lp, "positions") and hasattr(lp, "values"):
        return np.asarray(lp.positions, dtype=np.int64), np.asarray(lp.values, dtype=np.float64)
    pos, val = lp
    return np.asarray(pos, dtype=np.int64), np.asarray(val, dtype=np.float64)


def chunk_utility(part: ChunkPartition, positions: np.ndarray, delta: np.ndarray,
                  window: int, gate_mode: str, wall_time_s: float = 0.0) -> UtilityProfile:
    """Average the divergence over each chunk's evaluated positions.

    Position 1 carries no divergence and is excluded from both numerator and
    denominator; a chunk left with no evaluated positions gets utility 0 and
    a warning flag.
    """
    positions = np.asarray(positions, dtype=np.int64)
    delta = np.asarray(delta, dtype=np.float64)
    if positions.shape != delta.shape:
        raise InvalidArgumentError("positions and delta must align")
    M = part.num_chunks
    chunk_idx = (positions - 1) // part.chunk_size  # 0-based chunk per position
    sums = np.zeros(M)
    counts = np.zeros(M, dtype=np.int64)
    np.add.at(sums, chunk_idx, delta)
    np.add.at(counts, chunk_idx, 1)
    empty = counts == 0
    utils = np.where(empty, 0.0, sums / np.maximum(counts, 1))
    return UtilityProfile(window=window, gate_mode=gate_mode, positions=positions,
                          delta=delta, chunk_utilities=utils, evaluated_counts=counts,
                          empty_chunk_flags=empty, wall_time_s=wall_time_s)


def estimate_utilities(model: SequenceModel, seq: TokenSequence, part: ChunkPartition,
                       window: int, gate_mode: str = "abs") -> UtilityProfile:
    """Run the global and local passes over all positions t >= 2 and aggregate.

    The local pass is only evaluated where the window is a proper suffix of
    the prefix (t > window+1); where the window covers the whole prefix both
    conditionals coincide, so the global value is reused and the divergence
    there is exactly zero. Wall time is recorded so callers can report the
    utility share of a run.
    """
    if part.length != seq.length:
        raise ConsistencyError("partition was not built on this sequence")
    if window < 1:
        raise InvalidArgumentError("window must be >= 1")
    t0 = time.perf_counter()
    L = seq.length
    positions = np.arange(2, L + 1, dtype=np.int64)
    global_all = model.base_logprobs_all(seq)
    g_val = global_all[positions]
    l_val = g_val.copy()
    windowed = positions[positions > window + 1]
    if windowed.size:
        l_val[windowed - 2] = model.local_logprobs(seq, window, windowed)
    delta = surprisal_divergence((positions, g_val), (positions, l_val), gate_mode)
    wall = time.perf_counter() - t0
    return chunk_utility(part, positions, delta, window, gate_mode, wall_time_s=wall)


def utility_rows(profile: UtilityProfile):
    """Rows (chunk, utility, evaluated_positions) for CSV export."""
    return [
        (c + 1, float(profile.chunk_utilities[c]), int(profile.evaluated_counts[c]))
        for c in range(profile.chunk_utilities.size)
    ]


def delta_rows(profile: UtilityProfile):
    """Rows (position, delta) for CSV export."""
    return [(int(t), float(d)) for t, d in zip(profile.positions, profile.delta)]
