"""Numerical checks of the variance-reduction and fragmentation theory.

Variance statistics use the population (divide-by-N) convention throughout;
mutual informations in the synergy report are in bits, divergences elsewhere
in nats. Every decomposition computes its identity's two sides independently
and reports the residual.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .allocator import AllocatorConfig
from .consolidate import AdaptationReport, ConsolidationConfig, run_gdwm
from .corpus import partition
from .errors import EmptyInputError, InvalidArgumentError
from .model import FrozenModel
from .synthtasks import SyntheticTaskSpec, TaskInstance, eval_task, gen_multihop


# ---------------------------------------------------------------------------
# Law-of-total-variance decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientPopulationStats:
    """Per-chunk moments and the intra/inter split of the pooled variance."""

    chunk_ids: List[int]
    counts: np.ndarray
    means: np.ndarray          # (M,) for scalars, (M, k) for vectors
    variances: np.ndarray      # per-chunk population variance (trace for vectors)
    probabilities: np.ndarray  # p_c = n_c / N
    global_mean: np.ndarray
    intra: float               # E_c[sigma_c^2]
    inter: float               # Var_c(mu_c)
    pooled: float              # population variance of all samples, computed directly
    residual: float            # |intra + inter - pooled|


def variance_decomposition(samples: Mapping[int, np.ndarray]) -> GradientPopulationStats:
    """Split the pooled population variance into intra- and inter-chunk terms.

    `samples` maps a chunk id to its gradient samples: shape (n,) for scalars
    or (n, k) for vectors, where the variance is the covariance trace.
    """
    if not samples:
        raise EmptyInputError("no samples")
    chunk_ids = sorted(samples.keys())
    arrays = []
    for c in chunk_ids:
        a = np.asarray(samples[c], dtype=np.float64)
        if a.size == 0:
            raise InvalidArgumentError(f"chunk {c} has no samples")
        arrays.append(a.reshape(a.shape[0], -1))
    width = arrays[0].shape[1]
    if any(a.shape[1] != width for a in arrays):
        raise InvalidArgumentError("all chunks must share the gradient dimensionality")
    counts = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    total = int(counts.sum())
    probs = counts / total
    means = np.stack([a.mean(axis=0) for a in arrays])
    variances = np.array([a.var(axis=0).sum() for a in arrays])  # ddof=0, trace
    global_mean = probs @ means
    intra = float(probs @ variances)
    inter = float(probs @ ((means - global_mean) ** 2).sum(axis=1))
    pooled = float(np.concatenate(arrays, axis=0).var(axis=0).sum())
    return GradientPopulationStats(
        chunk_ids=chunk_ids, counts=counts, means=means, variances=variances,
        probabilities=probs, global_mean=global_mean, intra=intra, inter=inter,
        pooled=pooled, residual=abs(intra + inter - pooled),
    )


# ---------------------------------------------------------------------------
# Testable predictions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormVarianceComparison:
    variance_a: float
    variance_b: float
    ratio: float  # a / b


def prediction_gradient_norm_variance(trace_a: Sequence[float],
                                      trace_b: Sequence[float]) -> NormVarianceComparison:
    """Population variance of per-step gradient norms for two traces, plus ratio."""
    a = np.asarray(trace_a, dtype=np.float64)
    b = np.asarray(trace_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InvalidArgumentError("traces must contain at least 2 steps")
    va, vb = float(a.var()), float(b.var())
    ratio = va / vb if vb > 0 else (1.0 if va == 0 else float("inf"))
    return NormVarianceComparison(variance_a=va, variance_b=vb, ratio=ratio)


@dataclass(frozen=True)
class CosineComparison:
    within_mean: float
    across_mean: float
    excluded_zero_norm: int


def prediction_cosine_similarity(samples: Mapping[int, np.ndarray]) -> CosineComparison:
    """Mean pairwise cosine of gradients within chunks vs across chunks."""
    chunk_ids = sorted(samples.keys())
    if len(chunk_ids) < 2:
        raise InvalidArgumentError("need at least 2 chunks")
    vecs: Dict[int, np.ndarray] = {}
    excluded = 0
    for c in chunk_ids:
        a = np.asarray(samples[c], dtype=np.float64).reshape(len(samples[c]), -1)
        norms = np.linalg.norm(a, axis=1)
        keep = norms > 0
        excluded += int((~keep).sum())
        a = a[keep] / norms[keep][:, None]
        if a.shape[0] < 2:
            raise InvalidArgumentError(f"chunk {c} has fewer than 2 usable samples")
        vecs[c] = a
    within, across = [], []
    for c in chunk_ids:
        g = vecs[c] @ vecs[c].T
        within.extend(g[np.triu_indices(g.shape[0], k=1)])
    for c1, c2 in itertools.combinations(chunk_ids, 2):
        across.extend((vecs[c1] @ vecs[c2].T).ravel())
    return CosineComparison(within_mean=float(np.mean(within)),
                            across_mean=float(np.mean(across)),
                            excluded_zero_norm=excluded)


def prediction_loss_monotonicity(trace: Sequence[float]) -> int:
    """Number of sign changes in successive loss differences (oscillations)."""
    t = np.asarray(trace, dtype=np.float64)
    if t.size < 3:
        raise InvalidArgumentError("trace must contain at least 3 losses")
    signs = np.sign(np.diff(t))
    signs = signs[signs != 0]
    if signs.size < 2:
        return 0
    return int((signs[1:] * signs[:-1] < 0).sum())


# ---------------------------------------------------------------------------
# Synergy / fragmentation on exact discrete tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynergyReport:
    """Exact mutual informations (bits) over a joint (C1, C2, G) table."""

    mi_c1_g: float
    mi_c2_g: float
    mi_joint_g: float            # I((C1, C2); G)
    mi_c2_g_given_c1: float
    fragmentation_gap: float     # I(E;G) - I(C1;G) - I(C2;G)
    interaction_information: float  # I(C1;C2;G) = I(C2;G) - I(C2;G | C1)
    identity_residual: float     # |gap + interaction|

    def to_dict(self) -> dict:
        return dict(dataclasses.asdict(self), unit="bits")


def _mi_bits(joint: np.ndarray) -> float:
    """I(X;Y) by direct summation over a 2-D joint table (0 log 0 := 0)."""
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    ratio = np.ones_like(joint)
    np.divide(joint, px @ py, out=ratio, where=mask)
    return float((joint[mask] * np.log2(ratio[mask])).sum())


def synergy_gap(joint: np.ndarray) -> SynergyReport:
    """Fragmentation gap and interaction information of a (C1, C2, G) table.

    The two quantities are computed along independent routes — the gap from
    three pairwise mutual informations, the interaction from a conditional
    one — and the report carries the residual of the identity gap = -I3.
    """
    j = np.asarray(joint, dtype=np.float64)
    if j.ndim != 3:
        raise InvalidArgumentError("joint table must have shape (|C1|, |C2|, |G|)")
    if j.size > 1 << 16:
        raise InvalidArgumentError("table too large for exact enumeration (max 2^16 cells)")
    if (j < -1e-15).any():
        raise InvalidArgumentError("probabilities must be nonnegative")
    if abs(j.sum() - 1.0) > 1e-12:
        raise InvalidArgumentError("table must sum to 1 within 1e-12")
    n1, n2, ng = j.shape
    mi_c1_g = _mi_bits(j.sum(axis=1))
    mi_c2_g = _mi_bits(j.sum(axis=0))
    mi_joint_g = _mi_bits(j.reshape(n1 * n2, ng))
    # I(C2; G | C1) = sum_c1 p(c1) * I(C2; G) under p(. , . | c1)
    cond = 0.0
    for c1 in range(n1):
        p1 = j[c1].sum()
        if p1 > 0:
            cond += p1 * _mi_bits(j[c1] / p1)
    gap = mi_joint_g - mi_c1_g - mi_c2_g
    interaction = mi_c2_g - cond
    return SynergyReport(
        mi_c1_g=mi_c1_g, mi_c2_g=mi_c2_g, mi_joint_g=mi_joint_g,
        mi_c2_g_given_c1=cond, fragmentation_gap=gap,
        interaction_information=interaction,
        identity_residual=abs(gap + interaction),
    )


def builtin_table(name: str) -> np.ndarray:
    """Small reference joints: xor (synergy), independent, redundant copy."""
    t = np.zeros((2, 2, 2))
    if name == "xor":
        for c1, c2 in itertools.product(range(2), range(2)):
            t[c1, c2, c1 ^ c2] = 0.25
    elif name == "independent":
        t[:] = 0.125
    elif name == "redundant":
        t[0, 0, 0] = 0.5
        t[1, 1, 1] = 0.5
    else:
        raise InvalidArgumentError(f"unknown builtin table {name!r}")
    return t


# ---------------------------------------------------------------------------
# Fragmentation sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FragmentationRow:
    chunk_size: int
    seed: int
    nll_before: float
    nll_after: float
    evidence_rank: int  # best (lowest) utility rank among evidence chunks

    def as_tuple(self):
        return (self.chunk_size, self.seed, self.nll_before, self.nll_after,
                self.evidence_rank)


def fragmentation_sweep(model: FrozenModel, spec: SyntheticTaskSpec,
                        chunk_sizes: Sequence[int], window: int,
                        alloc_cfg: AllocatorConfig, cons_cfg: ConsolidationConfig,
                        seeds: Sequence[int], gate_mode: str = "abs") -> List[FragmentationRow]:
    """Run the gated pipeline at each chunk size over a shared instance set."""
    for S in chunk_sizes:
        if S < 1:
            raise InvalidArgumentError("chunk sizes must be >= 1")
    rows: List[FragmentationRow] = []
    for seed in seeds:
        instance = gen_multihop(dataclasses.replace(spec, seed=seed))
        for S in chunk_sizes:
            report = run_gdwm(model, instance.sequence, S, window, gate_mode,
                              alloc_cfg, dataclasses.replace(cons_cfg, seed=seed),
                              adapt_length=instance.adapt_length)
            ev = eval_task(model, report.fast, instance)
            # utility ranks come from the adaptation-prefix partition
            adapt_part = partition(_adapt_prefix(instance), S)
            ranks = _evidence_ranks(report, adapt_part, instance)
            rows.append(FragmentationRow(
                chunk_size=S, seed=seed, nll_before=ev.nll_before,
                nll_after=ev.nll_after, evidence_rank=min(ranks) if ranks else 0,
            ))
    return rows


def _adapt_prefix(instance: TaskInstance):
    from .corpus import TokenSequence
    return TokenSequence(np.asarray(instance.sequence.tokens)[: instance.adapt_length])


def _evidence_ranks(report: AdaptationReport, part, instance: TaskInstance) -> List[int]:
    if report.utility is None:
        return []
    u = report.utility.chunk_utilities
    order = np.argsort(-u, kind="stable")
    rank_of = np.empty(order.size, dtype=np.int64)
    rank_of[order] = np.arange(1, order.size + 1)
    chunks = {part.chunk_of(p) for p in instance.evidence_positions
              if p <= part.length}
    return [int(rank_of[c - 1]) for c in sorted(chunks)]
