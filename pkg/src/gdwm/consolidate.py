"""Chunk-restricted gradient consolidation into fast weights.

The full pipeline: prefill and freeze the cache, estimate chunk utilities with
zero adapters, allocate the step budget, then walk the chunks in ascending
order performing minibatch adapter updates. A global-uniform-sampling baseline
shares the same per-step cost model so step counts are a fair budget unit.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch

from .allocator import AllocationSchedule, AllocatorConfig, allocate
from .corpus import ChunkPartition, TokenSequence, partition, positions_of
from .errors import EmptyInputError, InvalidArgumentError, NumericalError, RunAbortedError
from .model import DTYPE, FastWeights, FrozenModel, KVCache
from .utility import UtilityProfile, estimate_utilities

GATE_CHOICES = ("abs", "positive_part", "surprisal", "uniform")


@dataclass(frozen=True)
class ConsolidationConfig:
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    adapter_rank: int = 16
    adapter_alpha: float = 32.0
    adapter_init_scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if not self.lr > 0:
            raise InvalidArgumentError("lr must be > 0")


@dataclass(frozen=True)
class MinibatchSample:
    """B positions drawn i.i.d. with replacement from one chunk (or globally)."""

    chunk: Optional[int]       # 1-based chunk index, or None for global draws
    positions: np.ndarray


def sample_minibatch(positions: np.ndarray, batch_size: int,
                     rng: np.random.Generator, chunk: Optional[int] = None) -> MinibatchSample:
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        raise EmptyInputError("cannot sample from an empty position set")
    draw = rng.choice(positions, size=batch_size, replace=True)
    return MinibatchSample(chunk=chunk, positions=draw)


def optimizer_step(fast: FastWeights, grads: Dict[str, torch.Tensor],
                   cfg: ConsolidationConfig) -> None:
    """Bias-corrected adaptive-moment update on the adapter parameters only.

    A non-finite gradient aborts the step with state and parameters unchanged.
    """
    for name, g in grads.items():
        if g.shape != fast.params[name].shape:
            raise InvalidArgumentError(f"gradient shape mismatch for {name}")
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name}; step aborted")
    if fast.opt_m is None:
        fast.opt_m = {k: torch.zeros_like(v) for k, v in fast.params.items()}
        fast.opt_v = {k: torch.zeros_like(v) for k, v in fast.params.items()}
    fast.opt_step += 1
    t = fast.opt_step
    with torch.no_grad():
        for name, g in grads.items():
            m, v = fast.opt_m[name], fast.opt_v[name]
            m.mul_(cfg.beta1).add_(g, alpha=1 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1 - cfg.beta2)
            m_hat = m / (1 - cfg.beta1 ** t)
            v_hat = v / (1 - cfg.beta2 ** t)
            p = fast.params[name]
            if cfg.weight_decay:
                p.mul_(1 - cfg.lr * cfg.weight_decay)
            p.addcdiv_(m_hat, v_hat.sqrt().add_(cfg.eps), value=-cfg.lr)


@dataclass
class TraceRow:
    step: int
    chunk: Optional[int]
    loss: float
    grad_norm: float
    positions: np.ndarray

    def as_tuple(self):
        return (self.step, 0 if self.chunk is None else self.chunk, self.loss, self.grad_norm)


@dataclass
class AdaptationReport:
    """Everything one adaptation run produced, for audit and comparison."""

    policy: str
    seed: int
    schedule: Optional[AllocationSchedule]
    utility: Optional[UtilityProfile]
    trace: List[TraceRow]
    fast: Optional[FastWeights]
    prefill_s: float = 0.0
    utility_s: float = 0.0
    consolidate_s: float = 0.0
    failed: bool = False
    config: Optional[ConsolidationConfig] = None

    @property
    def total_s(self) -> float:
        return self.prefill_s + self.utility_s + self.consolidate_s

    @property
    def steps(self) -> int:
        return len(self.trace)

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.trace])

    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.trace])

    def sampled_positions(self) -> np.ndarray:
        if not self.trace:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([r.positions for r in self.trace])

    def time_breakdown(self) -> dict:
        return {
            "prefill_s": self.prefill_s,
            "utility_s": self.utility_s,
            "consolidate_s": self.consolidate_s,
            "total_s": self.total_s,
        }


def _grad_global_norm(grads: Dict[str, torch.Tensor]) -> float:
    return float(torch.sqrt(sum((g * g).sum() for g in grads.values())))


def consolidate_chunk(model: FrozenModel, fast: FastWeights, cache: KVCache,
                      seq: TokenSequence, chunk_positions: np.ndarray, steps: int,
                      cfg: ConsolidationConfig, rng: np.random.Generator,
                      chunk_index: Optional[int] = None,
                      step_offset: int = 0) -> List[TraceRow]:
    """Exactly `steps` minibatch updates restricted to one chunk's positions."""
    if steps < 0:
        raise InvalidArgumentError("steps must be >= 0")
    rows: List[TraceRow] = []
    for j in range(steps):
        batch = sample_minibatch(chunk_positions, cfg.batch_size, rng, chunk=chunk_index)
        loss, grads = model.grad_fast_weights(fast, cache, seq, batch.positions)
        optimizer_step(fast, grads, cfg)
        rows.append(TraceRow(step=step_offset + j + 1, chunk=chunk_index, loss=loss,
                             grad_norm=_grad_global_norm(grads), positions=batch.positions))
    return rows


def _eval_positions(part: ChunkPartition, chunk: int) -> np.ndarray:
    """Chunk positions that can carry a loss (position 1 has no prefix)."""
    pos = positions_of(part, chunk)
    return pos[pos >= 2]


def run_gdwm(model: FrozenModel, seq: TokenSequence, chunk_size: int, window: int,
             gate_mode: str, alloc_cfg: AllocatorConfig, cons_cfg: ConsolidationConfig,
             adapt_length: Optional[int] = None) -> AdaptationReport:
    """Prefill, gate, allocate, consolidate — the full gated pipeline.

    `adapt_length` optionally restricts the run to a prefix of the sequence
    (used when trailing query tokens must stay held out); the default adapts
    on the whole sequence.
    """
    if gate_mode not in GATE_CHOICES:
        raise InvalidArgumentError(f"gate_mode must be one of {GATE_CHOICES}")
    if adapt_length is not None:
        if not 2 <= adapt_length <= seq.length:
            raise InvalidArgumentError("adapt_length must lie in [2, L]")
        seq = TokenSequence(np.asarray(seq.tokens)[:adapt_length])
    report = AdaptationReport(policy="gdwm", seed=cons_cfg.seed, schedule=None,
                              utility=None, trace=[], fast=None, config=cons_cfg)
    ss = np.random.SeedSequence((cons_cfg.seed, 0x6D3A))
    init_seed, sample_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    try:
        t0 = time.perf_counter()
        cache = model.prefill_and_freeze(seq)
        report.prefill_s = time.perf_counter() - t0

        part = partition(seq, chunk_size)
        if gate_mode == "uniform":
            # gate ablation: every chunk weighted equally, no utility passes
            profile = None
            utilities = np.zeros(part.num_chunks)
        else:
            t0 = time.perf_counter()
            profile = estimate_utilities(model, seq, part, window, gate_mode)
            report.utility_s = time.perf_counter() - t0
            utilities = profile.chunk_utilities
        report.utility = profile

        schedule = allocate(utilities, alloc_cfg)
        report.schedule = schedule

        fast = FastWeights.create(model.config, rank=cons_cfg.adapter_rank,
                                  alpha=cons_cfg.adapter_alpha, seed=init_seed,
                                  init_scale=cons_cfg.adapter_init_scale)
        report.fast = fast
        rng = np.random.default_rng(np.random.PCG64(sample_seed))
        t0 = time.perf_counter()
        for c in range(1, part.num_chunks + 1):
            steps = int(schedule.k[c - 1])
            if steps == 0:
                continue
            rows = consolidate_chunk(model, fast, cache, seq, _eval_positions(part, c),
                                     steps, cons_cfg, rng, chunk_index=c,
                                     step_offset=len(report.trace))
            report.trace.extend(rows)
        report.consolidate_s = time.perf_counter() - t0
    except Exception as exc:
        report.failed = True
        raise RunAbortedError(stage=_stage_of(report), report=report, cause=exc) from exc
    return report


def run_uniform_baseline(model: FrozenModel, seq: TokenSequence, k_total: int,
                         cons_cfg: ConsolidationConfig,
                         adapt_length: Optional[int] = None) -> AdaptationReport:
    """Global uniform sampling at a fixed step budget (no gating, no chunks)."""
    if k_total < 0:
        raise InvalidArgumentError("k_total must be >= 0")
    if adapt_length is not None:
        if not 2 <= adapt_length <= seq.length:
            raise InvalidArgumentError("adapt_length must lie in [2, L]")
        seq = TokenSequence(np.asarray(seq.tokens)[:adapt_length])
    report = AdaptationReport(policy="uniform", seed=cons_cfg.seed, schedule=None,
                              utility=None, trace=[], fast=None, config=cons_cfg)
    ss = np.random.SeedSequence((cons_cfg.seed, 0x6D3A))
    init_seed, sample_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    try:
        t0 = time.perf_counter()
        cache = model.prefill_and_freeze(seq)
        report.prefill_s = time.perf_counter() - t0
        fast = FastWeights.create(model.config, rank=cons_cfg.adapter_rank,
                                  alpha=cons_cfg.adapter_alpha, seed=init_seed,
                                  init_scale=cons_cfg.adapter_init_scale)
        report.fast = fast
        rng = np.random.default_rng(np.random.PCG64(sample_seed))
        all_positions = np.arange(2, seq.length + 1, dtype=np.int64)
        t0 = time.perf_counter()
        rows = consolidate_chunk(model, fast, cache, seq, all_positions, k_total,
                                 cons_cfg, rng, chunk_index=None, step_offset=0)
        report.trace.extend(rows)
        report.consolidate_s = time.perf_counter() - t0
    except Exception as exc:
        report.failed = True
        raise RunAbortedError(stage=_stage_of(report), report=report, cause=exc) from exc
    return report


def _stage_of(report: AdaptationReport) -> str:
    if report.prefill_s == 0.0:
        return "prefill"
    if report.policy == "gdwm" and report.schedule is None:
        return "gating/allocation"
    return "consolidation"
