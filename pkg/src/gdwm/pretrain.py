"""Seeded pretraining of the frozen base model.

The trainer consumes any iterable of TokenSequences, groups them into
equal-length batches, and runs plain AdamW on the next-token loss. It exists
as a stand-in for a pretrained base LM: small, reproducible, fast on CPU.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List

import numpy as np
import torch

from .corpus import TokenSequence
from .errors import EmptyInputError, InvalidArgumentError, TrainingDivergenceError
from .model import DTYPE, FrozenModel, ModelConfig, forward_batch_logits, init_params


@dataclass(frozen=True)
class PretrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 900
    batch_size: int = 8
    long_batch_size: int = 2      # used for sequences longer than `seq_len`
    seq_len: int = 512
    lr: float = 3e-3
    betas: tuple = (0.9, 0.98)
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    warmup_steps: int = 30
    final_eval_batches: int = 8

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d


@dataclass
class PretrainResult:
    model: FrozenModel
    final_nll: float
    loss_history: List[float]
    config: PretrainConfig
    seed: int


def _batches(corpus: Iterable[TokenSequence], cfg: PretrainConfig) -> Iterator[torch.Tensor]:
    """Group stream sequences into equal-length (B, T) batches.

    Sequences are bucketed by length; a bucket flushes when full, so mixed
    short/long streams produce deterministic interleaved batches.
    """
    buckets: dict = {}
    for seq in corpus:
        L = seq.length
        bsz = cfg.batch_size if L <= cfg.seq_len else cfg.long_batch_size
        buckets.setdefault(L, []).append(np.asarray(seq.tokens))
        if len(buckets[L]) >= bsz:
            yield torch.from_numpy(np.stack(buckets.pop(L)))


def _next_token_loss(params, model_cfg, ids: torch.Tensor) -> torch.Tensor:
    logits = forward_batch_logits(params, model_cfg, ids)
    return torch.nn.functional.cross_entropy(
        logits[:, :-1].reshape(-1, model_cfg.vocab_size), ids[:, 1:].reshape(-1)
    )


def pretrain_base(corpus: Iterable[TokenSequence], config: PretrainConfig,
                  seed: int = 0) -> PretrainResult:
    """Train a base model from scratch; fully seeded and reproducible.

    Raises TrainingDivergenceError (with the offending step) if the loss
    becomes non-finite.
    """
    if config.steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    params = init_params(config.model, seed)
    for p in params.values():
        p.requires_grad_(True)
    opt = torch.optim.AdamW(list(params.values()), lr=config.lr, betas=config.betas,
                            weight_decay=config.weight_decay, eps=1e-9)
    stream = _batches(corpus, config)
    history: List[float] = []
    for step in range(config.steps):
        try:
            ids = next(stream)
        except StopIteration:
            raise EmptyInputError(
                f"corpus exhausted after {step} steps; need {config.steps}"
            ) from None
        for group in opt.param_groups:
            group["lr"] = config.lr * min(1.0, (step + 1) / max(1, config.warmup_steps))
        loss = _next_token_loss(params, config.model, ids)
        if not torch.isfinite(loss):
            raise TrainingDivergenceError(step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(list(params.values()), config.grad_clip)
        opt.step()
        history.append(float(loss.detach()))

    # held-out estimate of the final NLL on fresh stream batches
    evals = []
    with torch.no_grad():
        for _ in range(config.final_eval_batches):
            try:
                ids = next(stream)
            except StopIteration:
                break
            evals.append(float(_next_token_loss(params, config.model, ids)))
    final_nll = float(np.mean(evals)) if evals else float(np.mean(history[-10:]))
    model = FrozenModel(config.model, params)
    return PretrainResult(model=model, final_nll=final_nll, loss_history=history,
                          config=config, seed=seed)
