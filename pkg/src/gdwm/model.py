"""Tiny decoder-only transformer with frozen base weights and low-rank fast weights.

Three forward paths share one set of parameters:

* a batched causal forward (fused attention) used for pretraining and for
  re-encoding local windows;
* a blocked full-sequence scan that also extracts the key/value cache;
* a per-column forward in which adapted queries and output projections attend
  to the frozen cache — the path that consolidation differentiates.

Everything runs in float64 on CPU. The loss at an evaluated position depends
on the fast weights only through that position's own residual stream, because
all cached keys/values are constants; gradients therefore cost one column
recomputation per minibatch position per layer.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import TokenSequence, VOCAB_SIZE
from .errors import (
    CapacityError,
    ConsistencyError,
    InvalidArgumentError,
    NumericalError,
)

DTYPE = torch.float64
_LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_mlp: int = 256
    context_limit: int = 4096
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise InvalidArgumentError("d_model must be divisible by n_heads")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def init_params(cfg: ModelConfig, seed: int) -> Dict[str, torch.Tensor]:
    """Seeded base-parameter initialization (numpy RNG for portability)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x00DE1)))
    std = 0.02
    resid_std = std / math.sqrt(2 * cfg.n_layers)

    def norm(*shape, scale=std):
        return torch.from_numpy(rng.normal(0.0, scale, size=shape)).to(DTYPE)

    p: Dict[str, torch.Tensor] = {"embed": norm(cfg.vocab_size, cfg.d_model)}
    for l in range(cfg.n_layers):
        p[f"ln1.{l}.w"] = torch.ones(cfg.d_model, dtype=DTYPE)
        p[f"ln1.{l}.b"] = torch.zeros(cfg.d_model, dtype=DTYPE)
        p[f"wq.{l}"] = norm(cfg.d_model, cfg.d_model)
        p[f"wk.{l}"] = norm(cfg.d_model, cfg.d_model)
        p[f"wv.{l}"] = norm(cfg.d_model, cfg.d_model)
        p[f"wo.{l}"] = norm(cfg.d_model, cfg.d_model, scale=resid_std)
        p[f"ln2.{l}.w"] = torch.ones(cfg.d_model, dtype=DTYPE)
        p[f"ln2.{l}.b"] = torch.zeros(cfg.d_model, dtype=DTYPE)
        p[f"w1.{l}"] = norm(cfg.d_model, cfg.d_mlp)
        p[f"b1.{l}"] = torch.zeros(cfg.d_mlp, dtype=DTYPE)
        p[f"w2.{l}"] = norm(cfg.d_mlp, cfg.d_model, scale=resid_std)
        p[f"b2.{l}"] = torch.zeros(cfg.d_model, dtype=DTYPE)
    p["lnf.w"] = torch.ones(cfg.d_model, dtype=DTYPE)
    p["lnf.b"] = torch.zeros(cfg.d_model, dtype=DTYPE)
    p["head"] = norm(cfg.d_model, cfg.vocab_size)
    return p


def _rope_tables(cfg: ModelConfig, positions: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    half = cfg.d_head // 2
    inv_freq = cfg.rope_base ** (-torch.arange(half, dtype=DTYPE) * 2.0 / cfg.d_head)
    ang = positions.to(DTYPE)[:, None] * inv_freq[None, :]
    return torch.cos(ang), torch.sin(ang)


def _rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate (..., T, d_head) at per-row angles; attention then depends only on offsets."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)


def _ln(x, w, b):
    return F.layer_norm(x, (x.shape[-1],), w, b, eps=_LN_EPS)


def forward_batch_logits(params: Dict[str, torch.Tensor], cfg: ModelConfig,
                         ids: torch.Tensor) -> torch.Tensor:
    """Plain causal forward on an (B, T) id batch; differentiable w.r.t. params."""
    B, T = ids.shape
    H, dh = cfg.n_heads, cfg.d_head
    cos, sin = _rope_tables(cfg, torch.arange(T))
    x = params["embed"][ids]
    for l in range(cfg.n_layers):
        a = _ln(x, params[f"ln1.{l}.w"], params[f"ln1.{l}.b"])
        q = (a @ params[f"wq.{l}"]).view(B, T, H, dh).transpose(1, 2)
        k = (a @ params[f"wk.{l}"]).view(B, T, H, dh).transpose(1, 2)
        v = (a @ params[f"wv.{l}"]).view(B, T, H, dh).transpose(1, 2)
        q, k = _rope(q, cos, sin), _rope(k, cos, sin)
        o = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + o.transpose(1, 2).reshape(B, T, cfg.d_model) @ params[f"wo.{l}"]
        b = _ln(x, params[f"ln2.{l}.w"], params[f"ln2.{l}.b"])
        x = x + F.gelu(b @ params[f"w1.{l}"] + params[f"b1.{l}"]) @ params[f"w2.{l}"] + params[f"b2.{l}"]
    return _ln(x, params["lnf.w"], params["lnf.b"]) @ params["head"]


# ---------------------------------------------------------------------------
# Fast weights (low-rank adapters on query / output projections)
# ---------------------------------------------------------------------------

ADAPTED_PROJECTIONS = ("q", "o")


@dataclass
class FastWeights:
    """Per-layer rank-r factor pairs on the query and output projections.

    The second factor is zero-initialized, so a fresh instance contributes the
    zero matrix and the adapted model coincides with the base model. Optimizer
    moment slots live here so one adaptation trajectory owns its state.
    """

    rank: int
    alpha: float
    n_layers: int
    params: Dict[str, torch.Tensor]
    opt_m: Optional[Dict[str, torch.Tensor]] = None
    opt_v: Optional[Dict[str, torch.Tensor]] = None
    opt_step: int = 0

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @staticmethod
    def create(cfg: ModelConfig, rank: int = 16, alpha: float = 32.0,
               seed: int = 0, init_scale: float = 0.02) -> "FastWeights":
        if rank < 1:
            raise InvalidArgumentError("rank must be >= 1")
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xADA97)))
        params: Dict[str, torch.Tensor] = {}
        for l in range(cfg.n_layers):
            for proj in ADAPTED_PROJECTIONS:
                a = torch.from_numpy(rng.normal(0.0, init_scale, size=(cfg.d_model, rank))).to(DTYPE)
                b = torch.zeros(rank, cfg.d_model, dtype=DTYPE)
                a.requires_grad_(True)
                b.requires_grad_(True)
                params[f"{l}.{proj}.A"] = a
                params[f"{l}.{proj}.B"] = b
        return FastWeights(rank=rank, alpha=alpha, n_layers=cfg.n_layers, params=params)

    def keys(self):
        return list(self.params.keys())

    def clone(self) -> "FastWeights":
        params = {k: v.detach().clone().requires_grad_(True) for k, v in self.params.items()}
        return FastWeights(self.rank, self.alpha, self.n_layers, params)

    def delta_norm(self) -> float:
        """Frobenius norm of the total weight contribution (0 for a fresh instance)."""
        with torch.no_grad():
            total = 0.0
            for l in range(self.n_layers):
                for proj in ADAPTED_PROJECTIONS:
                    d = self.params[f"{l}.{proj}.A"] @ self.params[f"{l}.{proj}.B"]
                    total += float((d * d).sum())
            return math.sqrt(total) * self.scaling


def _adapted(x: torch.Tensor, w: torch.Tensor, fast: Optional[FastWeights],
             layer: int, proj: str) -> torch.Tensor:
    y = x @ w
    if fast is not None:
        a = fast.params[f"{layer}.{proj}.A"]
        b = fast.params[f"{layer}.{proj}.B"]
        y = y + ((x @ a) @ b) * fast.scaling
    return y


# ---------------------------------------------------------------------------
# KV cache
# ---------------------------------------------------------------------------

@dataclass
class KVCache:
    """Frozen per-layer keys (rotated) and values for all positions of one sequence."""

    length: int
    keys: Tuple[torch.Tensor, ...]    # each (H, L, d_head)
    values: Tuple[torch.Tensor, ...]  # each (H, L, d_head)
    token_digest: str                 # sha256 of the token bytes it was built on

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for t in self.keys + self.values:
            h.update(t.numpy().tobytes())
        return h.hexdigest()


def _ids_tensor(seq: TokenSequence) -> torch.Tensor:
    # copy: TokenSequence arrays are frozen and torch wants writable buffers
    return torch.from_numpy(np.asarray(seq.tokens).copy())


def _token_digest(seq: TokenSequence) -> str:
    return hashlib.sha256(seq.to_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Position log-probabilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PositionLogProbs:
    """log P(x_t | context) for a set of 1-indexed positions t.

    ``mode`` records the conditioning convention: "full" conditions on the
    entire prefix, "local" on the trailing window of ``window`` tokens.
    """

    positions: np.ndarray
    values: np.ndarray
    mode: str
    window: Optional[int] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if pos.shape != val.shape:
            raise InvalidArgumentError("positions and values must align")
        if val.size and val.max() > 0.0:
            raise NumericalError("log-probabilities must be <= 0")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "values", val)

    def as_dict(self) -> Dict[int, float]:
        return {int(t): float(v) for t, v in zip(self.positions, self.values)}

    def __getitem__(self, t: int) -> float:
        idx = np.nonzero(self.positions == t)[0]
        if idx.size == 0:
            raise KeyError(t)
        return float(self.values[idx[0]])


def nll_loss(logprobs) -> float:
    """Mean negative log-probability over a (multiset of) positions."""
    values = logprobs.values if isinstance(logprobs, PositionLogProbs) else np.asarray(logprobs, dtype=np.float64)
    if values.size == 0:
        raise InvalidArgumentError("nll_loss requires a nonempty minibatch")
    return float(-np.mean(values))


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------

class FrozenModel:
    """Base transformer with immutable parameters."""

    def __init__(self, config: ModelConfig, params: Dict[str, torch.Tensor]):
        self.config = config
        self.params = {k: v.detach().clone() for k, v in params.items()}
        for v in self.params.values():
            v.requires_grad_(False)

    @staticmethod
    def init_random(config: ModelConfig, seed: int = 0) -> "FrozenModel":
        return FrozenModel(config, init_params(config, seed))

    # -- full-sequence scan ------------------------------------------------

    def _check_ids(self, seq: TokenSequence):
        if seq.length > self.config.context_limit:
            raise CapacityError(
                f"sequence length {seq.length} exceeds context limit {self.config.context_limit}"
            )

    def scan(self, seq: TokenSequence, attn_block: int = 512) -> Tuple[torch.Tensor, KVCache]:
        """One causal pass over the whole sequence under base weights.

        Returns per-column logits and the frozen KV cache; attention is
        evaluated in query blocks to bound memory at long lengths.
        """
        self._check_ids(seq)
        cfg = self.config
        H, dh = cfg.n_heads, cfg.d_head
        ids = _ids_tensor(seq)
        L = ids.shape[0]
        cos, sin = _rope_tables(cfg, torch.arange(L))
        keys, values = [], []
        with torch.no_grad():
            x = self.params["embed"][ids]
            for l in range(cfg.n_layers):
                a = _ln(x, self.params[f"ln1.{l}.w"], self.params[f"ln1.{l}.b"])
                q = (a @ self.params[f"wq.{l}"]).view(L, H, dh).permute(1, 0, 2)
                k = (a @ self.params[f"wk.{l}"]).view(L, H, dh).permute(1, 0, 2)
                v = (a @ self.params[f"wv.{l}"]).view(L, H, dh).permute(1, 0, 2)
                q, k = _rope(q, cos, sin), _rope(k, cos, sin)
                out = torch.empty_like(q)
                for s in range(0, L, attn_block):
                    e = min(s + attn_block, L)
                    scores = q[:, s:e] @ k[:, :e].transpose(1, 2) / math.sqrt(dh)
                    mask = torch.arange(e)[None, :] > torch.arange(s, e)[:, None]
                    scores = scores.masked_fill(mask[None], float("-inf"))
                    out[:, s:e] = torch.softmax(scores, dim=-1) @ v[:, :e]
                keys.append(k)
                values.append(v)
                x = x + out.permute(1, 0, 2).reshape(L, cfg.d_model) @ self.params[f"wo.{l}"]
                b = _ln(x, self.params[f"ln2.{l}.w"], self.params[f"ln2.{l}.b"])
                x = x + F.gelu(b @ self.params[f"w1.{l}"] + self.params[f"b1.{l}"]) @ self.params[f"w2.{l}"] + self.params[f"b2.{l}"]
            logits = _ln(x, self.params["lnf.w"], self.params["lnf.b"]) @ self.params["head"]
        cache = KVCache(length=L, keys=tuple(keys), values=tuple(values),
                        token_digest=_token_digest(seq))
        return logits, cache

    def prefill_and_freeze(self, seq: TokenSequence) -> KVCache:
        """Compute the frozen KV cache for a sequence under base weights."""
        return self.scan(seq)[1]

    def base_logprobs_all(self, seq: TokenSequence) -> np.ndarray:
        """log P(x_t | x_{1:t-1}) for every t >= 2, as an array indexed by t.

        Entry [t] holds the value for position t; entries 0 and 1 are NaN
        (position 1 has no prefix).
        """
        logits, _ = self.scan(seq)
        lsm = torch.log_softmax(logits, dim=-1)
        ids = _ids_tensor(seq)
        vals = lsm[torch.arange(seq.length - 1), ids[1:]].numpy()
        out = np.full(seq.length + 1, np.nan)
        out[2:] = vals
        return out

    # -- adapted column forward over the frozen cache ----------------------

    def _validate_positions(self, seq: TokenSequence, positions: np.ndarray):
        if positions.size == 0:
            raise InvalidArgumentError("positions must be nonempty")
        if positions.min() < 2:
            raise InvalidArgumentError("position 1 has no prefix; positions must be >= 2")
        if positions.max() > seq.length:
            raise InvalidArgumentError("position beyond end of sequence")

    def column_logits(self, fast: Optional[FastWeights], cache: KVCache,
                      seq: TokenSequence, cols: torch.Tensor,
                      block: int = 256) -> torch.Tensor:
        """Adapted logits at 0-based columns, attending to the frozen cache.

        Differentiable w.r.t. the fast weights; base parameters and cache
        entries are constants.
        """
        if cache.length != seq.length or cache.token_digest != _token_digest(seq):
            raise ConsistencyError("cache was not built on this sequence")
        cfg = self.config
        H, dh = cfg.n_heads, cfg.d_head
        ids = _ids_tensor(seq)
        chunks = []
        for s in range(0, cols.shape[0], block):
            cb = cols[s:s + block]
            P = cb.shape[0]
            cos, sin = _rope_tables(cfg, cb)
            key_mask = torch.arange(cache.length)[None, :] > cb[:, None]  # True = masked
            x = self.params["embed"][ids[cb]]
            for l in range(cfg.n_layers):
                a = _ln(x, self.params[f"ln1.{l}.w"], self.params[f"ln1.{l}.b"])
                q = _adapted(a, self.params[f"wq.{l}"], fast, l, "q")
                q = _rope(q.view(P, H, dh).permute(1, 0, 2), cos, sin)
                scores = q @ cache.keys[l].transpose(1, 2) / math.sqrt(dh)
                scores = scores.masked_fill(key_mask[None], float("-inf"))
                ctx = torch.softmax(scores, dim=-1) @ cache.values[l]
                ctx = ctx.permute(1, 0, 2).reshape(P, cfg.d_model)
                x = x + _adapted(ctx, self.params[f"wo.{l}"], fast, l, "o")
                b = _ln(x, self.params[f"ln2.{l}.w"], self.params[f"ln2.{l}.b"])
                x = x + F.gelu(b @ self.params[f"w1.{l}"] + self.params[f"b1.{l}"]) @ self.params[f"w2.{l}"] + self.params[f"b2.{l}"]
            chunks.append(_ln(x, self.params["lnf.w"], self.params["lnf.b"]) @ self.params["head"])
        return torch.cat(chunks, dim=0)

    def forward_full(self, fast: Optional[FastWeights], cache: KVCache,
                     seq: TokenSequence, positions: Iterable[int]) -> PositionLogProbs:
        """log P(x_t | x_{1:t-1}; fast, base) at each requested position t."""
        pos = np.asarray(sorted(positions) if not isinstance(positions, np.ndarray) else positions,
                         dtype=np.int64)
        self._validate_positions(seq, pos)
        cols = torch.from_numpy(pos - 2)
        with torch.no_grad():
            logits = self.column_logits(fast, cache, seq, cols)
            lsm = torch.log_softmax(logits, dim=-1)
            ids = _ids_tensor(seq)
            vals = lsm[torch.arange(pos.size), ids[pos - 1]].numpy()
        return PositionLogProbs(positions=pos, values=vals, mode="full")

    # -- local-window forward ----------------------------------------------

    def local_logprobs(self, seq: TokenSequence, window: int,
                       positions: Iterable[int], row_block: int = 512) -> np.ndarray:
        """log P(x_t | x_{max(1,t-window):t-1}) with zero fast weights.

        Each window is re-encoded as a fresh sequence; rows are right-padded
        and processed as one causal batch per block, so the output at t is a
        pure function of the window's tokens.
        """
        if window < 1:
            raise InvalidArgumentError("window must be >= 1")
        pos = np.asarray(list(positions), dtype=np.int64)
        self._validate_positions(seq, pos)
        tokens = np.asarray(seq.tokens)
        widths = np.minimum(window, pos - 1)
        out = np.empty(pos.size, dtype=np.float64)
        order = np.argsort(pos, kind="stable")
        with torch.no_grad():
            for s in range(0, pos.size, row_block):
                sel = order[s:s + row_block]
                p, w = pos[sel], widths[sel]
                maxw = int(w.max())
                starts0 = p - 1 - w  # 0-based index of each window's first token
                idx = starts0[:, None] + np.arange(maxw)[None, :]
                valid = np.arange(maxw)[None, :] < w[:, None]
                ids = torch.from_numpy(tokens[np.where(valid, idx, 0)])
                logits = forward_batch_logits(self.params, self.config, ids)
                lsm = torch.log_softmax(logits[torch.arange(len(sel)), torch.from_numpy(w - 1)], dim=-1)
                out[sel] = lsm[torch.arange(len(sel)), torch.from_numpy(tokens[p - 1])].numpy()
        return out

    def forward_local(self, seq: TokenSequence, window: int,
                      positions: Iterable[int]) -> PositionLogProbs:
        pos = np.asarray(sorted(positions), dtype=np.int64)
        vals = self.local_logprobs(seq, window, pos)
        return PositionLogProbs(positions=pos, values=vals, mode="local", window=window)

    # -- gradients ----------------------------------------------------------

    def minibatch_loss(self, fast: Optional[FastWeights], cache: KVCache,
                       seq: TokenSequence, minibatch: np.ndarray) -> torch.Tensor:
        """Differentiable mean NLL over a multiset of positions (repeats counted)."""
        pos = np.asarray(minibatch, dtype=np.int64)
        self._validate_positions(seq, pos)
        cols = torch.from_numpy(pos - 2)
        logits = self.column_logits(fast, cache, seq, cols)
        lsm = torch.log_softmax(logits, dim=-1)
        ids = _ids_tensor(seq)
        return -lsm[torch.arange(pos.size), ids[pos - 1]].mean()

    def grad_fast_weights(self, fast: FastWeights, cache: KVCache, seq: TokenSequence,
                          minibatch: np.ndarray) -> Tuple[float, Dict[str, torch.Tensor]]:
        """Exact adapter gradient of the minibatch NLL; base and cache held constant."""
        loss = self.minibatch_loss(fast, cache, seq, minibatch)
        if not torch.isfinite(loss):
            raise NumericalError(
                f"non-finite loss on minibatch positions {np.unique(minibatch)[:8].tolist()}"
            )
        names = fast.keys()
        grads = torch.autograd.grad(loss, [fast.params[k] for k in names])
        out = {}
        for name, g in zip(names, grads):
            if not torch.isfinite(g).all():
                raise NumericalError(f"non-finite gradient in adapter tensor {name}")
            out[name] = g
        return float(loss.detach()), out

    def finite_diff_check(self, fast: FastWeights, cache: KVCache, seq: TokenSequence,
                          minibatch: np.ndarray, step: float = 1e-5,
                          probes: int = 100, seed: int = 0,
                          analytic: Optional[Dict[str, torch.Tensor]] = None) -> float:
        """Worst relative error of the analytic gradient vs central differences.

        Error is measured against the finite-difference reference:
        |fd - analytic| / max(|fd|, 1e-6), so a gradient scaled by 2 reads as
        an error of about 1.
        """
        if step <= 0:
            raise InvalidArgumentError("finite-difference step must be > 0")
        minibatch = np.asarray(minibatch, dtype=np.int64)
        if analytic is None:
            _, analytic = self.grad_fast_weights(fast, cache, seq, minibatch)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xFD)))
        names = fast.keys()
        sizes = np.array([fast.params[k].numel() for k in names])
        total = int(sizes.sum())
        worst = 0.0
        with torch.no_grad():
            for flat in rng.choice(total, size=min(probes, total), replace=False):
                k = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
                offset = int(flat - (np.cumsum(sizes)[k] - sizes[k]))
                tensor = fast.params[names[k]]
                orig = float(tensor.view(-1)[offset])
                tensor.view(-1)[offset] = orig + step
                lp = float(self.minibatch_loss(fast, cache, seq, minibatch))
                tensor.view(-1)[offset] = orig - step
                lm = float(self.minibatch_loss(fast, cache, seq, minibatch))
                tensor.view(-1)[offset] = orig
                fd = (lp - lm) / (2.0 * step)
                an = float(analytic[names[k]].view(-1)[offset])
                worst = max(worst, abs(fd - an) / max(abs(fd), 1e-6))
        return worst


# ---------------------------------------------------------------------------
# Checkpoints (bit-exact npz containers)
# ---------------------------------------------------------------------------

def save_model(model: FrozenModel, path) -> None:
    arrays = {f"param/{k}": v.numpy() for k, v in model.params.items()}
    np.savez(path, __config__=np.frombuffer(
        json.dumps(model.config.to_dict()).encode(), dtype=np.uint8), **arrays)


def load_model(path) -> FrozenModel:
    with np.load(path) as z:
        cfg = ModelConfig.from_dict(json.loads(bytes(z["__config__"]).decode()))
        params = {k[len("param/"):]: torch.from_numpy(z[k].copy())
                  for k in z.files if k.startswith("param/")}
    return FrozenModel(cfg, params)


def save_adapters(fast: FastWeights, path) -> None:
    meta = {"rank": fast.rank, "alpha": fast.alpha, "n_layers": fast.n_layers}
    arrays = {f"adapter/{k}": v.detach().numpy() for k, v in fast.params.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_adapters(path) -> FastWeights:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        params = {k[len("adapter/"):]: torch.from_numpy(z[k].copy()).requires_grad_(True)
                  for k in z.files if k.startswith("adapter/")}
    return FastWeights(rank=meta["rank"], alpha=meta["alpha"],
                       n_layers=meta["n_layers"], params=params)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
