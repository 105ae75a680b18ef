"""Seeded synthetic long-context tasks with controllable evidence span.

Every generator draws filler from the shared world's topic processes and
plants evidence built from reserved bytes the filler can never emit, so
answers are recoverable only through the planted material. Query tokens sit at
the very end of each instance; adaptation runs on the prefix before them and
evaluation scores them under a full-context forward.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch

from .corpus import ChunkPartition, TokenSequence
from .errors import InvalidArgumentError
from .model import FastWeights, FrozenModel
from .utility import UtilityProfile
from .worlds import (
    DEFAULT_WORLD_SEED,
    NUM_TOPICS,
    World,
    build_world,
    sample_noise,
    sample_reserved_words,
    sample_topic,
)

TASK_KINDS = ("needle", "multihop", "heterogeneous", "noise_mix")
_WORD = 2          # evidence words are reserved byte bigrams
_FACT = 2 * _WORD  # a planted fact is a key/value word pair


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str
    length: int = 4096
    span: int = 1024            # evidence span: distance between linked facts
    hops: int = 2               # multihop chain length (2 reduces to needle)
    segments: int = 8           # heterogeneous segment count
    noise_start: Optional[int] = None   # 1-indexed; None = auto placement
    noise_len: int = 128
    topic: Optional[int] = None
    seed: int = 0
    world_seed: int = DEFAULT_WORLD_SEED

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise InvalidArgumentError(f"kind must be one of {TASK_KINDS}")
        if self.length < 16:
            raise InvalidArgumentError("length must be >= 16")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "SyntheticTaskSpec":
        return SyntheticTaskSpec(**d)


@dataclass
class TaskInstance:
    sequence: TokenSequence
    query_positions: List[int]       # 1-indexed; tokens constituting the answer
    evidence_positions: List[int]    # 1-indexed planted evidence (incl. recall cue)
    spec: SyntheticTaskSpec
    metadata: Dict = field(default_factory=dict)

    @property
    def adapt_length(self) -> int:
        """Prefix length available for adaptation (queries held out)."""
        if not self.query_positions:
            return self.sequence.length
        return min(self.query_positions) - 1

    def answer_tokens(self) -> np.ndarray:
        toks = np.asarray(self.sequence.tokens)
        return toks[np.asarray(self.query_positions, dtype=np.int64) - 1]

    def evidence_chunks(self, part: ChunkPartition) -> List[int]:
        return sorted({part.chunk_of(p) for p in self.evidence_positions})

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "sequence.bin"), "wb") as fh:
            fh.write(self.sequence.to_bytes())
        sidecar = {
            "spec": self.spec.to_dict(),
            "query_positions": list(map(int, self.query_positions)),
            "evidence_positions": list(map(int, self.evidence_positions)),
            "metadata": self.metadata,
        }
        with open(os.path.join(directory, "instance.json"), "w") as fh:
            json.dump(sidecar, fh, indent=2, default=int)

    @staticmethod
    def load(directory) -> "TaskInstance":
        with open(os.path.join(directory, "sequence.bin"), "rb") as fh:
            seq = TokenSequence.from_bytes(fh.read())
        with open(os.path.join(directory, "instance.json")) as fh:
            sidecar = json.load(fh)
        return TaskInstance(
            sequence=seq,
            query_positions=sidecar["query_positions"],
            evidence_positions=sidecar["evidence_positions"],
            spec=SyntheticTaskSpec.from_dict(sidecar["spec"]),
            metadata=sidecar["metadata"],
        )


_KIND_SALT = {"needle": 11, "multihop": 12, "heterogeneous": 13, "noise_mix": 14}


def _rng_for(spec: SyntheticTaskSpec) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((spec.seed, _KIND_SALT[spec.kind])))


def _pick_topic(spec: SyntheticTaskSpec, rng: np.random.Generator) -> int:
    return int(rng.integers(NUM_TOPICS)) if spec.topic is None else int(spec.topic)


def _write(seq: np.ndarray, pos1: int, word: np.ndarray) -> List[int]:
    """Overwrite filler at a 1-indexed position; returns the positions used."""
    seq[pos1 - 1: pos1 - 1 + word.size] = word
    return list(range(pos1, pos1 + word.size))


def gen_needle(spec: SyntheticTaskSpec) -> TaskInstance:
    """One key->value fact planted `span` tokens before its recall site.

    Layout: [filler | KEY VALUE | filler | KEY][VALUE], with the trailing
    VALUE as the held-out answer. The value bigram occurs exactly twice.
    """
    if spec.kind != "needle":
        raise InvalidArgumentError("spec.kind must be 'needle'")
    L, span = spec.length, spec.span
    if span < 1:
        raise InvalidArgumentError("span must be >= 1")
    if span < _FACT:
        raise InvalidArgumentError(f"span must be >= {_FACT} so fact and recall do not overlap")
    recall_start = L - _FACT + 1          # cue(2) + answer(2) end the sequence
    plant_start = recall_start - span
    if span >= L or plant_start < 2:
        raise InvalidArgumentError(f"span {span} does not fit in length {L}")
    world = build_world(spec.world_seed)
    rng = _rng_for(spec)
    topic = _pick_topic(spec, rng)
    seq = sample_topic(world, topic, L, rng)
    key, value = sample_reserved_words(rng, 2, width=_WORD)
    evidence = _write(seq, plant_start, np.concatenate([key, value]))
    evidence += _write(seq, recall_start, key)
    queries = _write(seq, recall_start + _WORD, value)
    return TaskInstance(
        sequence=TokenSequence(seq),
        query_positions=queries,
        evidence_positions=evidence,
        spec=spec,
        metadata={
            "topic": topic,
            "plant_start": plant_start,
            "recall_start": recall_start,
            "realized_span": recall_start - plant_start,
            "key": key.tolist(),
            "value": value.tolist(),
        },
    )


def gen_multihop(spec: SyntheticTaskSpec) -> TaskInstance:
    """A chain of entity links spanning `span` tokens, recited at the end.

    Links plant (e_{i-1} e_i) pairs spaced span/(hops-1) apart; the recall
    site restates the chain with the first entity as cue and the remaining
    entities as held-out answer tokens, so scoring requires every hop.
    """
    if spec.kind != "multihop":
        raise InvalidArgumentError("spec.kind must be 'multihop'")
    H = spec.hops
    if H < 2:
        raise InvalidArgumentError("hops must be >= 2")
    L, span = spec.length, spec.span
    n_links = H - 1
    gap = span // n_links
    recite_len = H * _WORD
    recall_start = L - recite_len + 1
    first_link = recall_start - span
    if gap < _FACT + 1:
        raise InvalidArgumentError("span too small: links would overlap")
    if first_link < 2 or span >= L:
        raise InvalidArgumentError(f"chain of span {span} does not fit in length {L}")
    world = build_world(spec.world_seed)
    rng = _rng_for(spec)
    topic = _pick_topic(spec, rng)
    seq = sample_topic(world, topic, L, rng)
    entities = sample_reserved_words(rng, H, width=_WORD)
    links = []
    evidence: List[int] = []
    for i in range(1, H):
        p = first_link + (i - 1) * gap
        links.append(p)
        evidence += _write(seq, p, np.concatenate([entities[i - 1], entities[i]]))
    evidence += _write(seq, recall_start, entities[0])   # recall cue
    queries: List[int] = []
    for i in range(1, H):
        queries += _write(seq, recall_start + i * _WORD, entities[i])
    return TaskInstance(
        sequence=TokenSequence(seq),
        query_positions=queries,
        evidence_positions=evidence,
        spec=spec,
        metadata={
            "topic": topic,
            "links": links,
            "recall_start": recall_start,
            "realized_span": recall_start - first_link,
            "entities": entities.tolist(),
        },
    )


def gen_heterogeneous(spec: SyntheticTaskSpec) -> TaskInstance:
    """Contiguous segments from distinct topic processes (disjoint alphabets).

    With one segment this is the homogeneous control; with several, chunks
    aligned to segments have measurably distinct gradient statistics.
    """
    if spec.kind != "heterogeneous":
        raise InvalidArgumentError("spec.kind must be 'heterogeneous'")
    S = spec.segments
    if S < 1:
        raise InvalidArgumentError("segments must be >= 1")
    L = spec.length
    world = build_world(spec.world_seed)
    rng = _rng_for(spec)
    topics = rng.permutation(NUM_TOPICS)[:S] if S <= NUM_TOPICS else \
        rng.integers(0, NUM_TOPICS, size=S)
    bounds = np.linspace(0, L, S + 1).astype(int)
    parts = [sample_topic(world, int(t), int(e - s), rng)
             for t, s, e in zip(topics, bounds[:-1], bounds[1:])]
    return TaskInstance(
        sequence=TokenSequence(np.concatenate(parts)),
        query_positions=[],
        evidence_positions=[],
        spec=spec,
        metadata={
            "topics": [int(t) for t in topics],
            "segment_bounds": [int(b) + 1 for b in bounds[:-1]],
        },
    )


def gen_noise_mix(spec: SyntheticTaskSpec) -> TaskInstance:
    """A needle dependency plus one stretch of pure uniform noise.

    The noise carries maximal local surprisal but no long-range signal, so a
    difficulty gate and a dependency gate rank these two regions oppositely.
    """
    if spec.kind != "noise_mix":
        raise InvalidArgumentError("spec.kind must be 'noise_mix'")
    needle = gen_needle(dataclasses.replace(spec, kind="needle"))
    seq = np.asarray(needle.sequence.tokens).copy()
    L = spec.length
    noise_len = spec.noise_len
    if noise_len < 1:
        raise InvalidArgumentError("noise_len must be >= 1")
    noise_start = spec.noise_start
    if noise_start is None:
        noise_start = (L // 4 // noise_len) * noise_len + 1
    noise_end = noise_start + noise_len  # half-open
    plant_start = needle.metadata["plant_start"]
    recall_start = needle.metadata["recall_start"]
    if noise_start < 2 or noise_end > L + 1:
        raise InvalidArgumentError("noise block outside the sequence")
    for lo, hi in ((plant_start, plant_start + _FACT), (recall_start, L + 1)):
        if noise_start < hi and lo < noise_end:
            raise InvalidArgumentError("noise block overlaps planted evidence")
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0x0153)))
    seq[noise_start - 1: noise_end - 1] = sample_noise(noise_len, rng)
    metadata = dict(needle.metadata)
    metadata.update({"noise_start": noise_start, "noise_len": noise_len})
    return TaskInstance(
        sequence=TokenSequence(seq),
        query_positions=needle.query_positions,
        evidence_positions=needle.evidence_positions,
        spec=spec,
        metadata=metadata,
    )


def generate(spec: SyntheticTaskSpec) -> TaskInstance:
    return {
        "needle": gen_needle,
        "multihop": gen_multihop,
        "heterogeneous": gen_heterogeneous,
        "noise_mix": gen_noise_mix,
    }[spec.kind](spec)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    nll_before: float
    nll_after: float
    accuracy_before: float
    accuracy_after: float
    query_positions: List[int]
    logprobs_before: List[float]
    logprobs_after: List[float]
    evidence_chunk_ranks: Optional[List[int]] = None

    @property
    def nll_improvement(self) -> float:
        return self.nll_before - self.nll_after

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def eval_task(model: FrozenModel, fast: Optional[FastWeights], instance: TaskInstance,
              part: Optional[ChunkPartition] = None,
              utility: Optional[UtilityProfile] = None) -> EvalReport:
    """Query-token NLL and exact-match accuracy before and after adaptation.

    Scores run under a full-sequence forward: the frozen cache is rebuilt on
    the complete instance (base weights), and adapted columns are evaluated at
    the query positions only.
    """
    if not instance.query_positions:
        raise InvalidArgumentError("instance has no query positions to score")
    seq = instance.sequence
    queries = np.asarray(sorted(instance.query_positions), dtype=np.int64)
    logits, cache = model.scan(seq)
    toks = torch.from_numpy(np.asarray(seq.tokens).copy())
    cols = torch.from_numpy(queries - 2)
    targets = toks[queries - 1]

    base_rows = torch.log_softmax(logits[cols], dim=-1)
    lp_before = base_rows[torch.arange(queries.size), targets].numpy()
    acc_before = float((logits[cols].argmax(dim=-1) == targets).float().mean())

    if fast is None or fast.delta_norm() == 0.0:
        lp_after, acc_after = lp_before.copy(), acc_before
    else:
        with torch.no_grad():
            adapted = model.column_logits(fast, cache, seq, cols)
        rows = torch.log_softmax(adapted, dim=-1)
        lp_after = rows[torch.arange(queries.size), targets].numpy()
        acc_after = float((adapted.argmax(dim=-1) == targets).float().mean())

    ranks = None
    if utility is not None and part is not None:
        order = np.argsort(-utility.chunk_utilities, kind="stable")
        rank_of = np.empty(order.size, dtype=np.int64)
        rank_of[order] = np.arange(1, order.size + 1)
        ranks = [int(rank_of[c - 1]) for c in instance.evidence_chunks(part)
                 if c <= order.size]
    return EvalReport(
        nll_before=float(-lp_before.mean()),
        nll_after=float(-lp_after.mean()),
        accuracy_before=acc_before,
        accuracy_after=acc_after,
        query_positions=[int(q) for q in queries],
        logprobs_before=[float(x) for x in lp_before],
        logprobs_after=[float(x) for x in lp_after],
        evidence_chunk_ranks=ranks,
    )
