"""Seeded byte-level generative processes shared by pretraining and task generators.

The byte space is laid out so that evidence is information-theoretically
identifiable:

* bytes 0..191 — eight "topic" alphabets of 24 bytes each, one order-1 Markov
  process per topic with a fixed, seeded transition table;
* bytes 192..255 — reserved evidence bytes used for planted keys, values and
  chain entities; the topic processes can never emit them;
* noise stretches are uniform over the full 0..255 range.

Both the pretraining stream and the synthetic tasks draw from the same world,
so a trained model knows the topic tables, predicts roughly uniformly inside
noise, and can only predict reserved continuations by copying from context.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .corpus import TokenSequence
from .errors import InvalidArgumentError

NUM_TOPICS = 8
TOPIC_ALPHABET = 24
RESERVED_START = NUM_TOPICS * TOPIC_ALPHABET  # 192
RESERVED_BYTES = np.arange(RESERVED_START, 256, dtype=np.int64)
SUCCESSORS_PER_STATE = 4
DEFAULT_WORLD_SEED = 7_310_712


@dataclass(frozen=True)
class World:
    """Fixed topic transition tables plus the reserved-byte vocabulary."""

    seed: int
    # (NUM_TOPICS, TOPIC_ALPHABET, TOPIC_ALPHABET) row-stochastic tables over
    # local symbols; topic t emits byte t * TOPIC_ALPHABET + symbol.
    tables: np.ndarray

    def topic_offset(self, topic: int) -> int:
        if not 0 <= topic < NUM_TOPICS:
            raise InvalidArgumentError(f"topic must be in [0, {NUM_TOPICS})")
        return topic * TOPIC_ALPHABET

    def topic_of_byte(self, byte: int) -> int:
        if byte >= RESERVED_START:
            raise InvalidArgumentError(f"byte {byte} is reserved, not topical")
        return byte // TOPIC_ALPHABET


@functools.lru_cache(maxsize=8)
def build_world(seed: int = DEFAULT_WORLD_SEED) -> World:
    """Construct the world deterministically from a seed.

    Each topic state gets SUCCESSORS_PER_STATE successors with Dirichlet
    weights, giving per-token entropy around 1.2 nats — low enough that a tiny
    model learns the tables, high enough that chunks are not degenerate.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    tables = np.zeros((NUM_TOPICS, TOPIC_ALPHABET, TOPIC_ALPHABET))
    for t in range(NUM_TOPICS):
        for s in range(TOPIC_ALPHABET):
            succ = rng.choice(TOPIC_ALPHABET, size=SUCCESSORS_PER_STATE, replace=False)
            w = rng.dirichlet(np.full(SUCCESSORS_PER_STATE, 2.0))
            tables[t, s, succ] = w
    return World(seed=seed, tables=tables)


def sample_topic(world: World, topic: int, length: int, rng: np.random.Generator,
                 start_symbol: int | None = None) -> np.ndarray:
    """Sample `length` bytes from one topic's Markov chain."""
    if length < 1:
        raise InvalidArgumentError("length must be >= 1")
    table = world.tables[topic]
    offset = world.topic_offset(topic)
    out = np.empty(length, dtype=np.int64)
    sym = int(rng.integers(TOPIC_ALPHABET)) if start_symbol is None else int(start_symbol)
    out[0] = offset + sym
    # inverse-CDF sampling keeps the whole walk driven by one uniform draw per step
    cdf = np.cumsum(table, axis=1)
    u = rng.random(length - 1)
    for i in range(1, length):
        sym = int(np.searchsorted(cdf[sym], u[i - 1], side="right"))
        sym = min(sym, TOPIC_ALPHABET - 1)
        out[i] = offset + sym
    return out


def sample_noise(length: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform bytes over the full 0..255 range (pure aleatoric noise)."""
    return rng.integers(0, 256, size=length, dtype=np.int64)


def sample_reserved_words(rng: np.random.Generator, count: int, width: int = 2) -> np.ndarray:
    """`count` distinct reserved byte strings of the given width."""
    seen = set()
    words = np.empty((count, width), dtype=np.int64)
    filled = 0
    while filled < count:
        w = tuple(int(b) for b in rng.choice(RESERVED_BYTES, size=width, replace=False))
        if w in seen:
            continue
        seen.add(w)
        words[filled] = w
        filled += 1
    return words


def topic_stationary_entropy(world: World, topic: int) -> float:
    """Entropy rate (nats/token) of one topic chain under its stationary law."""
    table = world.tables[topic]
    # power-iterate the stationary distribution
    pi = np.full(TOPIC_ALPHABET, 1.0 / TOPIC_ALPHABET)
    for _ in range(500):
        pi = pi @ table
        pi /= pi.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(table > 0, np.log(table), 0.0)
    return float(-(pi[:, None] * table * logs).sum())


# ---------------------------------------------------------------------------
# Pretraining stream
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StreamConfig:
    """Mix knobs for the synthetic pretraining stream."""

    seq_len: int = 512
    long_seq_len: int = 1536
    long_every: int = 4          # every k-th sequence is a long one
    pairs_short: int = 9         # planted reserved words per short sequence
    pairs_long: int = 20
    echo_prob: float = 0.4       # chance a word gets a third occurrence
    noise_prob: float = 0.35     # chance of one uniform-noise stretch
    noise_len_lo: int = 32
    noise_len_hi: int = 160
    topic_switch_prob: float = 0.35  # chance of a mid-sequence topic change


def stream_sequences(world: World, cfg: StreamConfig, seed: int):
    """Endless generator of training sequences teaching three skills:

    topic tables (filler), uniform prediction inside noise, and copying of
    repeated reserved words (the induction skill every task leans on).
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
    index = 0
    while True:
        long = cfg.long_every > 0 and index % cfg.long_every == cfg.long_every - 1
        length = cfg.long_seq_len if long else cfg.seq_len
        n_pairs = cfg.pairs_long if long else cfg.pairs_short

        # topic filler, possibly with one topic switch
        if rng.random() < cfg.topic_switch_prob:
            cut = int(rng.integers(length // 4, 3 * length // 4))
            t1, t2 = rng.choice(NUM_TOPICS, size=2, replace=False)
            seq = np.concatenate([
                sample_topic(world, int(t1), cut, rng),
                sample_topic(world, int(t2), length - cut, rng),
            ])
        else:
            seq = sample_topic(world, int(rng.integers(NUM_TOPICS)), length, rng)

        if rng.random() < cfg.noise_prob:
            nlen = int(rng.integers(cfg.noise_len_lo, cfg.noise_len_hi + 1))
            nstart = int(rng.integers(0, max(1, length - nlen)))
            seq[nstart:nstart + nlen] = sample_noise(nlen, rng)

        # plant repeated reserved words: second (and sometimes third)
        # occurrences are only predictable by copying from context
        words = sample_reserved_words(rng, n_pairs, width=4)
        taken: list = []

        def free_slot(width: int) -> int | None:
            for _ in range(40):
                pos = int(rng.integers(0, length - width))
                if all(pos + width <= a or pos >= b for a, b in taken):
                    taken.append((pos, pos + width))
                    return pos
            return None

        for w in words:
            occurrences = 3 if rng.random() < cfg.echo_prob else 2
            for _ in range(occurrences):
                pos = free_slot(4)
                if pos is None:
                    break
                seq[pos:pos + 4] = w

        yield TokenSequence(seq)
        index += 1
