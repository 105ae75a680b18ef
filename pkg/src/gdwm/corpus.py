"""Byte-level token sequences and fixed-size chunk partitions.

Positions are 1-indexed everywhere in the public API: a sequence of length L
has positions 1..L, and chunk ranges are half-open ``(start, end)`` pairs in
that convention. Token ids are raw byte values, so the vocabulary is fixed at
256 and tokenization is exact.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

import numpy as np

from .errors import EmptyInputError, InvalidArgumentError

VOCAB_SIZE = 256


@dataclass(frozen=True)
class TokenSequence:
    """An immutable byte-level token sequence."""

    tokens: np.ndarray  # int64, values in [0, 256)

    def __post_init__(self):
        arr = np.asarray(self.tokens, dtype=np.int64)
        if arr.ndim != 1:
            raise InvalidArgumentError("tokens must be one-dimensional")
        if arr.size < 1:
            raise EmptyInputError("token sequence must contain at least one token")
        if arr.min() < 0 or arr.max() >= VOCAB_SIZE:
            raise InvalidArgumentError("token ids must lie in [0, 256)")
        arr.setflags(write=False)
        object.__setattr__(self, "tokens", arr)

    @property
    def length(self) -> int:
        return int(self.tokens.size)

    def __len__(self) -> int:
        return self.length

    def to_bytes(self) -> bytes:
        return self.tokens.astype(np.uint8).tobytes()

    @staticmethod
    def from_bytes(data: bytes) -> "TokenSequence":
        if len(data) == 0:
            raise EmptyInputError("empty byte string")
        return TokenSequence(np.frombuffer(data, dtype=np.uint8).astype(np.int64))


def load_corpus(source: Union[str, os.PathLike, Iterable[int]], limit: int) -> TokenSequence:
    """Read bytes from a file path or an iterable of byte values, truncated to `limit` tokens."""
    if limit < 1:
        raise InvalidArgumentError(f"limit must be >= 1, got {limit}")
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, "rb") as fh:
                data = fh.read(limit)
        except OSError as exc:
            raise IOError(f"cannot read corpus source {source!r}: {exc}") from exc
        if len(data) == 0:
            raise EmptyInputError(f"corpus source {source!r} is empty")
        return TokenSequence.from_bytes(data)
    # generator handle: any iterable of ints
    out = []
    for tok in source:
        out.append(int(tok))
        if len(out) >= limit:
            break
    if not out:
        raise EmptyInputError("corpus generator produced no tokens")
    return TokenSequence(np.asarray(out, dtype=np.int64))


@dataclass(frozen=True)
class ChunkPartition:
    """Contiguous fixed-size chunks covering positions 1..L exactly.

    ``ranges[c]`` is the half-open 1-indexed position range of chunk c+1; every
    chunk except possibly the last holds exactly ``chunk_size`` positions.
    """

    length: int
    chunk_size: int
    ranges: tuple = field(default=())  # tuple[(start, end), ...]

    @property
    def num_chunks(self) -> int:
        return len(self.ranges)

    def chunk_of(self, position: int) -> int:
        """1-based index of the chunk containing a 1-indexed position."""
        if not 1 <= position <= self.length:
            raise InvalidArgumentError(f"position {position} outside [1, {self.length}]")
        return (position - 1) // self.chunk_size + 1

    def manifest_rows(self) -> list:
        """Rows (chunk, start, end) for the CSV partition manifest."""
        return [(c + 1, start, end) for c, (start, end) in enumerate(self.ranges)]


def partition(seq: TokenSequence, chunk_size: int) -> ChunkPartition:
    """Split a sequence into ``ceil(L / chunk_size)`` contiguous chunks."""
    if chunk_size < 1:
        raise InvalidArgumentError(f"chunk_size must be >= 1, got {chunk_size}")
    L = seq.length
    M = math.ceil(L / chunk_size)
    ranges = tuple(
        (c * chunk_size + 1, min((c + 1) * chunk_size, L) + 1) for c in range(M)
    )
    return ChunkPartition(length=L, chunk_size=chunk_size, ranges=ranges)


def positions_of(part: ChunkPartition, chunk: int) -> np.ndarray:
    """Explicit 1-indexed positions of the given 1-based chunk index."""
    if not 1 <= chunk <= part.num_chunks:
        raise InvalidArgumentError(
            f"chunk index {chunk} outside [1, {part.num_chunks}]"
        )
    start, end = part.ranges[chunk - 1]
    return np.arange(start, end, dtype=np.int64)


def iter_chunk_positions(part: ChunkPartition) -> Iterator[np.ndarray]:
    for c in range(1, part.num_chunks + 1):
        yield positions_of(part, c)
