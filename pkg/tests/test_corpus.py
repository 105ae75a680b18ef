import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdwm.corpus import TokenSequence, load_corpus, partition, positions_of
from gdwm.errors import EmptyInputError, InvalidArgumentError


def test_load_corpus_bytes(tmp_path):
    p = tmp_path / "abc.bin"
    p.write_bytes(b"abc")
    seq = load_corpus(p, limit=10)
    assert seq.tokens.tolist() == [97, 98, 99]
    assert seq.length == 3


def test_load_corpus_truncation(tmp_path):
    p = tmp_path / "abc.bin"
    p.write_bytes(b"abc")
    assert load_corpus(p, limit=2).tokens.tolist() == [97, 98]


def test_load_corpus_generator_limit():
    rng = np.random.default_rng(0)
    gen = (int(b) for b in rng.integers(0, 256, size=5000))
    assert load_corpus(gen, limit=4096).length == 4096


def test_load_corpus_errors(tmp_path):
    with pytest.raises(IOError):
        load_corpus(tmp_path / "missing.bin", limit=5)
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    with pytest.raises(EmptyInputError):
        load_corpus(empty, limit=5)
    ok = tmp_path / "ok.bin"
    ok.write_bytes(b"xy")
    with pytest.raises(InvalidArgumentError):
        load_corpus(ok, limit=0)


def test_token_sequence_invariants():
    with pytest.raises(EmptyInputError):
        TokenSequence(np.array([], dtype=np.int64))
    with pytest.raises(InvalidArgumentError):
        TokenSequence(np.array([0, 256]))
    seq = TokenSequence(np.array([1, 2, 3]))
    with pytest.raises(ValueError):
        seq.tokens[0] = 5  # frozen buffer


@pytest.mark.parametrize("L,S,sizes", [
    (2500, 1024, [1024, 1024, 452]),
    (1024, 1024, [1024]),
    (7, 2, [2, 2, 2, 1]),
])
def test_partition_examples(L, S, sizes):
    seq = TokenSequence(np.zeros(L, dtype=np.int64))
    part = partition(seq, S)
    assert part.num_chunks == len(sizes)
    assert [e - s for s, e in part.ranges] == sizes


def test_partition_invalid_chunk_size():
    seq = TokenSequence(np.zeros(5, dtype=np.int64))
    with pytest.raises(InvalidArgumentError):
        partition(seq, 0)


def test_positions_of_examples():
    part = partition(TokenSequence(np.zeros(10, dtype=np.int64)), 4)
    assert positions_of(part, 3).tolist() == [9, 10]
    part8 = partition(TokenSequence(np.zeros(8, dtype=np.int64)), 4)
    assert positions_of(part8, 1).tolist() == [1, 2, 3, 4]
    assert positions_of(part8, 2).tolist() == [5, 6, 7, 8]
    with pytest.raises(InvalidArgumentError):
        positions_of(part8, 3)
    with pytest.raises(InvalidArgumentError):
        positions_of(part8, 0)


@settings(max_examples=200, deadline=None)
@given(L=st.integers(1, 5000), S=st.integers(1, 1200))
def test_partition_roundtrip_property(L, S):
    part = partition(TokenSequence(np.zeros(L, dtype=np.int64)), S)
    all_positions = np.concatenate([positions_of(part, c) for c in range(1, part.num_chunks + 1)])
    assert np.array_equal(all_positions, np.arange(1, L + 1))
    # size law: every chunk but the last holds exactly S positions
    sizes = [e - s for s, e in part.ranges]
    assert all(sz == S for sz in sizes[:-1])
    assert sizes[-1] == L - (part.num_chunks - 1) * S
    assert part.num_chunks == -(-L // S)


def test_manifest_rows():
    part = partition(TokenSequence(np.zeros(10, dtype=np.int64)), 4)
    assert part.manifest_rows() == [(1, 1, 5), (2, 5, 9), (3, 9, 11)]
