import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdwm.allocator import (
    AllocatorConfig,
    allocate,
    largest_remainder,
    softmax_weights,
    uniform_schedule,
)
from gdwm.errors import InvalidArgumentError


def test_softmax_symmetry():
    w = softmax_weights([1.0, 1.0], tau=1.0)
    assert np.allclose(w, [0.5, 0.5], atol=1e-15)


def test_softmax_hand_example():
    w = softmax_weights([math.log(2), 0.0], tau=1.0)
    assert np.allclose(w, [2 / 3, 1 / 3], atol=1e-12)


def test_softmax_shift_invariance():
    a = softmax_weights([5.0, 3.0], tau=1.0)
    b = softmax_weights([105.0, 103.0], tau=1.0)
    assert np.allclose(a, b, atol=1e-15)


def test_softmax_validation():
    with pytest.raises(InvalidArgumentError):
        softmax_weights([1.0], tau=0.0)
    with pytest.raises(InvalidArgumentError):
        softmax_weights([1.0], tau=-2.0)
    with pytest.raises(InvalidArgumentError):
        softmax_weights([np.inf, 1.0], tau=1.0)
    assert abs(softmax_weights(np.arange(5), tau=1.0).sum() - 1.0) < 1e-12


def test_largest_remainder_examples():
    assert largest_remainder([0.5, 0.1, 0.4], 1).tolist() == [1, 0, 0]
    # tie broken by lower index
    assert largest_remainder([0.5, 0.5, 0.0], 1).tolist() == [1, 0, 0]
    assert largest_remainder([0.3, 0.3, 0.3], 0).tolist() == [0, 0, 0]
    with pytest.raises(InvalidArgumentError):
        largest_remainder([0.5, 0.5], 2)


def _l1_to_targets(k, targets):
    return np.abs(np.asarray(k) - targets).sum()


def test_allocate_worked_example_with_exhaustive_oracle():
    """U=[ln5, ln3, ln2], K=10, k_min=1 must give [5,3,2] and that vector must
    attain the minimal L1 distance to the real-valued targets among all
    integer allocations spending the budget with coverage."""
    u = np.log([5.0, 3.0, 2.0])
    cfg = AllocatorConfig(k_total=10, k_min=1, tau=1.0)
    sched = allocate(u, cfg)
    assert sched.k.tolist() == [5, 3, 2]
    assert sched.mode == "feasible"
    assert sched.k_rem == 7
    targets = 1 + 7 * np.array([0.5, 0.3, 0.2])
    best = min(
        _l1_to_targets(k, targets)
        for k in itertools.product(range(11), repeat=3)
        if sum(k) == 10 and min(k) >= 1
    )
    assert _l1_to_targets(sched.k, targets) == pytest.approx(best)


def test_allocate_symmetric_example():
    sched = allocate([1.0, 1.0, 1.0], AllocatorConfig(k_total=6, k_min=1, tau=1.0))
    assert sched.k.tolist() == [2, 2, 2]
    assert np.allclose(sched.weights, 1 / 3)


def test_allocate_fallback_example():
    sched = allocate([0.9, 0.1, 0.5, 0.2, 0.8], AllocatorConfig(k_total=4, k_min=2, tau=1.0))
    assert sched.k.tolist() == [2, 0, 0, 0, 2]
    assert sched.mode == "fallback"
    assert sched.total == 4


def test_allocate_fallback_remainder_goes_to_top_chunk():
    sched = allocate([0.1, 0.9, 0.5], AllocatorConfig(k_total=5, k_min=2, tau=1.0))
    # top-2 chunks get k_min, leftover 1 goes to the highest-utility chunk
    assert sched.k.tolist() == [0, 3, 2]
    assert sched.total == 5


def test_allocate_zero_budget():
    sched = allocate([0.3, 0.7], AllocatorConfig(k_total=0, k_min=1, tau=1.0))
    assert sched.k.tolist() == [0, 0]
    assert sched.mode == "fallback"
    sched0 = allocate([0.3, 0.7], AllocatorConfig(k_total=0, k_min=0, tau=1.0))
    assert sched0.k.tolist() == [0, 0]
    assert sched0.mode == "feasible"


def test_uniform_schedule_examples():
    assert uniform_schedule(4, 8).k.tolist() == [2, 2, 2, 2]
    assert uniform_schedule(3, 8).k.tolist() == [3, 3, 2]
    assert uniform_schedule(5, 3).k.tolist() == [1, 1, 1, 0, 0]


def test_greedy_mode():
    sched = allocate([0.1, 0.9, 0.5], AllocatorConfig(k_total=10, k_min=1, tau=1.0, greedy=True))
    assert sched.k.tolist() == [1, 8, 1]
    # greedy tie resolves to the lower index
    tie = allocate([0.9, 0.9], AllocatorConfig(k_total=6, k_min=1, tau=1.0, greedy=True))
    assert tie.k.tolist() == [5, 1]


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        AllocatorConfig(k_total=-1)
    with pytest.raises(InvalidArgumentError):
        AllocatorConfig(k_min=-1)
    with pytest.raises(InvalidArgumentError):
        AllocatorConfig(tau=0.0)


utilities_st = st.lists(st.floats(-50, 50), min_size=1, max_size=64)


@settings(max_examples=300, deadline=None)
@given(
    u=utilities_st,
    k_total=st.integers(0, 4096),
    k_min=st.integers(0, 8),
    tau=st.floats(0.01, 100),
)
def test_allocation_invariants_property(u, k_total, k_min, tau):
    cfg = AllocatorConfig(k_total=k_total, k_min=k_min, tau=tau)
    sched = allocate(np.array(u), cfg)
    # exactness
    assert sched.total == k_total
    # coverage in feasible mode
    if sched.mode == "feasible":
        assert sched.k.min() >= k_min
    # monotonicity: strictly higher utility never gets fewer steps
    for i in range(len(u)):
        for j in range(len(u)):
            if u[i] > u[j]:
                assert sched.k[i] >= sched.k[j]
    # increments are 0/1 and fewer than M in feasible mode
    assert 0 <= sched.residual < max(2, len(u))


@settings(max_examples=100, deadline=None)
@given(
    u=st.lists(st.floats(-5, 5), min_size=2, max_size=32),
    k_total=st.integers(0, 512),
    k_min=st.integers(0, 4),
    tau=st.floats(0.05, 10),
    shift=st.floats(-100, 100),
)
def test_shift_invariance_property(u, k_total, k_min, tau, shift):
    cfg = AllocatorConfig(k_total=k_total, k_min=k_min, tau=tau)
    a = allocate(np.array(u), cfg)
    b = allocate(np.array(u) + shift, cfg)
    assert a.k.tolist() == b.k.tolist()


def test_temperature_limits():
    rng = np.random.default_rng(3)
    u = rng.normal(size=12)
    k_total, k_min = 64, 1
    hot = allocate(u, AllocatorConfig(k_total=k_total, k_min=k_min, tau=100.0))
    uni = uniform_schedule(12, k_total)
    assert np.abs(hot.k - uni.k).max() <= 1
    cold = allocate(u, AllocatorConfig(k_total=k_total, k_min=k_min, tau=0.01))
    arg = int(np.argmax(u))
    k_rem = k_total - 12 * k_min
    assert cold.k[arg] == k_min + k_rem
    assert all(cold.k[i] == k_min for i in range(12) if i != arg)


def test_fallback_conservation_property():
    rng = np.random.default_rng(11)
    for _ in range(200):
        M = int(rng.integers(1, 40))
        k_min = int(rng.integers(1, 8))
        k_total = int(rng.integers(0, M * k_min))  # strictly infeasible
        u = rng.normal(size=M)
        sched = allocate(u, AllocatorConfig(k_total=k_total, k_min=k_min, tau=1.0))
        assert sched.mode == "fallback"
        assert sched.total == k_total
        top = k_total // k_min
        assert int((sched.k > 0).sum()) <= max(top, 1)
        # only the selected top set (plus the remainder's top-1 chunk) gets budget
        order = np.argsort(-u, kind="stable")
        assert sched.k[order[max(top, 1):]].sum() == 0
        if top > 0:
            assert all(sched.k[order[i]] >= k_min for i in range(top))
