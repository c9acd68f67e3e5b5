from collections import Counter

import numpy as np
import pytest

from runwaysim.policies import (SequenceStats, move_operator_H, mutate, mutation_window,
                                rank_and_select, shift, triangular_index, update_stats)
from runwaysim.policies.search import _triangular_from_int, psi_schedule, z_quantile


# --- operator H --------------------------------------------------------------------

def _position_weights(l):
    """Exact distribution of the chosen position over the whole code space."""
    codes = 3 * l * (l + 1)
    cnt = Counter(_triangular_from_int(l, x // 6) for x in range(codes))
    return {p: c / codes for p, c in cnt.items()}


def test_h_position_weights():
    w = _position_weights(15)
    assert w[1] == pytest.approx(0.125, abs=0)
    L = 15 * 16 / 2
    for p in range(1, 16):
        assert w[p] == pytest.approx((16 - p) / L, abs=1e-15)


def test_h_direction_and_distance_uniform():
    l = 7
    cnt = Counter(x % 6 for x in range(3 * l * (l + 1)))
    assert len(set(cnt.values())) == 1 and len(cnt) == 6


def test_triangular_index_frequencies():
    rng = np.random.default_rng(0)
    x = np.array([triangular_index(12, rng) for _ in range(40_000)])
    assert np.mean(x == 1) == pytest.approx(12 / 78, abs=0.006)
    assert x.min() == 1 and x.max() == 12


def test_shift_examples():
    assert shift((1, 2, 3), 2, False, 3) == (1, 3, 2)
    assert shift((1, 2, 3), 2, True, 3) == (2, 1, 3)
    assert shift((1, 2, 3, 4, 5), 4, True, 2) == (1, 4, 2, 3, 5)
    assert shift((1, 2, 3, 4, 5), 1, False, 1) == (2, 1, 3, 4, 5)


def test_h_single_position_is_identity():
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert move_operator_H((9,), rng) == (9,)


def test_h_preserves_multiset():
    rng = np.random.default_rng(2)
    s = tuple(rng.permutation(15))
    for _ in range(500):
        t = move_operator_H(s, rng)
        assert sorted(t) == sorted(s)
        s = t


# --- mutation ----------------------------------------------------------------------

def test_mutation_window_examples():
    assert mutation_window(15, 3) == (3, 1)
    assert mutation_window(15, 20) == (4, 12)
    assert mutation_window(15, 15) == (4, 12)
    assert mutation_window(15, 1)[0] == 1


def test_mutate_single_element_block_is_identity():
    rng = np.random.default_rng(3)
    s = tuple(range(15))
    for _ in range(20):
        assert mutate(s, 1, rng) == s


def test_mutate_start_weights():
    cnt = Counter(_triangular_from_int(12, x) for x in range(78))
    assert cnt[1] / 78 == pytest.approx(12 / 78)
    assert cnt[12] == 1


def test_mutate_touches_only_the_block():
    rng = np.random.default_rng(4)
    s = tuple(range(15))
    for _ in range(300):
        t = mutate(s, 3, rng)          # block is positions 1..3
        assert t[3:] == s[3:] and sorted(t[:3]) == [0, 1, 2]
    for _ in range(300):
        t = mutate(s, 30, rng)
        diff = [i for i in range(15) if t[i] != s[i]]
        if diff:
            assert diff[-1] - diff[0] <= 3
        assert sorted(t) == list(s)


# --- running estimates -------------------------------------------------------------

def test_update_stats_examples():
    st = SequenceStats()
    for J in (4.0, 6.0):
        st = update_stats(st, J, 0.0)
    assert st.V == 5.0 and st.W == 26.0 and st.n == 2
    first = update_stats(SequenceStats(V=123.0, W=9.0, Upsilon=1.0, n=0), 7.5, 1.0)
    assert first.V == 7.5
    st = SequenceStats()
    for xi in (1, 0, 0, 1):
        st = update_stats(st, 0.0, xi)
    assert st.Upsilon == 0.5


def test_update_stats_is_running_mean(rng):
    J = rng.exponential(100.0, 5000)
    st = SequenceStats()
    for j in J:
        st = update_stats(st, j, 0.0)
    assert st.V == pytest.approx(J.mean(), rel=1e-9)
    assert st.W == pytest.approx(np.mean(J * J), rel=1e-9)
    assert st.V ** 2 <= st.W * (1 + 1e-12)


def test_constant_step_size():
    f = psi_schedule(0.2)
    assert f(1) == 1.0 and f(2) == 0.2
    st = SequenceStats()
    for J in (10.0, 0.0):
        st = update_stats(st, J, 0.0, psi_rule=0.2)
    assert st.V == pytest.approx(8.0)
    with pytest.raises(ValueError):
        psi_schedule(1.5)


# --- ranking and selection ---------------------------------------------------------

def test_rank_and_select_identical_members_kept():
    keep = rank_and_select([5.0, 5.0], [30.0, 30.0], n=10)
    assert keep.tolist() == [True, True]


def test_rank_and_select_removes_clear_loser():
    z = z_quantile(0.05)
    n = 2
    x = 25.0 / z ** 2 * (n - 1)            # makes Z exactly 5
    keep = rank_and_select([10.0, 0.0], [100.0 + x, 0.0], n=n)
    assert keep.tolist() == [False, True]
    # a threshold a little above 10 keeps it
    keep = rank_and_select([10.0, 0.0], [100.0 + 4.1 * x, 0.0], n=n)
    assert keep.tolist() == [True, True]


def test_rank_and_select_needs_two_samples():
    assert rank_and_select([1.0, 2.0], [1.0, 4.0], n=1) is None


def test_rank_and_select_keeps_argmin(rng):
    for _ in range(2000):
        k = int(rng.integers(2, 25))
        V = rng.normal(100, 30, k)
        W = V ** 2 + rng.exponential(50, k)
        keep = rank_and_select(V, W, n=int(rng.integers(2, 500)), eta=float(rng.uniform(0.01, 0.5)))
        assert keep[int(np.argmin(V))]
