from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from md2ga.schedule import Mode, ScheduleError, build_mask, compute_horizons


def oracle_lengths(T_p, T_f, K):
    dis = Fraction(T_f - 1, K - 1)
    return tuple(math.floor((k - 1) * dis) + 1 + T_p for k in range(1, K + 1))


@pytest.mark.parametrize("T_p,T_f,K,expected", [
    (10, 10, 6, (11, 12, 14, 16, 18, 20)),
    (10, 25, 6, (11, 15, 20, 25, 30, 35)),
    (10, 10, 2, (11, 20)),
])
def test_incremental_examples(T_p, T_f, K, expected):
    assert compute_horizons(T_p, T_f, K).lengths == expected
    assert oracle_lengths(T_p, T_f, K) == expected


def test_k_below_two_rejected():
    with pytest.raises(ScheduleError, match="K >= 2"):
        compute_horizons(10, 10, 1)


def test_k_above_tf_rejected():
    with pytest.raises(ScheduleError):
        compute_horizons(10, 4, 5)


def test_full_all():
    s = compute_horizons(10, 10, 4, "full-all")
    assert s.lengths == (20,) * 4
    assert np.all(build_mask(s) == 1)


@given(st.integers(1, 20), st.integers(2, 50), st.data())
def test_incremental_invariants(T_p, T_f, data):
    K = data.draw(st.integers(2, min(8, T_f)))
    s = compute_horizons(T_p, T_f, K)
    L = s.lengths
    assert L[0] == T_p + 1 and L[-1] == T_p + T_f
    assert all(a < b for a, b in zip(L, L[1:]))
    mask = build_mask(s)
    # rows are prefix indicators
    assert np.all(np.diff(mask, axis=1) <= 0)
    assert np.all(mask.sum(axis=0) >= 1)


@given(st.integers(1, 20), st.integers(2, 50), st.data())
def test_disjoint_partitions_future(T_p, T_f, data):
    K = data.draw(st.integers(2, min(8, T_f)))
    s = compute_horizons(T_p, T_f, K, Mode.DISJOINT)
    covered = []
    for first, last in s.spans():
        covered.extend(range(max(first, T_p + 1), last + 1))
    assert covered == list(range(T_p + 1, T_p + T_f + 1))
    mask = build_mask(s)
    assert np.all(mask.sum(axis=0) == 1)
    assert sum(s.future_frames()) == T_f


def test_disjoint_remainder_goes_to_last():
    s = compute_horizons(10, 10, 3, "disjoint")
    assert s.future_frames() == [3, 3, 4]


def test_mask_two_decoders():
    mask = build_mask(compute_horizons(10, 10, 2))
    assert mask[0].tolist() == [1.0] * 11 + [0.0] * 9
    assert mask[1].tolist() == [1.0] * 20
    assert mask[:, 19].tolist() == [0.0, 1.0]


def test_table_columns():
    s = compute_horizons(10, 10, 6)
    assert s.table()[0] == (1, 11, 1)
    assert s.table()[-1] == (6, 20, 10)
