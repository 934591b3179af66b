import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impactlab.signing import second_signs, sign_series_for, tick_signs, zero_mask
from impactlab.taq_ingest import SecondSeries

from conftest import make_grid, make_signs


def oracle_tick_signs(prices):
    """Direct transcription of the two-branch per-trade sign definition."""
    out = []
    prev_sign = 0
    for n, p in enumerate(prices):
        if n == 0:
            s = 0  # first trade of the day: no predecessor
        elif p != prices[n - 1]:
            s = 1 if p > prices[n - 1] else -1
        else:
            s = prev_sign
        out.append(s)
        prev_sign = s
    return out


def oracle_sgn(x):
    return 1 if x > 0 else (-1 if x < 0 else 0)


class TestTickSigns:
    def test_spec_sequences(self):
        assert tick_signs([10.00, 10.01, 10.01, 10.00]).tolist() == [0, 1, 1, -1]
        assert tick_signs([5, 5, 5]).tolist() == [0, 0, 0]
        assert tick_signs([10, 9, 10, 10]).tolist() == [0, -1, 1, 1]

    def test_exhaustive_small_alphabet(self):
        # every price path of length <= 4 over a 3-value alphabet
        alphabet = (10.0, 10.01, 10.02)
        for n in range(0, 5):
            for seq in itertools.product(alphabet, repeat=n):
                got = tick_signs(list(seq)).tolist()
                assert got == oracle_tick_signs(list(seq)), seq

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            tick_signs([1.0, -1.0])

    @given(st.lists(st.sampled_from([100.0, 100.5, 101.0, 101.5]), min_size=1,
                    max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_mirror_equivariance(self, prices):
        # mirroring prices around a constant negates every nonzero sign
        p = np.array(prices)
        mirrored = 2 * 150.0 - p
        np.testing.assert_array_equal(tick_signs(p), -tick_signs(mirrored))


class TestSecondSigns:
    def test_sgn_of_cell_sums(self):
        grid = make_grid(4)
        signs = [1, 1, -1, 1, -1]
        cells = [0, 0, 0, 1, 1]
        eps = second_signs(signs, cells, grid).eps
        assert eps.tolist() == [1, 0, 0, 0]

    def test_empty_cells_are_zero(self):
        grid = make_grid(3)
        eps = second_signs([], [], grid).eps
        assert eps.tolist() == [0, 0, 0]

    def test_exhaustive_multisets(self):
        # all ordered sign tuples of size <= 4 in one cell vs the Sgn oracle
        grid = make_grid(1)
        for n in range(0, 5):
            for combo in itertools.product((-1, 0, 1), repeat=n):
                eps = second_signs(list(combo), [0] * n, grid).eps
                assert eps[0] == oracle_sgn(sum(combo)), combo

    def test_depends_only_on_signs_not_prices(self):
        # two price paths with identical tick signs and bucketing
        grid = make_grid(2)
        a = tick_signs([10.0, 10.5, 10.4, 10.6])
        b = tick_signs([200.0, 201.0, 200.5, 201.5])
        np.testing.assert_array_equal(a, b)
        ea = second_signs(a, [0, 0, 1, 1], grid).eps
        eb = second_signs(b, [0, 0, 1, 1], grid).eps
        np.testing.assert_array_equal(ea, eb)

    @given(st.lists(st.sampled_from([-1, 0, 1]), min_size=0, max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_sum_bound(self, eps_values):
        grid = make_grid(max(len(eps_values), 1))
        signs = make_signs(eps_values + [0] * (grid.len - len(eps_values)), grid)
        assert abs(int(signs.eps.sum())) <= int(np.count_nonzero(signs.eps))


class TestZeroMask:
    def test_basic(self):
        signs = make_signs([1, 0, -1])
        assert zero_mask(signs).tolist() == [True, False, True]

    def test_all_zero(self):
        signs = make_signs([0, 0, 0, 0])
        assert not zero_mask(signs).any()

    def test_no_zeros(self):
        signs = make_signs([1, -1, 1])
        assert zero_mask(signs).all()


class TestSignSeriesForSeries:
    def test_full_path_from_trades(self):
        grid = make_grid(5)
        # second 0: up-tick; second 1: balanced; second 3: down-tick
        cells = np.array([0, 0, 1, 1, 3])
        prices = np.array([10.0, 10.1, 10.2, 10.1, 10.0])
        series = SecondSeries("A", grid, np.full(5, np.nan), cells, prices)
        signs = sign_series_for(series)
        # ticks: [0, +1, +1, -1, -1] -> cells sums [1, 0, _, -1]
        assert signs.eps.tolist() == [1, 0, 0, -1, 0]

    def test_day_locality(self):
        # the first trade of a day starts at 0 even if yesterday ended -1
        assert tick_signs([10.0, 10.0]).tolist() == [0, 0]
