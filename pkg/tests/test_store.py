import datetime as dt
import hashlib

import numpy as np
import pytest

from impactlab.estimators import LagCurve, PairKey
from impactlab.signing import SignSeries
from impactlab.store import (
    curve_mapping_from_store,
    load_curve_csv,
    load_second_series,
    load_sign_series,
    save_curve_csv,
    save_curve_store,
    save_second_series,
    save_sign_series,
    signs_debug_csv,
)
from impactlab.taq_ingest import SecondSeries

from conftest import make_grid


def sample_series(n=12):
    grid = make_grid(n)
    rng = np.random.default_rng(1)
    mid = 100 + rng.standard_normal(n).cumsum() * 0.01
    mid[:2] = np.nan
    cells = np.array([3, 3, 5, 9])
    prices = np.array([100.01, 100.02, 100.0, 99.98])
    return SecondSeries("ZZZ", grid, mid, cells, prices)


class TestSeriesContainer:
    def test_round_trip(self, tmp_path):
        series = sample_series()
        path = tmp_path / "z.series"
        save_second_series(series, path)
        back = load_second_series(path)
        assert back.symbol == "ZZZ"
        assert back.grid == series.grid
        np.testing.assert_array_equal(back.midpoint, series.midpoint)
        np.testing.assert_array_equal(back.trade_cells, series.trade_cells)
        np.testing.assert_array_equal(back.trade_prices, series.trade_prices)
        np.testing.assert_array_equal(back.n_trades, series.n_trades)

    def test_versioned_header_line(self, tmp_path):
        path = tmp_path / "z.series"
        save_second_series(sample_series(), path)
        first = path.read_bytes().split(b"\n", 1)[0]
        assert first.startswith(b"IMPACTLAB-SERIES v1 ")

    def test_write_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        save_second_series(sample_series(), a)
        save_second_series(sample_series(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "z.series"
        path.write_bytes(b"NOT-A-SERIES v9 {}\n")
        with pytest.raises(ValueError):
            load_second_series(path)


class TestSignsContainer:
    def test_round_trip_with_trades(self, tmp_path):
        grid = make_grid(6)
        signs = SignSeries("QQQ", grid, np.array([0, 1, -1, 0, 1, 0]))
        n_trades = np.array([0, 2, 1, 0, 3, 0])
        path = tmp_path / "q.signs"
        save_sign_series(signs, path, n_trades=n_trades)
        back, nt = load_sign_series(path)
        np.testing.assert_array_equal(back.eps, signs.eps)
        np.testing.assert_array_equal(nt, n_trades)

    def test_first_trade_convention_recorded(self, tmp_path):
        import json

        grid = make_grid(3)
        path = tmp_path / "q.signs"
        save_sign_series(SignSeries("Q", grid, np.zeros(3, dtype=int)), path)
        header = path.read_bytes().split(b"\n", 1)[0].decode()
        meta = json.loads(header.split(" ", 2)[2])
        assert meta["first_trade_sign"] == 0

    def test_debug_csv(self, tmp_path):
        grid = make_grid(3)
        signs = SignSeries("Q", grid, np.array([1, 0, -1]))
        path = tmp_path / "dump.csv"
        signs_debug_csv(signs, np.array([2, 0, 1]), path)
        assert path.read_text() == "t_index,eps,n_trades\n0,1,2\n1,0,0\n2,-1,1\n"


class TestCurveCsv:
    def curve(self):
        return LagCurve(
            np.array([1, 5, 30]), np.array([0.5, np.nan, -0.25]),
            np.array([0.1, 0.0, 0.2]), np.array([3, 0, 2]),
            {"i": "A", "j": "B", "mode": "exclude_zero", "kind": "response",
             "dates": ["2008-01-02"]},
        )

    def test_round_trip_including_nan(self, tmp_path):
        path = tmp_path / "c.csv"
        save_curve_csv(self.curve(), path)
        back = load_curve_csv(path)
        np.testing.assert_array_equal(back.lags, [1, 5, 30])
        assert back.value[0] == 0.5 and np.isnan(back.value[1])
        assert back.meta["mode"] == "exclude_zero"
        assert "grid_hash" in back.meta

    def test_header_format(self, tmp_path):
        path = tmp_path / "c.csv"
        save_curve_csv(self.curve(), path)
        assert path.read_text().splitlines()[0] == "tau,value,dispersion,n_samples"

    def test_sidecar_written(self, tmp_path):
        path = tmp_path / "c.csv"
        save_curve_csv(self.curve(), path)
        assert (tmp_path / "c.json").exists()


class TestCurveStore:
    def test_round_trip_mapping(self, tmp_path):
        symbols = ["A", "B"]
        lags = np.array([1, 2, 4])
        rng = np.random.default_rng(2)
        value = rng.standard_normal((2, 2, 3))
        disp = np.abs(rng.standard_normal((2, 2, 3)))
        n = rng.integers(1, 5, size=(2, 2, 3))
        store = tmp_path / "resp"
        save_curve_store(store, symbols, lags, value, disp, n,
                         {"kind": "response", "mode": "include_zero",
                          "dates": ["2008-01-02"]})
        curves = curve_mapping_from_store(store)
        got = curves[PairKey("A", "B")]
        np.testing.assert_array_equal(got.value, value[0, 1])
        np.testing.assert_array_equal(got.n_samples, n[0, 1])
        assert got.meta["i"] == "A" and got.meta["j"] == "B"

    def test_store_files_deterministic(self, tmp_path):
        symbols = ["A"]
        lags = np.array([1])
        args = (symbols, lags, np.ones((1, 1, 1)), np.zeros((1, 1, 1)),
                np.ones((1, 1, 1), dtype=int), {"kind": "response", "mode": "m",
                                                "dates": []})

        def digest(sub):
            save_curve_store(tmp_path / sub, *args)
            return {
                p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted((tmp_path / sub).iterdir())
            }

        assert digest("x") == digest("y")
