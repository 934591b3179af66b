import copy
import json
import os

import numpy as np
import pytest

from impactlab.errors import ConfigError
from impactlab.pipeline import (
    config_hash,
    run_pipeline,
    validate_run_config,
)

BASE_CONFIG = {
    "session": "10:00-10:10",
    "lags": [1, 2, 3, 5, 8, 13, 21, 34, 55, 89],
    "modes": ["include_zero", "exclude_zero"],
    "threads": 1,
    "synth": {
        "n_symbols": 4,
        "n_days": 2,
        "seed": 99,
        "metaorder_rate": 0.03,
        "metaorder_length_exponent": 1.6,
        "length_min": 2,
        "length_max": 40,
        "participation": 0.8,
        "impact": {"g0": 0.01, "tau0": 10.0, "beta": 0.5},
        "cross_coupling": 0.2,
        "noise_std": 0.0005,
    },
    "report": {"matrix_tau": 5, "include_scale": 6.0},
}


def run_once(tmp_path, name="run", overrides=None, threads=None):
    raw = copy.deepcopy(BASE_CONFIG)
    if overrides:
        raw.update(overrides)
    if threads is not None:
        raw["threads"] = threads
    cfg = validate_run_config(raw)
    out = tmp_path / name
    manifest = run_pipeline(cfg, str(out))
    return out, manifest


class TestConfigValidation:
    def test_unknown_top_level_key(self):
        raw = copy.deepcopy(BASE_CONFIG)
        raw["modus"] = ["include_zero"]
        with pytest.raises(ConfigError, match="modus"):
            validate_run_config(raw)

    def test_unknown_nested_key(self):
        raw = copy.deepcopy(BASE_CONFIG)
        raw["report"]["matrix_tua"] = 5
        with pytest.raises(ConfigError, match="matrix_tua"):
            validate_run_config(raw)

    def test_unknown_synth_key(self):
        raw = copy.deepcopy(BASE_CONFIG)
        raw["synth"]["metaorder_r光"] = 1
        with pytest.raises(ConfigError):
            validate_run_config(raw)

    def test_missing_sector_map_fails_before_compute(self, tmp_path):
        raw = copy.deepcopy(BASE_CONFIG)
        del raw["synth"]
        raw["data"] = {"trades": "nope_*.csv", "quotes": "nope_*.csv"}
        with pytest.raises(ConfigError):
            validate_run_config(raw, base_dir=str(tmp_path))

    def test_sector_map_path_checked(self, tmp_path):
        raw = copy.deepcopy(BASE_CONFIG)
        raw["sector_map"] = "missing.csv"
        with pytest.raises(ConfigError, match="sector map"):
            validate_run_config(raw, base_dir=str(tmp_path))

    def test_data_and_synth_mutually_exclusive(self):
        raw = copy.deepcopy(BASE_CONFIG)
        raw["data"] = {"trades": "x", "quotes": "y"}
        with pytest.raises(ConfigError):
            validate_run_config(raw)

    def test_bad_mode_rejected(self):
        raw = copy.deepcopy(BASE_CONFIG)
        raw["modes"] = ["sometimes"]
        with pytest.raises(ConfigError):
            validate_run_config(raw)

    def test_session_override_of_synth_rejected(self):
        raw = copy.deepcopy(BASE_CONFIG)
        raw["synth"]["open_s"] = 0
        with pytest.raises(ConfigError, match="session"):
            validate_run_config(raw)

    def test_matrix_tau_added_to_grid(self):
        raw = copy.deepcopy(BASE_CONFIG)
        raw["report"]["matrix_tau"] = 7  # not in the lag list
        cfg = validate_run_config(raw)
        assert 7 in cfg.lags.tolist()


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    return run_once(tmp_path_factory.mktemp("pipe"))


class TestRunPipeline:
    def test_manifest_lists_seven_stages(self, run):
        _, manifest = run
        assert [s["name"] for s in manifest["stages"]] == [
            "ingest", "signs", "respond", "correlate", "aggregate", "fit", "figure"
        ]

    def test_manifest_has_hashes_and_counts(self, run):
        out, manifest = run
        assert manifest["config_hash"] == config_hash(BASE_CONFIG)
        for stage in manifest["stages"]:
            assert stage["outputs"], stage["name"]
            for rel, digest in stage["outputs"].items():
                assert (out / rel).exists()
                assert len(digest) == 64
        ingest_counts = manifest["stages"][0]["counts"]
        assert ingest_counts["symbol_days"] == 8
        assert ingest_counts["malformed"] == 0

    def test_workspace_layout(self, run):
        out, _ = run
        for sub in ("inputs", "series", "signs", "curves", "aggregates",
                    "fits", "figures"):
            assert (out / sub).is_dir(), sub
        assert (out / "manifest.json").exists()

    def test_curve_store_panel_matches_pair_estimators(self, run):
        # the packed all-pairs store equals the per-pair fast path applied
        # to the same series/signs files
        from impactlab.estimators import (
            PairKey,
            average_days,
            correlator_fast,
            response_fast,
        )
        from impactlab.store import (
            curve_mapping_from_store,
            load_second_series,
            load_sign_series,
        )

        out, _ = run
        series = {}
        signs = {}
        for name in sorted(os.listdir(out / "series")):
            s = load_second_series(out / "series" / name)
            series[(s.symbol, s.grid.date)] = s
        for name in sorted(os.listdir(out / "signs")):
            g, _ = load_sign_series(out / "signs" / name)
            signs[(g.symbol, g.grid.date)] = g
        symbols = sorted({k[0] for k in series})
        dates = sorted({k[1] for k in series})
        lags = np.array(BASE_CONFIG["lags"])
        for mode in ("include_zero", "exclude_zero"):
            resp = curve_mapping_from_store(out / "curves" / f"response_{mode}")
            corr = curve_mapping_from_store(out / "curves" / f"correlator_{mode}")
            for i in symbols[:2]:
                for j in symbols[:2]:
                    want = average_days([
                        response_fast(series[(i, d)], signs[(j, d)], lags, mode)
                        for d in dates
                    ])
                    got = resp[PairKey(i, j)]
                    np.testing.assert_allclose(got.value, want.value,
                                               rtol=1e-12, equal_nan=True)
                    want = average_days([
                        correlator_fast(signs[(i, d)], signs[(j, d)], lags, mode)
                        for d in dates
                    ])
                    got = corr[PairKey(i, j)]
                    np.testing.assert_allclose(got.value, want.value,
                                               rtol=1e-12, equal_nan=True)

    def test_fit_reports_are_valid_json(self, run):
        out, _ = run
        for mode in ("include_zero", "exclude_zero"):
            with open(out / "fits" / f"fit_sign_self_{mode}.json") as fh:
                payload = json.load(fh)
            assert payload["kind"] == "self"
            assert payload["n_pts"] >= 4
            assert {"theta", "tau_scale", "gamma", "chi2_norm"} <= payload.keys()

    def test_matrix_shape_and_normalization(self, run):
        out, _ = run
        path = out / "aggregates" / "matrix_tau5_include_zero.csv"
        rows = path.read_text().splitlines()
        header = rows[0].split(",")
        assert header[0] == "symbol" and len(header) == 5
        vals = np.array([[float(x) for x in r.split(",")[1:]] for r in rows[1:]])
        assert vals.shape == (4, 4)
        assert np.max(np.abs(vals)) == pytest.approx(1.0)

    def test_figure_scale_round_trip(self, run):
        # dividing the scaled include series by the recorded factor recovers
        # the stored aggregate exactly; dispersion is never scaled
        from decimal import Decimal

        from impactlab.store import load_curve_csv

        out, _ = run
        with open(out / "figures" / "market_self.json") as fh:
            meta = json.load(fh)
        factor = meta["series"]["include_zero"]["scale"]
        assert factor == 6.0
        stored = load_curve_csv(out / "aggregates" / "market_self_include_zero.csv")
        fig_rows = (out / "figures" / "market_self.csv").read_text().splitlines()[1:]
        got_v, got_d = {}, {}
        for row in fig_rows:
            name, tau, value, disp = row.split(",")
            if name == "include_zero":
                got_v[int(tau)] = value
                got_d[int(tau)] = float(disp)
        for k, tau in enumerate(stored.lags.tolist()):
            if np.isnan(stored.value[k]):
                assert got_v[tau] == "nan"
            else:
                recovered = float(Decimal(got_v[tau]) / Decimal(repr(factor)))
                assert recovered == stored.value[k]
                # and the scaled display value is factor * stored up to 1 ulp
                assert float(got_v[tau]) == pytest.approx(
                    factor * stored.value[k], rel=1e-15)
            same_disp = got_d[tau] == stored.dispersion[k]
            assert same_disp or (np.isnan(got_d[tau]) and np.isnan(stored.dispersion[k]))

    def test_sign_figures_carry_fit_overlay(self, run):
        out, _ = run
        rows = (out / "figures" / "sign_self.csv").read_text().splitlines()[1:]
        names = {r.split(",")[0] for r in rows}
        assert "fit_include_zero" in names and "fit_exclude_zero" in names


class TestDeterminism:
    def test_rerun_and_thread_count_byte_identical(self, tmp_path):
        out1, m1 = run_once(tmp_path, "a", threads=1)
        out2, m2 = run_once(tmp_path, "b", threads=2)
        # configs differ only in the threads field, which is execution
        # policy; outputs must match file for file
        s1 = {s["name"]: s["outputs"] for s in m1["stages"]}
        s2 = {s["name"]: s["outputs"] for s in m2["stages"]}
        assert s1 == s2
        assert m1["inputs"] == m2["inputs"]

    def test_scale_factor_divides_exactly(self, tmp_path):
        # power-of-two factor: even plain float division is lossless
        out, _ = run_once(tmp_path, "c", overrides={
            "report": {"matrix_tau": 5, "include_scale": 2.0}})
        from impactlab.store import load_curve_csv

        stored = load_curve_csv(out / "aggregates" / "market_cross_include_zero.csv")
        rows = (out / "figures" / "market_cross.csv").read_text().splitlines()[1:]
        for row in rows:
            name, tau, value, _ = row.split(",")
            if name != "include_zero":
                continue
            k = stored.lags.tolist().index(int(tau))
            if np.isnan(stored.value[k]):
                assert value == "nan"
            else:
                assert float(value) / 2.0 == stored.value[k]


class TestIngestAccounting:
    def test_row_conservation(self, tmp_path):
        # parsed = kept + dropped-out-of-session + malformed, per stage counts
        from impactlab.pipeline import stage_ingest

        trades = tmp_path / "trades_x.csv"
        quotes = tmp_path / "quotes_x.csv"
        base = 13880 * 86400  # 2008-01-02 00:00, epoch seconds
        in_s = (base + 36005) * 10**9
        out_s = (base + 20000) * 10**9
        trades.write_text(
            "symbol,ts,price,size\n"
            f"A,{in_s},10.0,1\n"
            f"A,{out_s},10.0,1\n"
            "A,garbage,10.0,1\n"
        )
        quotes.write_text(
            "symbol,ts,bid,ask\n"
            f"A,{in_s},9.0,10.0\n"
            f"A,{out_s},9.0,10.0\n"
        )
        raw = copy.deepcopy(BASE_CONFIG)
        del raw["synth"]
        raw["data"] = {"trades": "trades_*.csv", "quotes": "quotes_*.csv"}
        raw["sector_map"] = "sectors.csv"
        (tmp_path / "sectors.csv").write_text("symbol,sector\nA,Energy\n")
        cfg = validate_run_config(raw, base_dir=str(tmp_path))
        result = stage_ingest(cfg, str(tmp_path / "ws"),
                              cfg.data["trades"], cfg.data["quotes"])
        c = result["counts"]
        assert c["trade_rows"] == 3 and c["quote_rows"] == 2
        assert c["malformed"] == 1
        assert c["dropped_out_of_session"] == 2
        parsed = c["trade_rows"] + c["quote_rows"] - c["malformed"]
        kept = parsed - c["dropped_out_of_session"]
        assert kept == 2 and c["symbol_days"] == 1


class TestDayBoundary:
    def test_forward_fill_never_crosses_days(self, tmp_path):
        # day 2 opens with no quote: its leading cells stay missing instead
        # of inheriting day 1's last midpoint
        from impactlab.pipeline import stage_ingest
        from impactlab.store import load_second_series

        d1 = 13880 * 86400  # 2008-01-02
        d2 = 13881 * 86400  # 2008-01-03
        quotes = tmp_path / "quotes_x.csv"
        quotes.write_text(
            "symbol,ts,bid,ask\n"
            f"A,{(d1 + 36000) * 10**9},9.0,11.0\n"      # day 1 cell 0
            f"A,{(d2 + 36300) * 10**9},19.0,21.0\n"     # day 2 cell 300
        )
        trades = tmp_path / "trades_x.csv"
        trades.write_text("symbol,ts,price,size\n"
                          f"A,{(d1 + 36001) * 10**9},10.0,1\n")
        raw = copy.deepcopy(BASE_CONFIG)
        del raw["synth"]
        raw["data"] = {"trades": "trades_*.csv", "quotes": "quotes_*.csv"}
        raw["sector_map"] = "sectors.csv"
        (tmp_path / "sectors.csv").write_text("symbol,sector\nA,Energy\n")
        cfg = validate_run_config(raw, base_dir=str(tmp_path))
        stage_ingest(cfg, str(tmp_path / "ws"), cfg.data["trades"], cfg.data["quotes"])
        day1 = load_second_series(tmp_path / "ws" / "series" / "A__2008-01-02.series")
        day2 = load_second_series(tmp_path / "ws" / "series" / "A__2008-01-03.series")
        assert (day1.midpoint == 10.0).all()
        assert np.isnan(day2.midpoint[:300]).all()
        assert (day2.midpoint[300:] == 20.0).all()


class TestDataModePipeline:
    def test_runs_from_csv_files(self, tmp_path):
        # generate CSVs once, then run a data-mode config against them
        from impactlab.synth import SynthConfig, emit_csv_universe, generate

        synth_raw = dict(BASE_CONFIG["synth"])
        synth_raw["open_s"] = 36000
        synth_raw["close_s"] = 36600
        data_dir = tmp_path / "csv"
        emit_csv_universe(generate(SynthConfig.from_dict(synth_raw)), data_dir)
        raw = copy.deepcopy(BASE_CONFIG)
        del raw["synth"]
        raw["data"] = {"trades": "csv/trades_*.csv", "quotes": "csv/quotes_*.csv"}
        raw["sector_map"] = "csv/sectors.csv"
        cfg = validate_run_config(raw, base_dir=str(tmp_path))
        manifest = run_pipeline(cfg, str(tmp_path / "out"))
        assert len(manifest["stages"]) == 7
        assert manifest["inputs"] == {}
