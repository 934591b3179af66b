import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

SYNTH_CONFIG = {
    "n_symbols": 3,
    "n_days": 2,
    "seed": 5,
    "metaorder_rate": 0.03,
    "metaorder_length_exponent": 1.6,
    "length_min": 2,
    "length_max": 40,
    "participation": 0.8,
    "impact": {"g0": 0.01, "tau0": 10.0, "beta": 0.5},
    "cross_coupling": 0.2,
    "noise_std": 0.0005,
    "open_s": 36000,
    "close_s": 36600,
}

RUN_CONFIG = {
    "session": "10:00-10:10",
    "lags": [1, 2, 3, 5, 8, 13, 21, 34],
    "threads": 1,
    "synth": {k: v for k, v in SYNTH_CONFIG.items() if k not in ("open_s", "close_s")},
    "report": {"matrix_tau": 5},
}


def impactlab(*args, check=True):
    proc = subprocess.run(
        [sys.executable, "-m", "impactlab", *map(str, args)],
        capture_output=True, text=True,
    )
    if check and proc.returncode != 0:
        raise AssertionError(f"impactlab {args} failed:\n{proc.stdout}\n{proc.stderr}")
    return proc


def tree_digest(root):
    out = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root)
            out[rel] = hashlib.sha256(open(full, "rb").read()).hexdigest()
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    base = tmp_path_factory.mktemp("cliws")
    synth_cfg = base / "synth.json"
    synth_cfg.write_text(json.dumps(SYNTH_CONFIG))
    impactlab("synth", "--config", synth_cfg, "--out", base / "csv")
    ws = base / "ws"
    impactlab(
        "ingest", "--trades", str(base / "csv" / "trades_*.csv"),
        "--quotes", str(base / "csv" / "quotes_*.csv"),
        "--session", "10:00-10:10", "--out", ws,
    )
    impactlab("signs", "--in", ws, "--out", ws)
    return base, ws


class TestStageCommands:
    def test_synth_and_ingest_outputs(self, workspace):
        base, ws = workspace
        assert sorted(p.name for p in (ws / "series").iterdir()) == sorted(
            f"SYM{k:03d}__2008-01-0{d}.series" for k in range(3) for d in (2, 3)
        )
        assert len(list((ws / "signs").iterdir())) == 6

    def test_respond_correlate_aggregate_fit_figure(self, workspace):
        base, ws = workspace
        lagspec = "1,2,3,5,8,13,21,34"
        impactlab("respond", "--in", ws, "--lags", lagspec,
                  "--session", "10:00-10:10")
        impactlab("correlate", "--in", ws, "--lags", lagspec,
                  "--session", "10:00-10:10")
        assert (ws / "curves" / "response_include_zero" / "value.npy").exists()
        impactlab("aggregate", "--in", ws, "--sectors", base / "csv" / "sectors.csv",
                  "--tau", 5, "--lags", lagspec, "--session", "10:00-10:10")
        assert (ws / "aggregates" / "market_self_exclude_zero.csv").exists()
        out = impactlab("fit", "--curve",
                        ws / "aggregates" / "sign_self_exclude_zero.csv")
        payload = json.loads(out.stdout)
        assert {"theta", "tau_scale", "gamma", "chi2_norm", "converged"} <= payload.keys()
        impactlab("figure", "--what", "market_self", "--in", ws, "--tau", 5,
                  "--lags", lagspec, "--session", "10:00-10:10")
        assert (ws / "figures" / "market_self.csv").exists()
        impactlab("figure", "--what", "matrix", "--in", ws, "--tau", 5,
                  "--lags", lagspec, "--session", "10:00-10:10")
        assert (ws / "figures" / "matrix_include_zero.csv").exists()

    def test_pairs_list_writes_per_pair_csvs(self, workspace):
        base, ws = workspace
        impactlab("respond", "--in", ws, "--lags", "1,2,3,5",
                  "--session", "10:00-10:10", "--pairs", "list:SYM000:SYM001",
                  "--mode", "exclude")
        path = ws / "curves" / "pairs" / "response_SYM000_SYM001_exclude_zero.csv"
        assert path.exists()
        header = path.read_text().splitlines()[0]
        assert header == "tau,value,dispersion,n_samples"

    def test_self_pairs(self, workspace):
        base, ws = workspace
        impactlab("correlate", "--in", ws, "--lags", "1,2,3,5",
                  "--session", "10:00-10:10", "--pairs", "self", "--mode", "include")
        path = ws / "curves" / "pairs" / "correlator_SYM002_SYM002_include_zero.csv"
        assert path.exists()


class TestSynthDeterminism:
    def test_synth_identical_across_runs_and_threads(self, tmp_path):
        cfg = tmp_path / "synth.json"
        cfg.write_text(json.dumps(SYNTH_CONFIG))
        digests = []
        for sub, threads in (("a", "1"), ("b", "2")):
            env_threads = ["--threads", threads]
            impactlab("synth", "--config", cfg, "--out", tmp_path / sub, *env_threads)
            digests.append(tree_digest(tmp_path / sub))
        assert digests[0] == digests[1]


class TestRunCommand:
    def test_demo_config_smoke(self, tmp_path):
        import importlib.resources as res

        with res.as_file(res.files("impactlab") / "data" / "demo_run.json") as demo:
            proc = impactlab("run", "--config", demo, "--out", tmp_path / "demo")
        summary = json.loads(proc.stdout)
        assert summary["stages"] == 7
        manifest = json.loads((tmp_path / "demo" / "manifest.json").read_text())
        assert [s["name"] for s in manifest["stages"]] == [
            "ingest", "signs", "respond", "correlate", "aggregate", "fit", "figure"
        ]

    def test_invalid_config_fails_fast(self, tmp_path):
        cfg = tmp_path / "bad.json"
        bad = dict(RUN_CONFIG)
        bad["sector_map"] = "does_not_exist.csv"
        cfg.write_text(json.dumps(bad))
        proc = impactlab("run", "--config", cfg, "--out", tmp_path / "x", check=False)
        assert proc.returncode != 0
        assert "sector map" in proc.stderr
        assert not (tmp_path / "x").exists()

    def test_unknown_key_fails_fast(self, tmp_path):
        cfg = tmp_path / "bad.json"
        bad = dict(RUN_CONFIG)
        bad["lag"] = [1, 2]
        cfg.write_text(json.dumps(bad))
        proc = impactlab("run", "--config", cfg, "--out", tmp_path / "x", check=False)
        assert proc.returncode != 0 and "lag" in proc.stderr

    def test_rerun_byte_identical(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps(RUN_CONFIG))
        impactlab("run", "--config", cfg, "--out", tmp_path / "r1")
        impactlab("run", "--config", cfg, "--out", tmp_path / "r2")
        assert tree_digest(tmp_path / "r1") == tree_digest(tmp_path / "r2")
