"""Batch pipeline: ingest -> signs -> respond -> correlate -> aggregate ->
fit -> figure, driven by a strict JSON run config.

Workspace layout under the output directory::

    inputs/       synthetic trades/quotes CSVs (synth-driven runs)
    series/       one .series container per symbol-day
    signs/        one .signs container per symbol-day
    curves/       packed all-pairs curve stores, one per (kind, mode)
    aggregates/   market/sector/stock-level curve CSVs, matrices
    fits/         power-law fit reports (JSON)
    figures/      plot-ready datasets (CSV + JSON sidecars)
    manifest.json config echo + hash, versions, per-stage counts and
                  sha256 of every stage output

Everything is deterministic: rerunning an unchanged config reproduces
every byte, regardless of the worker count.
"""

from __future__ import annotations

import datetime as dt
import glob as globmod
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .aggregation import (
    SectorMap,
    active_curve,
    market_average,
    normalized_matrix,
    passive_curve,
)
from .errors import ConfigError, EmptyDay, ImpactlabError, MissingDependency
from .estimators import (
    INCLUDE_ZERO,
    MODES,
    correlator_panel,
    response_panel,
)
from .fitting import classify_memory, eval_model, fit_powerlaw, fit_two_windows
from .grids import LagGrid, SessionGrid, parse_lag_spec, parse_session_spec
from .signing import sign_series_for
from .store import (
    curve_mapping_from_store,
    dump_json,
    load_second_series,
    load_sign_series,
    save_curve_csv,
    save_curve_store,
    save_second_series,
    save_sign_series,
    sha256_file,
    symbol_day_filename,
)
from .synth import SynthConfig, emit_csv_universe, gen_prices, gen_signs
from .taq_ingest import (
    SecondSeries,
    bucket_trades_arrays,
    parse_quotes,
    parse_trades,
    resample_midpoints_arrays,
)

STAGES = ("ingest", "signs", "respond", "correlate", "aggregate", "fit", "figure")
FIGURE_IDS = ("market_self", "market_cross", "sectoral", "sign_self",
              "sign_cross", "matrix", "active_passive")
MANIFEST_VERSION = "impactlab-manifest v1"


class PipelineStageError(ImpactlabError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ReportOptions:
    matrix_tau: int = 30
    include_scale: float = 6.0
    clip_negative: bool = False
    active_passive_symbols: list | None = None
    figures: list = field(default_factory=lambda: list(FIGURE_IDS))


@dataclass
class RunConfig:
    raw: dict
    session: str = "09:40-15:50"
    lags: np.ndarray = None
    modes: tuple = MODES
    threads: int = 1
    universe: list | None = None
    sector_map: str | None = None
    data: dict | None = None
    synth: SynthConfig | None = None
    report: ReportOptions = field(default_factory=ReportOptions)
    fit_split: int | None = None

    def grid_for(self, date: dt.date) -> SessionGrid:
        return parse_session_spec(self.session, date)


def _require_keys(d: dict, allowed: set, where: str):
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


def validate_run_config(raw: dict, base_dir: str = ".") -> RunConfig:
    """Parse and fully validate a run config before any compute."""
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    _require_keys(raw, {"session", "lags", "modes", "threads", "universe",
                        "sector_map", "data", "synth", "report", "fit"}, "run config")
    cfg = RunConfig(raw=raw)
    cfg.session = raw.get("session", cfg.session)
    probe = parse_session_spec(cfg.session, dt.date(2008, 1, 2))  # syntax check
    lag_spec = raw.get("lags", "log:1:10000:60")
    lags = parse_lag_spec(lag_spec) if isinstance(lag_spec, str) else np.asarray(
        sorted(set(int(x) for x in lag_spec)), dtype=np.int64)
    LagGrid(lags).validate_for(probe)
    cfg.lags = lags
    modes = raw.get("modes", list(MODES))
    if not modes or not set(modes) <= set(MODES):
        raise ConfigError(f"modes must be a non-empty subset of {MODES}")
    cfg.modes = tuple(m for m in MODES if m in modes)
    cfg.threads = int(raw.get("threads", 0)) or _default_threads()
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    cfg.universe = raw.get("universe")
    if ("data" in raw) == ("synth" in raw):
        raise ConfigError("config needs exactly one of 'data' or 'synth'")
    if "data" in raw:
        _require_keys(raw["data"], {"trades", "quotes"}, "data")
        data = {}
        for kind in ("trades", "quotes"):
            if kind not in raw["data"]:
                raise ConfigError(f"data.{kind} glob is required")
            pattern = os.path.join(base_dir, raw["data"][kind])
            files = sorted(globmod.glob(pattern))
            if not files:
                raise ConfigError(f"data.{kind}: no files match {pattern!r}")
            data[kind] = files
        cfg.data = data
        if "sector_map" not in raw:
            raise ConfigError("sector_map is required when running on data files")
    if "synth" in raw:
        synth_raw = dict(raw["synth"])
        for key in ("open_s", "close_s"):
            if key in synth_raw:
                raise ConfigError(f"synth.{key} is derived from 'session'; remove it")
        synth = SynthConfig.from_dict(synth_raw)
        synth.open_s = probe.open_s
        synth.close_s = probe.close_s
        synth.validate()
        if synth.session_len <= int(lags[-1]):
            raise ConfigError("max lag must be smaller than the session length")
        cfg.synth = synth
    if raw.get("sector_map") is not None:
        path = os.path.join(base_dir, raw["sector_map"])
        if not os.path.exists(path):
            raise ConfigError(f"sector map file not found: {path}")
        SectorMap.from_csv(path)  # parse errors surface now
        cfg.sector_map = path
    rep_raw = raw.get("report", {})
    _require_keys(rep_raw, {"matrix_tau", "include_scale", "clip_negative",
                            "active_passive_symbols", "figures"}, "report")
    rep = ReportOptions()
    rep.matrix_tau = int(rep_raw.get("matrix_tau", rep.matrix_tau))
    rep.include_scale = float(rep_raw.get("include_scale", rep.include_scale))
    if not rep.include_scale > 0:
        raise ConfigError("report.include_scale must be > 0")
    rep.clip_negative = bool(rep_raw.get("clip_negative", False))
    rep.active_passive_symbols = rep_raw.get("active_passive_symbols")
    figures = rep_raw.get("figures", list(FIGURE_IDS))
    if not set(figures) <= set(FIGURE_IDS):
        raise ConfigError(f"unknown figure ids: {sorted(set(figures) - set(FIGURE_IDS))}")
    rep.figures = [f for f in FIGURE_IDS if f in figures]
    if rep.matrix_tau not in cfg.lags.tolist():
        # the matrix lag must exist on every pair curve
        if not 1 <= rep.matrix_tau < probe.len:
            raise ConfigError(f"report.matrix_tau {rep.matrix_tau} outside the session")
        cfg.lags = np.unique(np.append(cfg.lags, rep.matrix_tau))
    cfg.report = rep
    fit_raw = raw.get("fit", {})
    _require_keys(fit_raw, {"split"}, "fit")
    cfg.fit_split = fit_raw.get("split")
    if cfg.fit_split is not None:
        cfg.fit_split = int(cfg.fit_split)
    return cfg


def _default_threads() -> int:
    env = os.environ.get("IMPACTLAB_THREADS", "")
    return int(env) if env.isdigit() and int(env) > 0 else 1


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return validate_run_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _pool_map(fn, items, threads: int):
    """Map preserving item order; sequential when threads == 1 so results
    never depend on scheduling."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# ingest stage

def _parse_quote_file(args):
    path, session = args
    result = parse_quotes(path)
    groups = {}
    dropped = 0
    by_key: dict = {}
    for q in result.records:
        key = (q.symbol, _date_of(q.ts))
        by_key.setdefault(key, []).append(q)
    for key, recs in by_key.items():
        grid = parse_session_spec(session, key[1])
        ts = np.fromiter((r.ts for r in recs), dtype=np.int64, count=len(recs))
        keep = grid.in_session(ts)
        dropped += int(keep.size - keep.sum())
        if not keep.any():
            continue
        bid = np.fromiter((r.bid for r in recs), dtype=np.float64, count=len(recs))
        ask = np.fromiter((r.ask for r in recs), dtype=np.float64, count=len(recs))
        order = np.argsort(ts[keep], kind="stable")
        groups[key] = (ts[keep][order], bid[keep][order], ask[keep][order])
    counts = result.counts
    counts["dropped_out_of_session"] = dropped
    return counts, groups


def _parse_trade_file(args):
    path, session = args
    result = parse_trades(path)
    groups = {}
    dropped = 0
    by_key: dict = {}
    for t in result.records:
        key = (t.symbol, _date_of(t.ts))
        by_key.setdefault(key, []).append(t)
    for key, recs in by_key.items():
        grid = parse_session_spec(session, key[1])
        ts = np.fromiter((r.ts for r in recs), dtype=np.int64, count=len(recs))
        keep = grid.in_session(ts)
        dropped += int(keep.size - keep.sum())
        if not keep.any():
            continue
        px = np.fromiter((r.price for r in recs), dtype=np.float64, count=len(recs))
        order = np.argsort(ts[keep], kind="stable")
        groups[key] = (ts[keep][order], px[keep][order])
    counts = result.counts
    counts["dropped_out_of_session"] = dropped
    return counts, groups


def _date_of(ts_ns: int):
    from .grids import date_of_ts

    return date_of_ts(ts_ns)


def _merge_groups(parts):
    merged: dict = {}
    for groups in parts:
        for key, arrays in groups.items():
            if key in merged:
                merged[key] = tuple(
                    np.concatenate([a, b]) for a, b in zip(merged[key], arrays)
                )
            else:
                merged[key] = arrays
    for key, arrays in merged.items():
        order = np.argsort(arrays[0], kind="stable")
        merged[key] = tuple(a[order] for a in arrays)
    return merged


def stage_ingest(cfg: RunConfig, ws: str, trades_files, quotes_files) -> dict:
    os.makedirs(os.path.join(ws, "series"), exist_ok=True)
    q_parts = _pool_map(_parse_quote_file,
                        [(p, cfg.session) for p in quotes_files], cfg.threads)
    t_parts = _pool_map(_parse_trade_file,
                        [(p, cfg.session) for p in trades_files], cfg.threads)
    quote_groups = _merge_groups([g for _, g in q_parts])
    trade_groups = _merge_groups([g for _, g in t_parts])
    counts = {
        "files": len(trades_files) + len(quotes_files),
        "trade_rows": sum(c["rows_total"] for c, _ in t_parts),
        "quote_rows": sum(c["rows_total"] for c, _ in q_parts),
        "malformed": sum(c["malformed"] for c, _ in t_parts + q_parts),
        "dropped_out_of_session": sum(
            c["dropped_out_of_session"] for c, _ in t_parts + q_parts),
        "empty_days_skipped": 0,
        "symbol_days": 0,
    }
    universe = cfg.universe
    outputs = []
    for key in sorted(quote_groups, key=lambda k: (k[0], k[1])):
        symbol, date = key
        if universe is not None and symbol not in universe:
            continue
        grid = cfg.grid_for(date)
        ts, bid, ask = quote_groups[key]
        try:
            midpoint, _ = resample_midpoints_arrays(ts, bid, ask, grid)
        except EmptyDay:
            counts["empty_days_skipped"] += 1
            continue
        if key in trade_groups:
            t_ts, t_px = trade_groups[key]
            cells, prices = bucket_trades_arrays(t_ts, t_px, grid)
        else:
            cells = np.zeros(0, dtype=np.int64)
            prices = np.zeros(0, dtype=np.float64)
        series = SecondSeries(symbol, grid, midpoint, cells, prices)
        path = os.path.join(ws, "series", symbol_day_filename(symbol, date, "series"))
        save_second_series(series, path)
        outputs.append(path)
        counts["symbol_days"] += 1
    if counts["symbol_days"] == 0:
        raise MissingDependency("ingest produced no symbol-days")
    return {"counts": counts, "outputs": outputs}


# ---------------------------------------------------------------------------
# signs stage

def _signs_one(args):
    series_path, out_path = args
    series = load_second_series(series_path)
    signs = sign_series_for(series)
    save_sign_series(signs, out_path, n_trades=series.n_trades)
    return out_path, int(series.trade_cells.size)


def stage_signs(cfg: RunConfig, ws: str) -> dict:
    series_dir = os.path.join(ws, "series")
    signs_dir = os.path.join(ws, "signs")
    os.makedirs(signs_dir, exist_ok=True)
    series_files = sorted(os.listdir(series_dir))
    if not series_files:
        raise MissingDependency("no series files; run ingest first")
    jobs = [
        (os.path.join(series_dir, name),
         os.path.join(signs_dir, name.replace(".series", ".signs")))
        for name in series_files if name.endswith(".series")
    ]
    results = _pool_map(_signs_one, jobs, cfg.threads)
    return {
        "counts": {"symbol_days": len(results),
                   "trades_signed": sum(n for _, n in results)},
        "outputs": [p for p, _ in results],
    }


# ---------------------------------------------------------------------------
# estimation stages

def _scan_symbol_days(dirpath, ext):
    out = {}
    for name in sorted(os.listdir(dirpath)):
        if not name.endswith("." + ext):
            continue
        stem = name[: -(len(ext) + 1)]
        sym, date_s = stem.rsplit("__", 1)
        out.setdefault(sym, []).append(dt.date.fromisoformat(date_s))
    return out


def _estimation_day(args):
    """One (date, mode, kind) panel; returns (value, count) arrays over the
    full universe with absent symbol-days masked out."""
    ws, symbols, date, mode, kind, lags = args
    T = None
    n = len(symbols)
    eps_rows = []
    avail = np.zeros(n, dtype=bool)
    for k, sym in enumerate(symbols):
        path = os.path.join(ws, "signs", symbol_day_filename(sym, date, "signs"))
        if os.path.exists(path):
            signs, _ = load_sign_series(path)
            eps_rows.append(signs.eps)
            avail[k] = True
            T = signs.grid.len
        else:
            eps_rows.append(None)
    if T is None:
        raise MissingDependency(f"no sign series for {date}")
    eps = np.zeros((n, T), dtype=np.int64)
    for k, row in enumerate(eps_rows):
        if row is not None:
            eps[k] = row
    if kind == "correlator":
        value, count = correlator_panel(eps, lags, mode)
    else:
        mids = np.full((n, T), np.nan)
        m_avail = np.zeros(n, dtype=bool)
        for k, sym in enumerate(symbols):
            path = os.path.join(ws, "series", symbol_day_filename(sym, date, "series"))
            if os.path.exists(path):
                mids[k] = load_second_series(path).midpoint
                m_avail[k] = True
        value, count = response_panel(mids, eps, lags, mode)
        value[~m_avail, :, :] = np.nan
        count[~m_avail, :, :] = 0
    value[:, ~avail, :] = np.nan
    count[:, ~avail, :] = 0
    if kind == "correlator":
        value[~avail, :, :] = np.nan
        count[~avail, :, :] = 0
    return value, count


def _average_panels(day_values, day_counts):
    vals = np.stack(day_values)
    ok = np.stack(day_counts) > 0
    ok &= np.isfinite(vals)
    n_days = ok.sum(axis=0)
    masked = np.where(ok, vals, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n_days > 0, masked.sum(axis=0) / n_days, np.nan)
        var = np.where(
            n_days > 0,
            np.where(ok, (vals - mean) ** 2, 0.0).sum(axis=0) / np.maximum(n_days, 1),
            np.nan,
        )
    return mean, np.sqrt(var), n_days


def stage_estimate(cfg: RunConfig, ws: str, kind: str) -> dict:
    """respond (kind='response') or correlate (kind='correlator')."""
    signs_dir = os.path.join(ws, "signs")
    if not os.path.isdir(signs_dir):
        raise MissingDependency("no signs directory; run signs first")
    by_symbol = _scan_symbol_days(signs_dir, "signs")
    symbols = cfg.universe or sorted(by_symbol)
    missing = [s for s in symbols if s not in by_symbol]
    if missing:
        raise MissingDependency(f"no sign series for symbols {missing}")
    dates = sorted({d for sym in symbols for d in by_symbol[sym]})
    lags = cfg.lags
    outputs = []
    for mode in cfg.modes:
        jobs = [(ws, symbols, date, mode, kind, lags) for date in dates]
        results = _pool_map(_estimation_day, jobs, cfg.threads)
        mean, disp, n_days = _average_panels(
            [v for v, _ in results], [c for _, c in results])
        store_dir = os.path.join(ws, "curves", f"{kind}_{mode}")
        save_curve_store(
            store_dir, symbols, lags, mean, disp, n_days,
            {"kind": kind, "mode": mode,
             "dates": [d.isoformat() for d in dates]},
        )
        outputs += [os.path.join(store_dir, f) for f in sorted(os.listdir(store_dir))]
    return {
        "counts": {"pairs": len(symbols) ** 2, "days": len(dates),
                   "lags": int(lags.size), "modes": len(cfg.modes)},
        "outputs": outputs,
    }


# ---------------------------------------------------------------------------
# aggregate stage

def _matrix_csv(path, matrix):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("symbol," + ",".join(matrix.ordering) + "\n")
        for a, sym in enumerate(matrix.ordering):
            row = ",".join(repr(float(x)) for x in matrix.rho[a])
            fh.write(f"{sym},{row}\n")


def stage_aggregate(cfg: RunConfig, ws: str, sector_map: SectorMap,
                    what: str = "all") -> dict:
    """Write aggregate curves/matrices. ``what`` narrows the outputs:
    all | market-self | market-cross | intra | inter | active | passive |
    matrix (sign correlator market curves ride with market-self/cross)."""
    agg_dir = os.path.join(ws, "aggregates")
    os.makedirs(agg_dir, exist_ok=True)
    outputs = []
    counts = {"curves": 0, "matrices": 0}

    def _want(name):
        return what in ("all", name)

    def _write(curve, name):
        path = os.path.join(agg_dir, name + ".csv")
        save_curve_csv(curve, path)
        outputs.append(path)
        outputs.append(path[:-4] + ".json")
        counts["curves"] += 1

    for mode in cfg.modes:
        resp_store = os.path.join(ws, "curves", f"response_{mode}")
        corr_store = os.path.join(ws, "curves", f"correlator_{mode}")
        for store in (resp_store, corr_store):
            if not os.path.isdir(store):
                raise MissingDependency(f"missing curve store {store}")
        resp = curve_mapping_from_store(resp_store)
        corr = curve_mapping_from_store(corr_store)
        universe = cfg.universe or sorted({p.i for p in resp})
        if _want("market-self"):
            _write(market_average(resp, universe, "self"), f"market_self_{mode}")
            _write(market_average(corr, universe, "self"), f"sign_self_{mode}")
        if len(universe) > 1 and _want("market-cross"):
            _write(market_average(resp, universe, "cross"), f"market_cross_{mode}")
            _write(market_average(corr, universe, "cross"), f"sign_cross_{mode}")
        if len(universe) > 1:
            for sel in ("intra", "inter"):
                if not _want(sel):
                    continue
                pairs_exist = any(
                    (sector_map.sector_of(i) == sector_map.sector_of(j)) == (sel == "intra")
                    for i in universe for j in universe if i != j
                )
                if pairs_exist:
                    _write(market_average(resp, universe, sel, sector_map),
                           f"{sel}_sector_{mode}")
        ap_symbols = cfg.report.active_passive_symbols
        if ap_symbols is None:
            ap_symbols = sector_map.ordered_symbols(universe)[:3] if len(universe) > 1 else []
        for sym in ap_symbols:
            if sym not in universe:
                raise ConfigError(f"active/passive symbol {sym!r} not in universe")
            if _want("passive"):
                _write(passive_curve(sym, resp, universe).curve, f"passive_{sym}_{mode}")
            if _want("active"):
                _write(active_curve(sym, resp, universe).curve, f"active_{sym}_{mode}")
        if _want("matrix"):
            matrix = normalized_matrix(resp, cfg.report.matrix_tau, sector_map, universe)
            m_path = os.path.join(agg_dir, f"matrix_tau{cfg.report.matrix_tau}_{mode}.csv")
            _matrix_csv(m_path, matrix)
            dump_json(
                {"tau": matrix.tau, "normalizer": matrix.normalizer,
                 "ordering": matrix.ordering,
                 "per_pair_over_tau": matrix.per_pair_over_tau, "mode": mode},
                m_path[:-4] + ".json",
            )
            outputs += [m_path, m_path[:-4] + ".json"]
            counts["matrices"] += 1
    return {"counts": counts, "outputs": outputs}


# ---------------------------------------------------------------------------
# fit stage

def stage_fit(cfg: RunConfig, ws: str) -> dict:
    from .store import load_curve_csv

    agg_dir = os.path.join(ws, "aggregates")
    fits_dir = os.path.join(ws, "fits")
    os.makedirs(fits_dir, exist_ok=True)
    outputs = []
    n_converged = 0
    n_fits = 0
    for mode in cfg.modes:
        for name in ("sign_self", "sign_cross"):
            src = os.path.join(agg_dir, f"{name}_{mode}.csv")
            if not os.path.exists(src):
                if name == "sign_cross":
                    continue  # single-symbol universe has no cross curves
                raise MissingDependency(f"missing aggregate curve {src}")
            curve = load_curve_csv(src)
            fit = fit_powerlaw(curve)
            payload = fit.as_dict()
            payload["kind"] = "self" if name == "sign_self" else "cross"
            payload["mode"] = mode
            if fit.converged:
                cls = classify_memory(fit)
                payload["memory"] = cls.label
                payload["boundary"] = cls.boundary
            if cfg.fit_split is not None:
                windows = fit_two_windows(curve, cfg.fit_split)
                payload["windows"] = {k: v.as_dict() for k, v in windows.items()}
            out = os.path.join(fits_dir, f"fit_{name}_{mode}.json")
            dump_json(payload, out)
            outputs.append(out)
            n_fits += 1
            n_converged += int(fit.converged)
    return {"counts": {"fits": n_fits, "converged": n_converged}, "outputs": outputs}


# ---------------------------------------------------------------------------
# figure stage

def _scaled_str(x: float, factor: float) -> str:
    """x * factor as an exact decimal string. Binary multiply-then-divide by
    a factor like 6 can be off by one ulp; the exact decimal product keeps
    the division (in decimal) lossless for consumers undoing the display
    scaling."""
    from decimal import Decimal

    if not np.isfinite(x):
        return repr(float(x))
    return str(Decimal(repr(float(x))) * Decimal(repr(float(factor))))


def _figure_csv(path, series: dict):
    """Long-form figure dataset: series,tau,value,dispersion. Values of
    scaled series are exact decimal products; everything else is repr."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("series,tau,value,dispersion\n")
        for name in series:
            lags, value, disp, scale = series[name]
            for k in range(len(lags)):
                if scale == 1.0:
                    v = repr(float(value[k]))
                else:
                    v = _scaled_str(float(value[k]), scale)
                fh.write(f"{name},{int(lags[k])},{v},{repr(float(disp[k]))}\n")


def emit_figure_data(cfg: RunConfig, ws: str, what: str) -> list:
    """Write one figure dataset (CSV + JSON sidecar); returns paths.

    Include-zero curve values may be pre-multiplied by the configured
    display scale (recorded in metadata); dispersion columns are never
    scaled. Negative-value clipping for active/passive figures is a
    report option and never touches stored aggregates.
    """
    from .store import load_curve_csv

    if what not in FIGURE_IDS:
        raise ValueError(f"unknown figure id {what!r}")
    agg_dir = os.path.join(ws, "aggregates")
    fig_dir = os.path.join(ws, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    scale = cfg.report.include_scale

    def _load(name):
        path = os.path.join(agg_dir, name + ".csv")
        if not os.path.exists(path):
            raise MissingDependency(f"figure {what!r} needs aggregate {name!r}")
        return load_curve_csv(path)

    series: dict = {}
    meta: dict = {"figure": what, "series": {}, "format": "impactlab-figure v1"}

    def _add(name, curve, scaled=False, clipped=False):
        value = curve.value.copy()
        if clipped:
            value = np.where(value < 0, np.nan, value)
        series[name] = (curve.lags, value, curve.dispersion, scale if scaled else 1.0)
        meta["series"][name] = {
            "scale": scale if scaled else 1.0,
            "clip_negative": bool(clipped),
            "n_units": int(np.max(curve.n_samples)) if curve.n_samples.size else 0,
        }

    if what in ("market_self", "market_cross"):
        base = what
        for mode in cfg.modes:
            _add(mode, _load(f"{base}_{mode}"), scaled=(mode == INCLUDE_ZERO))
    elif what == "sectoral":
        for sel in ("intra_sector", "inter_sector"):
            for mode in cfg.modes:
                name = f"{sel}_{mode}"
                if os.path.exists(os.path.join(agg_dir, name + ".csv")):
                    _add(name, _load(name), scaled=(mode == INCLUDE_ZERO))
        if not series:
            raise MissingDependency("sectoral figure needs intra/inter aggregates")
    elif what in ("sign_self", "sign_cross"):
        for mode in cfg.modes:
            curve = _load(f"{what}_{mode}")
            _add(mode, curve)
            fit_path = os.path.join(ws, "fits", f"fit_{what}_{mode}.json")
            if not os.path.exists(fit_path):
                raise MissingDependency(f"figure {what!r} needs fit {fit_path}")
            with open(fit_path, "r", encoding="utf-8") as fh:
                fit = json.load(fh)
            model = eval_model(fit["theta"], fit["tau_scale"], fit["gamma"],
                               curve.lags.astype(np.float64))
            series[f"fit_{mode}"] = (curve.lags, model, np.zeros(curve.lags.size), 1.0)
            meta["series"][f"fit_{mode}"] = {"scale": 1.0, "clip_negative": False,
                                             "fit": fit}
    elif what == "active_passive":
        universe = None
        ap = cfg.report.active_passive_symbols
        if ap is None:
            candidates = sorted({
                f.split("_", 1)[1].rsplit("_", 2)[0]
                for f in os.listdir(agg_dir)
                if f.startswith("passive_") and f.endswith(".csv")
            })
            ap = candidates
        for sym in ap:
            for direction in ("passive", "active"):
                for mode in cfg.modes:
                    _add(f"{direction}_{sym}_{mode}",
                         _load(f"{direction}_{sym}_{mode}"),
                         clipped=cfg.report.clip_negative)
        if not series:
            raise MissingDependency("active_passive figure needs active/passive aggregates")
    elif what == "matrix":
        paths = []
        for mode in cfg.modes:
            src = os.path.join(agg_dir, f"matrix_tau{cfg.report.matrix_tau}_{mode}.csv")
            if not os.path.exists(src):
                raise MissingDependency(f"figure 'matrix' needs {src}")
            dst = os.path.join(fig_dir, f"matrix_{mode}.csv")
            with open(src, "r", encoding="utf-8") as s, \
                    open(dst, "w", encoding="utf-8", newline="\n") as d:
                d.write(s.read())
            side = src[:-4] + ".json"
            with open(side, "r", encoding="utf-8") as fh:
                info = json.load(fh)
            info["figure"] = "matrix"
            dump_json(info, dst[:-4] + ".json")
            paths += [dst, dst[:-4] + ".json"]
        return paths

    csv_path = os.path.join(fig_dir, what + ".csv")
    _figure_csv(csv_path, series)
    dump_json(meta, os.path.join(fig_dir, what + ".json"))
    return [csv_path, os.path.join(fig_dir, what + ".json")]


def stage_figure(cfg: RunConfig, ws: str) -> dict:
    outputs = []
    for what in cfg.report.figures:
        outputs += emit_figure_data(cfg, ws, what)
    return {"counts": {"figures": len(cfg.report.figures)}, "outputs": outputs}


# ---------------------------------------------------------------------------
# orchestration

def run_pipeline(cfg: RunConfig, out_dir: str) -> dict:
    """Execute every stage; returns the manifest (also written to disk)."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format": MANIFEST_VERSION,
        "config": cfg.raw,
        "config_hash": config_hash(cfg.raw),
        "versions": {
            "impactlab": __version__,
            "numpy": np.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
        "inputs": {},
        "stages": [],
    }
    if cfg.synth is not None:
        inputs_dir = os.path.join(out_dir, "inputs")
        truth = gen_signs(cfg.synth)
        gen_prices(truth)
        written = emit_csv_universe(truth, inputs_dir)
        manifest["inputs"]["synth"] = {
            "files": {os.path.relpath(p, out_dir): sha256_file(p) for p in sorted(written)},
            "n_symbols": cfg.synth.n_symbols,
            "n_days": cfg.synth.n_days,
        }
        trades_files = sorted(globmod.glob(os.path.join(inputs_dir, "trades_*.csv")))
        quotes_files = sorted(globmod.glob(os.path.join(inputs_dir, "quotes_*.csv")))
        sector_map = SectorMap.from_csv(os.path.join(inputs_dir, "sectors.csv"))
    else:
        trades_files = cfg.data["trades"]
        quotes_files = cfg.data["quotes"]
        sector_map = SectorMap.from_csv(cfg.sector_map)

    def _run(name, fn, *args):
        try:
            result = fn(cfg, out_dir, *args)
        except Exception as exc:
            raise PipelineStageError(name, exc) from exc
        entry = {
            "name": name,
            "counts": result["counts"],
            "outputs": {os.path.relpath(p, out_dir): sha256_file(p)
                        for p in sorted(result["outputs"])},
        }
        manifest["stages"].append(entry)

    _run("ingest", stage_ingest, trades_files, quotes_files)
    _run("signs", stage_signs)
    _run("respond", stage_estimate, "response")
    _run("correlate", stage_estimate, "correlator")
    _run("aggregate", stage_aggregate, sector_map)
    _run("fit", stage_fit)
    _run("figure", stage_figure)
    dump_json(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
