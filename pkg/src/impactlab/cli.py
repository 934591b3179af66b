"""Command-line interface.

Subcommands: ingest, signs, respond, correlate, aggregate, fit, synth,
figure, run. ``--threads`` (or the IMPACTLAB_THREADS environment variable)
bounds process-level workers; BLAS libraries are pinned to one thread at
startup so numerical results never depend on the worker count.
"""

import os as _os

# Must happen before numpy is first imported anywhere in this process.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

import argparse
import glob as globmod
import json
import os
import sys

from .errors import ImpactlabError
from .pipeline import (
    FIGURE_IDS,
    PipelineStageError,
    RunConfig,
    emit_figure_data,
    load_run_config,
    run_pipeline,
    stage_aggregate,
    stage_estimate,
    stage_ingest,
    stage_signs,
    validate_run_config,
)

DEFAULT_SESSION = "09:40-15:50"
DEFAULT_LAGS = "log:1:10000:60"


def _threads_arg(parser):
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: IMPACTLAB_THREADS or 1)")


def _resolve_threads(value):
    if value is not None:
        return max(1, value)
    env = os.environ.get("IMPACTLAB_THREADS", "")
    return int(env) if env.isdigit() and int(env) > 0 else 1


def _minimal_config(args, extra=None) -> RunConfig:
    raw = {
        "session": getattr(args, "session", DEFAULT_SESSION),
        # commands without --lags (ingest, signs) don't touch lag grids
        "lags": getattr(args, "lags", "1"),
        "modes": _modes_of(getattr(args, "mode", "both")),
        "threads": _resolve_threads(getattr(args, "threads", None)),
        "synth": {"n_symbols": 1, "n_days": 1},  # placeholder, never generated
    }
    if extra:
        raw.update(extra)
    cfg = validate_run_config(raw, base_dir=".")
    cfg.synth = None
    return cfg


def _modes_of(mode: str):
    if mode == "include":
        return ["include_zero"]
    if mode == "exclude":
        return ["exclude_zero"]
    return ["include_zero", "exclude_zero"]


def cmd_ingest(args) -> int:
    trades = sorted(globmod.glob(args.trades))
    quotes = sorted(globmod.glob(args.quotes))
    if not trades or not quotes:
        print(f"ingest: no files match --trades/--quotes", file=sys.stderr)
        return 2
    cfg = _minimal_config(args)
    result = stage_ingest(cfg, args.out, trades, quotes)
    print(json.dumps(result["counts"], sort_keys=True))
    return 0


def cmd_signs(args) -> int:
    cfg = _minimal_config(args)
    if not os.path.isdir(os.path.join(args.input, "series")):
        print("signs: --in must contain a series/ directory", file=sys.stderr)
        return 2
    if os.path.abspath(args.input) != os.path.abspath(args.out):
        os.makedirs(args.out, exist_ok=True)
        _link_dir(os.path.join(args.input, "series"), os.path.join(args.out, "series"))
    result = stage_signs(cfg, args.out)
    if args.dump_csv:
        from .store import load_sign_series, signs_debug_csv

        dump_dir = os.path.join(args.out, "signs_csv")
        os.makedirs(dump_dir, exist_ok=True)
        for name in sorted(os.listdir(os.path.join(args.out, "signs"))):
            signs, n_trades = load_sign_series(os.path.join(args.out, "signs", name))
            signs_debug_csv(signs, n_trades,
                            os.path.join(dump_dir, name.replace(".signs", ".csv")))
    print(json.dumps(result["counts"], sort_keys=True))
    return 0


def _link_dir(src, dst):
    import shutil

    os.makedirs(dst, exist_ok=True)
    for name in sorted(os.listdir(src)):
        target = os.path.join(dst, name)
        if not os.path.exists(target):
            try:
                os.link(os.path.join(src, name), target)
            except OSError:
                shutil.copy2(os.path.join(src, name), target)


def _estimate_common(args, kind: str) -> int:
    universe = None
    if args.universe:
        with open(args.universe, "r", encoding="utf-8") as fh:
            universe = [line.strip() for line in fh if line.strip()]
    cfg = _minimal_config(args, extra={"universe": universe} if universe else None)
    ws = args.input
    if args.out and os.path.abspath(args.out) != os.path.abspath(ws):
        os.makedirs(args.out, exist_ok=True)
        for sub in ("series", "signs"):
            src = os.path.join(ws, sub)
            if os.path.isdir(src):
                _link_dir(src, os.path.join(args.out, sub))
        ws = args.out
    if args.pairs.startswith("list:") or args.pairs == "self":
        return _estimate_pairs_csv(cfg, ws, kind, args.pairs)
    result = stage_estimate(cfg, ws, kind)
    print(json.dumps(result["counts"], sort_keys=True))
    return 0


def _estimate_pairs_csv(cfg, ws, kind, selector) -> int:
    """self / explicit pair lists go to per-pair curve CSVs."""
    from .estimators import average_days, correlator_fast, response_fast
    from .store import (
        load_second_series,
        load_sign_series,
        save_curve_csv,
        symbol_day_filename,
    )
    from .pipeline import _scan_symbol_days

    by_symbol = _scan_symbol_days(os.path.join(ws, "signs"), "signs")
    if selector == "self":
        pairs = [(s, s) for s in sorted(by_symbol)]
    else:
        pairs = []
        for item in selector[len("list:"):].split(","):
            i, _, j = item.partition(":")
            pairs.append((i.strip(), j.strip() or i.strip()))
    out_dir = os.path.join(ws, "curves", "pairs")
    os.makedirs(out_dir, exist_ok=True)
    written = 0
    for mode in cfg.modes:
        for i, j in pairs:
            day_curves = []
            for date in sorted(set(by_symbol.get(i, [])) & set(by_symbol.get(j, []))):
                signs_j, _ = load_sign_series(
                    os.path.join(ws, "signs", symbol_day_filename(j, date, "signs")))
                if kind == "response":
                    mid_i = load_second_series(
                        os.path.join(ws, "series", symbol_day_filename(i, date, "series")))
                    day_curves.append(response_fast(mid_i, signs_j, cfg.lags, mode))
                else:
                    signs_i, _ = load_sign_series(
                        os.path.join(ws, "signs", symbol_day_filename(i, date, "signs")))
                    day_curves.append(correlator_fast(signs_i, signs_j, cfg.lags, mode))
            curve = average_days(day_curves)
            path = os.path.join(out_dir, f"{kind}_{i}_{j}_{mode}.csv")
            save_curve_csv(curve, path)
            written += 1
    print(json.dumps({"pair_curves": written}, sort_keys=True))
    return 0


def cmd_respond(args) -> int:
    return _estimate_common(args, "response")


def cmd_correlate(args) -> int:
    return _estimate_common(args, "correlator")


def cmd_aggregate(args) -> int:
    from .aggregation import SectorMap

    cfg = _minimal_config(args, extra={"report": {"matrix_tau": args.tau}})
    sector_map = SectorMap.from_csv(args.sectors)
    ws = args.input
    result = stage_aggregate(cfg, ws, sector_map, what=args.what)
    print(json.dumps(result["counts"], sort_keys=True))
    return 0


def cmd_fit(args) -> int:
    from .fitting import classify_memory, fit_powerlaw, fit_two_windows
    from .store import load_curve_csv

    curve = load_curve_csv(args.curve)
    fit = fit_powerlaw(curve)
    payload = fit.as_dict()
    if fit.converged:
        cls = classify_memory(fit)
        payload["memory"] = cls.label
        payload["boundary"] = cls.boundary
    if args.split is not None:
        payload["windows"] = {
            k: v.as_dict() for k, v in fit_two_windows(curve, args.split).items()
        }
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def cmd_synth(args) -> int:
    from .synth import SynthConfig, emit_csv_universe, gen_prices, gen_signs

    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = SynthConfig.from_dict(json.load(fh))
    cfg.validate()
    truth = gen_signs(cfg)
    gen_prices(truth)
    written = emit_csv_universe(truth, args.out)
    print(json.dumps({"files": len(written), "symbol_days": len(truth.data)},
                     sort_keys=True))
    return 0


def cmd_figure(args) -> int:
    cfg = _minimal_config(args, extra={"report": {"matrix_tau": args.tau}})
    paths = emit_figure_data(cfg, args.input, args.what)
    print(json.dumps({"written": [os.path.relpath(p, args.input) for p in paths]},
                     sort_keys=True))
    return 0


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.threads is not None:
        cfg.threads = max(1, args.threads)
    manifest = run_pipeline(cfg, args.out)
    counts = {s["name"]: s["counts"] for s in manifest["stages"]}
    print(json.dumps({"stages": len(manifest["stages"]),
                      "config_hash": manifest["config_hash"],
                      "counts": counts}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impactlab",
        description="response-function analytics on a one-second grid",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse trade/quote CSVs into series files")
    p.add_argument("--trades", required=True, help="glob of trades CSV files")
    p.add_argument("--quotes", required=True, help="glob of quotes CSV files")
    p.add_argument("--session", default=DEFAULT_SESSION)
    p.add_argument("--out", required=True)
    _threads_arg(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("signs", help="tick-rule signs per symbol-day")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-csv", action="store_true",
                   help="also write per symbol-day t_index,eps,n_trades CSVs")
    _threads_arg(p)
    p.set_defaults(fn=cmd_signs)

    for name, helptext in (("respond", "response functions R_ij"),
                           ("correlate", "trade-sign correlators Theta_ij")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--universe", default=None, help="file with one symbol per line")
        p.add_argument("--pairs", default="all",
                       help="all | self | cross | list:I:J,I:J,...")
        p.add_argument("--mode", choices=("include", "exclude", "both"), default="both")
        p.add_argument("--lags", default=DEFAULT_LAGS)
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--session", default=DEFAULT_SESSION)
        _threads_arg(p)
        p.set_defaults(fn=cmd_respond if name == "respond" else cmd_correlate)

    p = sub.add_parser("aggregate", help="market/sector/stock aggregates")
    p.add_argument("--what", default="all",
                   help="market-self|market-cross|intra|inter|active|passive|matrix|all")
    p.add_argument("--tau", type=int, default=30, help="matrix lag (seconds)")
    p.add_argument("--sectors", required=True, help="symbol,sector CSV")
    p.add_argument("--mode", choices=("include", "exclude", "both"), default="both")
    p.add_argument("--lags", default=DEFAULT_LAGS)
    p.add_argument("--session", default=DEFAULT_SESSION)
    p.add_argument("--in", dest="input", required=True)
    _threads_arg(p)
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("fit", help="power-law fit of a curve CSV")
    p.add_argument("--curve", required=True)
    p.add_argument("--split", type=int, default=None,
                   help="two-window fit split lag (seconds)")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("synth", help="generate a synthetic universe as CSVs")
    p.add_argument("--config", required=True, help="SynthConfig JSON")
    p.add_argument("--out", required=True)
    _threads_arg(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("figure", help="emit one plot-ready figure dataset")
    p.add_argument("--what", required=True, choices=FIGURE_IDS)
    p.add_argument("--tau", type=int, default=30)
    p.add_argument("--mode", choices=("include", "exclude", "both"), default="both")
    p.add_argument("--lags", default=DEFAULT_LAGS)
    p.add_argument("--session", default=DEFAULT_SESSION)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(fn=cmd_figure)

    p = sub.add_parser("run", help="full pipeline from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    _threads_arg(p)
    p.set_defaults(fn=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except PipelineStageError as exc:
        print(f"impactlab: {exc}", file=sys.stderr)
        return 3
    except ImpactlabError as exc:
        print(f"impactlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
