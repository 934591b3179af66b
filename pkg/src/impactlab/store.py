"""On-disk formats. Everything here is byte-deterministic: fixed key
order, LF endings, no timestamps, shortest-roundtrip float repr.

Three artifact kinds:

* symbol-day containers (``.series`` / ``.signs``): one versioned JSON
  header line followed by raw little-endian array bytes in header order;
* packed curve stores: a directory of ``.npy`` arrays shaped
  (n_i, n_j, n_lags) plus ``meta.json`` (used for all-pairs runs);
* single-curve CSVs ``tau,value,dispersion,n_samples`` with a JSON
  sidecar carrying pair, mode, kind, dates and the grid hash.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os

import numpy as np

from .estimators import LagCurve
from .grids import SessionGrid
from .signing import SignSeries
from .taq_ingest import SecondSeries

SERIES_MAGIC = "IMPACTLAB-SERIES v1"
SIGNS_MAGIC = "IMPACTLAB-SIGNS v1"
CURVE_CSV_VERSION = "impactlab-curve v1"
CURVE_STORE_VERSION = "impactlab-curve-store v1"


def dump_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_tree(root) -> dict:
    """{relative path: sha256} for every file under root, sorted."""
    out = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            out[os.path.relpath(full, root)] = sha256_file(full)
    return out


def grid_hash(lags, grid: SessionGrid | None = None) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(lags, dtype=np.int64).tobytes())
    if grid is not None:
        h.update(f"{grid.open_s}:{grid.close_s}".encode())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# symbol-day containers

def _write_container(path, magic, header: dict, arrays: list):
    """header + named arrays -> one binary file with a versioned header line."""
    spec = [[name, arr.dtype.str, int(arr.size)] for name, arr in arrays]
    header = dict(header)
    header["arrays"] = spec
    line = magic + " " + json.dumps(header, sort_keys=True) + "\n"
    with open(path, "wb") as fh:
        fh.write(line.encode("utf-8"))
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())


def _read_container(path, magic):
    with open(path, "rb") as fh:
        line = fh.readline().decode("utf-8")
        if not line.startswith(magic + " "):
            raise ValueError(f"{path}: bad header, expected {magic!r}")
        header = json.loads(line[len(magic) + 1:])
        arrays = {}
        for name, dtype, size in header["arrays"]:
            n_bytes = np.dtype(dtype).itemsize * size
            buf = fh.read(n_bytes)
            if len(buf) != n_bytes:
                raise ValueError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype=dtype).copy()
    return header, arrays


def save_second_series(series: SecondSeries, path):
    header = {
        "symbol": series.symbol,
        "date": series.grid.date.isoformat(),
        "open_s": series.grid.open_s,
        "close_s": series.grid.close_s,
    }
    _write_container(path, SERIES_MAGIC, header, [
        ("midpoint", series.midpoint.astype("<f8")),
        ("trade_cells", series.trade_cells.astype("<i8")),
        ("trade_prices", series.trade_prices.astype("<f8")),
    ])


def load_second_series(path) -> SecondSeries:
    header, arrays = _read_container(path, SERIES_MAGIC)
    grid = SessionGrid(
        date=dt.date.fromisoformat(header["date"]),
        open_s=header["open_s"], close_s=header["close_s"],
    )
    return SecondSeries(
        header["symbol"], grid, arrays["midpoint"],
        arrays["trade_cells"], arrays["trade_prices"],
    )


def save_sign_series(signs: SignSeries, path, n_trades=None):
    header = {
        "symbol": signs.symbol,
        "date": signs.grid.date.isoformat(),
        "open_s": signs.grid.open_s,
        "close_s": signs.grid.close_s,
        "first_trade_sign": 0,  # day-initialization convention
    }
    arrays = [("eps", signs.eps.astype("<i1"))]
    if n_trades is not None:
        arrays.append(("n_trades", np.asarray(n_trades).astype("<i8")))
    _write_container(path, SIGNS_MAGIC, header, arrays)


def load_sign_series(path):
    header, arrays = _read_container(path, SIGNS_MAGIC)
    grid = SessionGrid(
        date=dt.date.fromisoformat(header["date"]),
        open_s=header["open_s"], close_s=header["close_s"],
    )
    signs = SignSeries(header["symbol"], grid, arrays["eps"].astype(np.int64))
    return signs, arrays.get("n_trades")


def signs_debug_csv(signs: SignSeries, n_trades, path):
    """Optional per symbol-day debug dump: t_index,eps,n_trades."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t_index,eps,n_trades\n")
        for t in range(signs.grid.len):
            fh.write(f"{t},{int(signs.eps[t])},{int(n_trades[t])}\n")


def symbol_day_filename(symbol: str, date, ext: str) -> str:
    return f"{symbol}__{date.isoformat()}.{ext}"


# ---------------------------------------------------------------------------
# single-curve CSV + sidecar

def _fmt(x: float) -> str:
    return repr(float(x))


def save_curve_csv(curve: LagCurve, path, sidecar: bool = True):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("tau,value,dispersion,n_samples\n")
        for k in range(curve.lags.size):
            fh.write(
                f"{int(curve.lags[k])},{_fmt(curve.value[k])},"
                f"{_fmt(curve.dispersion[k])},{int(curve.n_samples[k])}\n"
            )
    if sidecar:
        meta = dict(curve.meta)
        meta["format"] = CURVE_CSV_VERSION
        meta["grid_hash"] = grid_hash(curve.lags)
        dump_json(meta, _sidecar_path(path))


def _sidecar_path(path):
    base, _ = os.path.splitext(str(path))
    return base + ".json"


def load_curve_csv(path) -> LagCurve:
    lags, value, disp, n = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "tau,value,dispersion,n_samples":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            a, b, c, d = line.rstrip("\n").split(",")
            lags.append(int(a))
            value.append(float(b))
            disp.append(float(c))
            n.append(int(d))
    meta = {}
    side = _sidecar_path(path)
    if os.path.exists(side):
        meta = load_json(side)
    return LagCurve(np.array(lags), np.array(value), np.array(disp), np.array(n), meta)


# ---------------------------------------------------------------------------
# packed all-pairs curve store

def save_curve_store(dirpath, symbols, lags, value, dispersion, n_samples, meta: dict):
    """Packed (n, n, L) arrays for one (kind, mode); .npy files are
    deterministic, .npz archives are not (zip timestamps)."""
    os.makedirs(dirpath, exist_ok=True)
    np.save(os.path.join(dirpath, "value.npy"), np.asarray(value, dtype=np.float64))
    np.save(os.path.join(dirpath, "dispersion.npy"), np.asarray(dispersion, dtype=np.float64))
    np.save(os.path.join(dirpath, "n_samples.npy"), np.asarray(n_samples, dtype=np.int64))
    np.save(os.path.join(dirpath, "lags.npy"), np.asarray(lags, dtype=np.int64))
    info = dict(meta)
    info["format"] = CURVE_STORE_VERSION
    info["symbols"] = list(symbols)
    info["grid_hash"] = grid_hash(lags)
    dump_json(info, os.path.join(dirpath, "meta.json"))


def load_curve_store(dirpath):
    meta = load_json(os.path.join(dirpath, "meta.json"))
    if meta.get("format") != CURVE_STORE_VERSION:
        raise ValueError(f"{dirpath}: unexpected store format {meta.get('format')!r}")
    value = np.load(os.path.join(dirpath, "value.npy"))
    dispersion = np.load(os.path.join(dirpath, "dispersion.npy"))
    n_samples = np.load(os.path.join(dirpath, "n_samples.npy"))
    lags = np.load(os.path.join(dirpath, "lags.npy"))
    return meta, meta["symbols"], lags, value, dispersion, n_samples


def curve_mapping_from_store(dirpath) -> dict:
    """Packed store -> {PairKey: LagCurve} (day-averaged pair curves)."""
    from .estimators import PairKey

    meta, symbols, lags, value, dispersion, n_samples = load_curve_store(dirpath)
    base = {k: meta.get(k) for k in ("mode", "kind", "dates")}
    out = {}
    for a, i in enumerate(symbols):
        for b, j in enumerate(symbols):
            m = dict(base)
            m.update(i=i, j=j)
            out[PairKey(i, j)] = LagCurve(
                lags, value[a, b], dispersion[a, b], n_samples[a, b], m
            )
    return out
