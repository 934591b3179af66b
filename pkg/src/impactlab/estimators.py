"""Response functions and trade-sign correlators over a lag grid.

For stocks i (impacted) and j (impacting) and lag tau, per day:

* response:    R_ij(tau)     = <r_i(t,tau) e_j(t)>_t - <r_i(t,tau)>_t <e_j(t)>_t
* correlator:  Theta_ij(tau) = <e_i(t+tau) e_j(t)>_t - <e_i(t+tau)>_t <e_j(t)>_t

where r_i(t,tau) = (m_i(t+tau) - m_i(t)) / m_i(t) and e is the per-second
ternary sign. Averages run over the valid t of one session; windows never
cross the session close. In exclude-zero mode, responses drop t with
e_j(t) = 0 (the conditioning event) and correlators drop t where either
endpoint sign is 0 (only then both series have unit variance). Day curves
are averaged with equal weight per day.

Each estimator exists twice: a plain-loop reference (`*_pair_day`) and a
vectorized path (`*_fast`, plus `*_panel` for all pairs at once) that must
agree with the reference to 1e-12 relative. The vectorized paths compute
masked sums of products, masked sums of each factor and masked counts as
correlations of (masked series, masked series, mask, mask).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDay, EmptyInput
from .grids import LagGrid, SessionGrid

INCLUDE_ZERO = "include_zero"
EXCLUDE_ZERO = "exclude_zero"
MODES = (INCLUDE_ZERO, EXCLUDE_ZERO)


@dataclass(frozen=True, slots=True)
class PairKey:
    i: str  # impacted symbol
    j: str  # impacting symbol

    @property
    def is_self(self) -> bool:
        return self.i == self.j


@dataclass
class LagCurve:
    """Estimator output per lag: value, dispersion, contributing count.

    ``value`` is NaN wherever ``n_samples`` is 0. For per-day curves
    ``n_samples`` counts valid seconds and dispersion is 0; after
    ``average_days`` it counts contributing days and dispersion is the
    std across days. ``meta`` carries at least i, j, mode, kind.
    """

    lags: np.ndarray
    value: np.ndarray
    dispersion: np.ndarray
    n_samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        self.dispersion = np.asarray(self.dispersion, dtype=np.float64)
        self.n_samples = np.asarray(self.n_samples, dtype=np.int64)
        n = self.lags.size
        for arr in (self.value, self.dispersion, self.n_samples):
            if arr.shape != (n,):
                raise ValueError("curve arrays must share the lag grid length")


def _as_lags(lags, min_lag: int) -> np.ndarray:
    arr = lags.lags if isinstance(lags, LagGrid) else np.asarray(lags, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("need a non-empty 1-d lag array")
    if np.any(np.diff(arr) <= 0):
        raise ValueError("lags must be strictly increasing")
    if arr[0] < min_lag:
        raise ValueError(f"lags must be >= {min_lag}")
    return arr


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def returns(mid, tau: int) -> np.ndarray:
    """Arithmetic midpoint returns r(t, tau), same length as the grid.

    Entries are NaN where either endpoint is missing or t+tau leaves the
    session.
    """
    m = mid.midpoint if hasattr(mid, "midpoint") else np.asarray(mid, dtype=np.float64)
    n = m.shape[-1]
    if not 1 <= tau < n:
        raise ValueError(f"tau must be in [1, {n}), got {tau}")
    out = np.full(n, np.nan)
    out[: n - tau] = (m[tau:] - m[: n - tau]) / m[: n - tau]
    return out


def _require_same_grid(a: SessionGrid, b: SessionGrid):
    if a != b:
        raise ValueError(f"inputs on different session grids: {a} vs {b}")


def _day_curve(lags, values, counts, meta) -> LagCurve:
    values = np.asarray(values, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.int64)
    if not (counts > 0).any():
        raise DegenerateDay(f"no valid samples at any lag for {meta}")
    return LagCurve(lags, values, np.zeros(len(values)), counts, meta)


# ---------------------------------------------------------------------------
# reference (naive double-loop) paths

def response_pair_day(mid_i, signs_j, lags, mode: str = INCLUDE_ZERO) -> LagCurve:
    """Reference per-day response curve; plain loops, exact fsum accumulation."""
    _check_mode(mode)
    _require_same_grid(mid_i.grid, signs_j.grid)
    lag_arr = _as_lags(lags, min_lag=1)
    m = mid_i.midpoint
    eps = signs_j.eps
    n = m.size
    exclude = mode == EXCLUDE_ZERO
    values, counts = [], []
    for tau in lag_arr.tolist():
        re, rs, es = [], [], []
        for t in range(n - tau):
            m0 = m[t]
            m1 = m[t + tau]
            if math.isnan(m0) or math.isnan(m1):
                continue
            e = eps[t]
            if exclude and e == 0:
                continue
            r = (m1 - m0) / m0
            re.append(r * e)
            rs.append(r)
            es.append(float(e))
        k = len(rs)
        if k == 0:
            values.append(np.nan)
            counts.append(0)
        else:
            values.append(math.fsum(re) / k - (math.fsum(rs) / k) * (math.fsum(es) / k))
            counts.append(k)
    meta = {"i": mid_i.symbol, "j": signs_j.symbol, "mode": mode,
            "kind": "response", "date": str(mid_i.grid.date)}
    return _day_curve(lag_arr, values, counts, meta)


def correlator_pair_day(signs_i, signs_j, lags, mode: str = INCLUDE_ZERO) -> LagCurve:
    """Reference per-day sign correlator; lag 0 is allowed."""
    _check_mode(mode)
    _require_same_grid(signs_i.grid, signs_j.grid)
    lag_arr = _as_lags(lags, min_lag=0)
    ei = signs_i.eps
    ej = signs_j.eps
    n = ei.size
    exclude = mode == EXCLUDE_ZERO
    values, counts = [], []
    for tau in lag_arr.tolist():
        xy, xs, ys = [], [], []
        for t in range(n - tau):
            x = ei[t + tau]
            y = ej[t]
            if exclude and (x == 0 or y == 0):
                continue
            xy.append(float(x * y))
            xs.append(float(x))
            ys.append(float(y))
        k = len(xs)
        if k == 0:
            values.append(np.nan)
            counts.append(0)
        else:
            values.append(math.fsum(xy) / k - (math.fsum(xs) / k) * (math.fsum(ys) / k))
            counts.append(k)
    meta = {"i": signs_i.symbol, "j": signs_j.symbol, "mode": mode,
            "kind": "correlator", "date": str(signs_i.grid.date)}
    return _day_curve(lag_arr, values, counts, meta)


# ---------------------------------------------------------------------------
# fast paths: masked correlations, pairwise-summed in float64

def response_fast(mid_i, signs_j, lags, mode: str = INCLUDE_ZERO) -> LagCurve:
    """Vectorized response curve; matches response_pair_day to 1e-12 relative."""
    _check_mode(mode)
    _require_same_grid(mid_i.grid, signs_j.grid)
    lag_arr = _as_lags(lags, min_lag=1)
    m = mid_i.midpoint
    eps = signs_j.eps.astype(np.float64)
    n = m.size
    exclude = mode == EXCLUDE_ZERO
    values = np.full(lag_arr.size, np.nan)
    counts = np.zeros(lag_arr.size, dtype=np.int64)
    for w, tau in enumerate(lag_arr.tolist()):
        base = m[: n - tau]
        r = (m[tau:] - base) / base
        mask = np.isfinite(r)
        e = eps[: n - tau]
        if exclude:
            mask &= e != 0
        k = int(np.count_nonzero(mask))
        counts[w] = k
        if k == 0:
            continue
        a = np.where(mask, r, 0.0)
        b = np.where(mask, e, 0.0)
        s_ab = a @ b
        values[w] = s_ab / k - (a.sum() / k) * (b.sum() / k)
    meta = {"i": mid_i.symbol, "j": signs_j.symbol, "mode": mode,
            "kind": "response", "date": str(mid_i.grid.date)}
    return _day_curve(lag_arr, values, counts, meta)


def correlator_fast(signs_i, signs_j, lags, mode: str = INCLUDE_ZERO) -> LagCurve:
    """Vectorized sign correlator; matches correlator_pair_day to 1e-12 relative."""
    _check_mode(mode)
    _require_same_grid(signs_i.grid, signs_j.grid)
    lag_arr = _as_lags(lags, min_lag=0)
    ei = signs_i.eps.astype(np.float64)
    ej = signs_j.eps.astype(np.float64)
    n = ei.size
    exclude = mode == EXCLUDE_ZERO
    values = np.full(lag_arr.size, np.nan)
    counts = np.zeros(lag_arr.size, dtype=np.int64)
    for w, tau in enumerate(lag_arr.tolist()):
        x = ei[tau:]
        y = ej[: n - tau]
        if exclude:
            mask = (x != 0) & (y != 0)
            k = int(np.count_nonzero(mask))
            counts[w] = k
            if k == 0:
                continue
            xm = np.where(mask, x, 0.0)
            ym = np.where(mask, y, 0.0)
        else:
            k = n - tau
            counts[w] = k
            if k == 0:
                continue
            xm, ym = x, y
        values[w] = (xm @ ym) / k - (xm.sum() / k) * (ym.sum() / k)
    meta = {"i": signs_i.symbol, "j": signs_j.symbol, "mode": mode,
            "kind": "correlator", "date": str(signs_i.grid.date)}
    return _day_curve(lag_arr, values, counts, meta)


# ---------------------------------------------------------------------------
# panel engine: every ordered pair of one day in a few matrix products

def response_panel(mid_matrix, eps_matrix, lags, mode: str = INCLUDE_ZERO):
    """All-pairs response values for one day.

    ``mid_matrix`` is (n_sym, grid_len) float with NaN for missing cells,
    ``eps_matrix`` (n_sym, grid_len) int. Returns ``(value, n_samples)``
    arrays of shape (n_i, n_j, n_lags) where axis 0 indexes the impacted
    symbol and axis 1 the impacting one. Pairs without valid samples get
    NaN and count 0 (no DegenerateDay here; day averaging drops them).
    """
    _check_mode(mode)
    lag_arr = _as_lags(lags, min_lag=1)
    m = np.asarray(mid_matrix, dtype=np.float64)
    eps = np.asarray(eps_matrix, dtype=np.float64)
    if m.ndim != 2 or eps.ndim != 2 or m.shape[1] != eps.shape[1]:
        raise ValueError("mid_matrix and eps_matrix must be 2-d with equal length")
    n = m.shape[1]
    exclude = mode == EXCLUDE_ZERO
    n_i, n_j = m.shape[0], eps.shape[0]
    value = np.full((n_i, n_j, lag_arr.size), np.nan)
    count = np.zeros((n_i, n_j, lag_arr.size), dtype=np.int64)
    for w, tau in enumerate(lag_arr.tolist()):
        base = m[:, : n - tau]
        r = (m[:, tau:] - base) / base
        ma = np.isfinite(r)
        a = np.where(ma, r, 0.0)
        maf = ma.astype(np.float64)
        b = eps[:, : n - tau]
        if exclude:
            mb = (b != 0).astype(np.float64)
            nmat = maf @ mb.T
            s_ab = a @ b.T
            s_a = a @ mb.T
            s_b = maf @ b.T
        else:
            nmat = np.broadcast_to(maf.sum(axis=1)[:, None], (n_i, n_j)).copy()
            s_ab = a @ b.T
            s_a = np.broadcast_to(a.sum(axis=1)[:, None], (n_i, n_j))
            s_b = maf @ b.T
        ok = nmat > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            v = s_ab / nmat - (s_a / nmat) * (s_b / nmat)
        value[:, :, w] = np.where(ok, v, np.nan)
        count[:, :, w] = nmat.astype(np.int64)
    return value, count


def correlator_panel(eps_matrix, lags, mode: str = INCLUDE_ZERO):
    """All-pairs sign-correlator values for one day; see response_panel."""
    _check_mode(mode)
    lag_arr = _as_lags(lags, min_lag=0)
    eps = np.asarray(eps_matrix, dtype=np.float64)
    if eps.ndim != 2:
        raise ValueError("eps_matrix must be 2-d")
    n_sym, n = eps.shape
    exclude = mode == EXCLUDE_ZERO
    value = np.full((n_sym, n_sym, lag_arr.size), np.nan)
    count = np.zeros((n_sym, n_sym, lag_arr.size), dtype=np.int64)
    for w, tau in enumerate(lag_arr.tolist()):
        x = eps[:, tau:]
        y = eps[:, : n - tau]
        if exclude:
            mx = (x != 0).astype(np.float64)
            my = (y != 0).astype(np.float64)
            nmat = mx @ my.T
            s_xy = x @ y.T
            s_x = x @ my.T
            s_y = mx @ y.T
        else:
            k = n - tau
            nmat = np.full((n_sym, n_sym), float(k))
            s_xy = x @ y.T
            s_x = np.broadcast_to(x.sum(axis=1)[:, None], (n_sym, n_sym))
            s_y = np.broadcast_to(y.sum(axis=1)[None, :], (n_sym, n_sym))
        ok = nmat > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            v = s_xy / nmat - (s_x / nmat) * (s_y / nmat)
        value[:, :, w] = np.where(ok, v, np.nan)
        count[:, :, w] = nmat.astype(np.int64)
    return value, count


# ---------------------------------------------------------------------------

def average_days(day_curves) -> LagCurve:
    """Equal-weight per-lag mean over days; a day contributes at a lag only
    where it has samples. Output n_samples counts contributing days and
    dispersion is the (population) std across them."""
    curves = list(day_curves)
    if not curves:
        raise EmptyInput("no day curves to average")
    first = curves[0]
    for c in curves[1:]:
        if not np.array_equal(c.lags, first.lags):
            raise ValueError("day curves must share the lag grid")
        for key in ("i", "j", "mode", "kind"):
            if c.meta.get(key) != first.meta.get(key):
                raise ValueError(f"day curves disagree on meta[{key!r}]")
    vals = np.stack([c.value for c in curves])
    ok = np.stack([c.n_samples for c in curves]) > 0
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
    meta = dict(first.meta)
    meta["dates"] = sorted({c.meta.get("date") for c in curves if c.meta.get("date")})
    meta.pop("date", None)
    return LagCurve(first.lags, mean, np.sqrt(var), n_days, meta)


def pair_curves_from_panels(symbols, lags, day_values, day_counts, meta_base):
    """Day-average panel outputs into ``{PairKey: LagCurve}``.

    ``day_values``/``day_counts`` are sequences (one per day, fixed order)
    of (n, n, n_lags) arrays as produced by the panel functions.
    """
    vals = np.stack(list(day_values))  # (days, n, n, L)
    ok = np.stack(list(day_counts)) > 0
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
    disp = np.sqrt(var)
    lag_arr = _as_lags(lags, min_lag=0)
    out = {}
    for a, i in enumerate(symbols):
        for b, j in enumerate(symbols):
            meta = dict(meta_base)
            meta.update(i=i, j=j)
            out[PairKey(i, j)] = LagCurve(
                lag_arr, mean[a, b], disp[a, b], n_days[a, b], meta
            )
    return out
