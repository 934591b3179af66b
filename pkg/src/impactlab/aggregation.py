"""Market-, sector- and stock-level aggregation of pair curves.

All aggregations consume a mapping ``{PairKey or (i, j): LagCurve}`` of
day-averaged pair curves on a shared lag grid. Market averages are double
means: an inner mean over the impacting symbol j, then an outer mean over
the impacted symbol i. At equal inner-set sizes this equals the flat mean
over ordered pairs; the two-stage form stays correct when inner sets are
unequal. Dispersion is always the std across contributing unit curves
(stocks or ordered pairs) at each lag, never across days.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import AllZero, IncompleteUniverse
from .estimators import LagCurve, PairKey

# Ten GICS sectors in the display order used for sector-sorted matrices.
GICS_SECTORS = (
    "Industrials",
    "Health Care",
    "Consumer Discretionary",
    "Information Technology",
    "Utilities",
    "Financials",
    "Materials",
    "Energy",
    "Consumer Staples",
    "Telecommunication Services",
)

MARKET_SELF = "market_self"
MARKET_CROSS = "market_cross"
INTRA_SECTOR = "intra_sector"
INTER_SECTOR = "inter_sector"


@dataclass
class SectorMap:
    """symbol -> sector assignment plus the sector display order."""

    entries: dict
    sector_order: tuple

    def __post_init__(self):
        self.sector_order = tuple(self.sector_order)
        allowed = set(self.sector_order)
        for sym, sec in self.entries.items():
            if sec not in allowed:
                raise ValueError(f"{sym}: sector {sec!r} not in configured set")

    def sector_of(self, symbol: str) -> str:
        return self.entries[symbol]

    def symbols(self):
        return list(self.entries)

    def ordered_symbols(self, universe=None):
        """Universe sorted by sector display order, then symbol."""
        syms = list(universe) if universe is not None else list(self.entries)
        missing = [s for s in syms if s not in self.entries]
        if missing:
            raise IncompleteUniverse(missing)
        rank = {sec: k for k, sec in enumerate(self.sector_order)}
        return sorted(syms, key=lambda s: (rank[self.entries[s]], s))

    @classmethod
    def from_csv(cls, path, sector_order=None) -> "SectorMap":
        """Load a ``symbol,sector`` CSV. Without an explicit order, the ten
        GICS names use their canonical display order; otherwise sectors
        appear in file order."""
        entries: dict = {}
        seen: list = []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header[:2]] != ["symbol", "sector"]:
                raise ValueError(f"{path}: expected header symbol,sector")
            for row in reader:
                if not row or not row[0].strip():
                    continue
                sym, sec = row[0].strip(), row[1].strip()
                if sym in entries:
                    raise ValueError(f"{path}: symbol {sym} mapped twice")
                entries[sym] = sec
                if sec not in seen:
                    seen.append(sec)
        if sector_order is None:
            sector_order = GICS_SECTORS if set(seen) <= set(GICS_SECTORS) else seen
        return cls(entries, tuple(sector_order))

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("symbol,sector\n")
            for sym in self.ordered_symbols():
                fh.write(f"{sym},{self.entries[sym]}\n")


def _normalize_curves(curves) -> dict:
    out = {}
    for key, curve in curves.items():
        pk = key if isinstance(key, PairKey) else PairKey(*key)
        out[pk] = curve
    return out


def _collect(curves, pairs):
    """Stack values of the requested pairs, erroring on any missing pair."""
    missing = [p for p in pairs if p not in curves]
    if missing:
        raise IncompleteUniverse([(p.i, p.j) for p in missing])
    ref = curves[pairs[0]]
    vals = np.empty((len(pairs), ref.lags.size))
    for k, p in enumerate(pairs):
        c = curves[p]
        if not np.array_equal(c.lags, ref.lags):
            raise ValueError(f"pair {p} on a different lag grid")
        vals[k] = c.value
    return ref.lags, vals


def _unit_stats(vals):
    """nan-aware mean/std/count across unit curves (axis 0)."""
    ok = np.isfinite(vals)
    n = ok.sum(axis=0)
    masked = np.where(ok, vals, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n > 0, masked.sum(axis=0) / n, np.nan)
        var = np.where(
            n > 0,
            np.where(ok, (vals - mean) ** 2, 0.0).sum(axis=0) / np.maximum(n, 1),
            np.nan,
        )
    return mean, np.sqrt(var), n


def _double_mean(vals, outer_index):
    """Mean over j within each i (rows grouped by outer_index), then over i."""
    groups = {}
    for row, i in enumerate(outer_index):
        groups.setdefault(i, []).append(row)
    inner = []
    for i in sorted(groups):
        sub = vals[groups[i]]
        ok = np.isfinite(sub)
        n = ok.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = np.where(n > 0, np.where(ok, sub, 0.0).sum(axis=0) / n, np.nan)
        inner.append(m)
    inner = np.stack(inner)
    ok = np.isfinite(inner)
    n = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        outer = np.where(n > 0, np.where(ok, inner, 0.0).sum(axis=0) / n, np.nan)
    return outer


def select_pairs(universe, selector, sector_map: SectorMap | None = None):
    """Ordered pair list for a market-average selector.

    selector: ``"self"``, ``"cross"``, ``"intra"``, ``"inter"`` or
    ``("sector_self", name)``.
    """
    universe = list(universe)
    if selector == "self":
        return [PairKey(i, i) for i in universe]
    if isinstance(selector, tuple) and selector[0] == "sector_self":
        if sector_map is None:
            raise ValueError("sector_self needs a sector map")
        sec = selector[1]
        return [PairKey(i, i) for i in universe if sector_map.sector_of(i) == sec]
    if selector == "cross":
        return [PairKey(i, j) for i in universe for j in universe if i != j]
    if selector in ("intra", "inter"):
        if sector_map is None:
            raise ValueError(f"{selector} needs a sector map")
        same = selector == "intra"
        return [
            PairKey(i, j)
            for i in universe
            for j in universe
            if i != j and (sector_map.sector_of(i) == sector_map.sector_of(j)) == same
        ]
    raise ValueError(f"unknown selector {selector!r}")


_KIND_BY_SELECTOR = {
    "self": MARKET_SELF,
    "cross": MARKET_CROSS,
    "intra": INTRA_SECTOR,
    "inter": INTER_SECTOR,
}


def market_average(curves, universe, selector, sector_map: SectorMap | None = None) -> LagCurve:
    """Market-level curve for a selector over the universe.

    Value is the double mean (inner over j, outer over i); dispersion and
    n_samples come from the flat set of contributing unit curves.
    """
    curves = _normalize_curves(curves)
    pairs = select_pairs(universe, selector, sector_map)
    if not pairs:
        raise IncompleteUniverse([])
    lags, vals = _collect(curves, pairs)
    _, disp, n_units = _unit_stats(vals)
    value = _double_mean(vals, [p.i for p in pairs])
    ref = curves[pairs[0]]
    kind = _KIND_BY_SELECTOR.get(selector if isinstance(selector, str) else selector[0])
    if isinstance(selector, tuple):
        kind = f"sector_self({selector[1]})"
    meta = {"kind": kind, "mode": ref.meta.get("mode"),
            "base_kind": ref.meta.get("kind"), "n_units": len(pairs)}
    return LagCurve(lags, value, disp, n_units, meta)


@dataclass
class ActivePassiveCurve:
    symbol: str
    direction: str  # "passive" | "active"
    curve: LagCurve


def passive_curve(i, curves, universe) -> ActivePassiveCurve:
    """Mean cross-response onto fixed impacted stock i, over j != i."""
    curves = _normalize_curves(curves)
    pairs = [PairKey(i, j) for j in universe if j != i]
    lags, vals = _collect(curves, pairs)
    mean, disp, n_units = _unit_stats(vals)
    ref = curves[pairs[0]]
    meta = {"kind": "passive", "symbol": i, "mode": ref.meta.get("mode")}
    return ActivePassiveCurve(i, "passive", LagCurve(lags, mean, disp, n_units, meta))


def active_curve(j, curves, universe) -> ActivePassiveCurve:
    """Mean cross-response from fixed impacting stock j, over i != j."""
    curves = _normalize_curves(curves)
    pairs = [PairKey(i, j) for i in universe if i != j]
    lags, vals = _collect(curves, pairs)
    mean, disp, n_units = _unit_stats(vals)
    ref = curves[pairs[0]]
    meta = {"kind": "active", "symbol": j, "mode": ref.meta.get("mode")}
    return ActivePassiveCurve(j, "active", LagCurve(lags, mean, disp, n_units, meta))


@dataclass
class NormalizedResponseMatrix:
    """rho_ij(tau) = R_ij(tau) / normalizer, sector-sorted.

    With the default global normalization the normalizer is the largest
    |R_kl(tau)| over all ordered pairs at the fixed lag and
    ``max |rho| == 1``. With per-pair normalization each entry divides by
    its own max over the curve's lags and ``normalizer`` is a matrix.
    """

    tau: int
    rho: np.ndarray
    normalizer: object
    ordering: list
    per_pair_over_tau: bool = False


def normalized_matrix(curves, tau, sector_map: SectorMap, universe=None,
                      per_pair_over_tau: bool = False) -> NormalizedResponseMatrix:
    """Normalized response matrix at one lag, rows/cols sector-sorted."""
    curves = _normalize_curves(curves)
    if universe is None:
        universe = sorted({p.i for p in curves} | {p.j for p in curves})
    ordering = sector_map.ordered_symbols(universe)
    n = len(ordering)
    raw = np.empty((n, n))
    missing = []
    per_pair_norm = np.empty((n, n))
    for a, i in enumerate(ordering):
        for b, j in enumerate(ordering):
            pk = PairKey(i, j)
            c = curves.get(pk)
            if c is None:
                missing.append((i, j))
                continue
            w = np.flatnonzero(c.lags == tau)
            if w.size != 1 or not np.isfinite(c.value[w[0]]):
                missing.append((i, j))
                continue
            raw[a, b] = c.value[w[0]]
            finite = c.value[np.isfinite(c.value)]
            per_pair_norm[a, b] = np.abs(finite).max() if finite.size else 0.0
    if missing:
        raise IncompleteUniverse(missing)
    if per_pair_over_tau:
        if np.any(per_pair_norm == 0):
            raise AllZero("some pair curve is identically zero")
        return NormalizedResponseMatrix(
            int(tau), raw / per_pair_norm, per_pair_norm, ordering, True
        )
    normalizer = float(np.abs(raw).max())
    if normalizer == 0.0:
        raise AllZero(f"all responses are zero at tau={tau}")
    return NormalizedResponseMatrix(int(tau), raw / normalizer, normalizer, ordering, False)
