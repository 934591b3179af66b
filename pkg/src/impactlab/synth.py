"""Seed-deterministic synthetic multi-asset market with known ground truth.

Order flow: per symbol, parent orders arrive independently each second
with probability ``metaorder_rate``; each gets a fair-coin direction and
a power-law lifetime (P(L) ~ L^-alpha on [length_min, length_max]). While
alive it emits a child trade of its direction each second with
probability ``participation``. Seconds aggregate by the ternary sign of
the emitted sum; idle seconds are 0. Cross coupling copies the sign of
symbol j's emitted flow into symbol i's sum with probability
``cross_coupling[i, j]``, modelling correlated multi-asset flow.

Prices: a transient-impact construction,
``m(t) = 100 + sum_{s<t} G(t-s) eps(s) + coupled terms + random walk``,
with kernel ``G(u) = g0 / (1 + u/tau0)^beta``. beta = 0 makes every unit
of flow shift the price permanently; beta > 0 lets the shift relax.
Coupled symbols contribute through the same kernel scaled by the
coupling probability.

Randomness comes from numpy PCG64 streams keyed by
``SeedSequence([seed, day, symbol, tag])``; every symbol-day owns
decorrelated substreams, so any parallel schedule reproduces identical
bytes.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .aggregation import GICS_SECTORS, SectorMap
from .errors import ConfigError, InstanceTooLarge
from .grids import DEFAULT_CLOSE_S, DEFAULT_OPEN_S, NS_PER_SEC, SessionGrid, ts_from
from .signing import SignSeries
from .taq_ingest import SecondSeries

_TAG_SIGNS = 0
_TAG_COUPLING = 1
_TAG_NOISE = 2

BASE_PRICE = 100.0


def _rng(seed: int, day: int, sym: int, tag: int) -> np.random.Generator:
    key = np.random.SeedSequence([seed & 0xFFFF_FFFF_FFFF_FFFF, day, sym, tag])
    return np.random.Generator(np.random.PCG64(key))


@dataclass(frozen=True)
class ImpactKernel:
    """Transient impact kernel G(u) = g0 / (1 + u/tau0)^beta."""

    g0: float = 0.01
    tau0: float = 10.0
    beta: float = 0.0

    def values(self, n: int) -> np.ndarray:
        u = np.arange(n, dtype=np.float64)
        return self.g0 / (1.0 + u / self.tau0) ** self.beta


@dataclass
class SynthConfig:
    n_symbols: int = 2
    n_days: int = 1
    seed: int = 0
    metaorder_rate: float = 0.005  # arrival probability per second per symbol
    metaorder_length_exponent: float = 1.5
    length_min: int = 5
    length_max: int = 500
    participation: float = 0.5
    impact: ImpactKernel = field(default_factory=ImpactKernel)
    cross_coupling: object = 0.0  # scalar or (n, n) matrix of copy probabilities
    noise_std: float = 0.0
    half_spread: float = 0.01
    open_s: int = DEFAULT_OPEN_S
    close_s: int = DEFAULT_CLOSE_S
    start_date: dt.date = dt.date(2008, 1, 2)
    symbols: list | None = None

    def __post_init__(self):
        if isinstance(self.start_date, str):
            self.start_date = dt.date.fromisoformat(self.start_date)
        if self.symbols is None:
            self.symbols = [f"SYM{k:03d}" for k in range(self.n_symbols)]

    @property
    def session_len(self) -> int:
        return self.close_s - self.open_s

    def grid_for(self, date: dt.date) -> SessionGrid:
        return SessionGrid(date=date, open_s=self.open_s, close_s=self.close_s)

    def dates(self) -> list:
        """n_days consecutive weekdays from start_date."""
        out = []
        d = self.start_date
        while len(out) < self.n_days:
            if d.weekday() < 5:
                out.append(d)
            d += dt.timedelta(days=1)
        return out

    def coupling_matrix(self) -> np.ndarray:
        n = self.n_symbols
        c = self.cross_coupling
        if np.isscalar(c):
            mat = np.full((n, n), float(c))
        else:
            mat = np.asarray(c, dtype=np.float64).copy()
            if mat.shape != (n, n):
                raise ConfigError(f"coupling matrix must be ({n}, {n})")
        np.fill_diagonal(mat, 0.0)
        return mat

    def mean_length(self) -> float:
        lengths = np.arange(self.length_min, self.length_max + 1, dtype=np.float64)
        w = lengths ** (-self.metaorder_length_exponent)
        return float((lengths * w).sum() / w.sum())

    def validate(self):
        if self.n_symbols < 1 or self.n_days < 1:
            raise ConfigError("need at least one symbol and one day")
        if not 0.0 <= self.metaorder_rate <= 1.0:
            raise ConfigError(f"metaorder_rate {self.metaorder_rate} outside [0, 1]")
        if not self.metaorder_length_exponent > 1.0:
            raise ConfigError("metaorder_length_exponent must be > 1")
        if not 1 <= self.length_min <= self.length_max:
            raise ConfigError("need 1 <= length_min <= length_max")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError("participation must be in (0, 1]")
        if self.impact.g0 < 0 or self.impact.beta < 0 or self.impact.tau0 <= 0:
            raise ConfigError("impact kernel needs g0 >= 0, beta >= 0, tau0 > 0")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not self.half_spread > 0:
            raise ConfigError("half_spread must be > 0")
        if self.close_s <= self.open_s:
            raise ConfigError("close must be after open")
        cm = self.coupling_matrix()
        if cm.min() < 0.0 or cm.max() > 1.0:
            raise ConfigError("coupling probabilities must lie in [0, 1]")
        if len(self.symbols) != self.n_symbols:
            raise ConfigError("symbols list must match n_symbols")
        if len(set(self.symbols)) != self.n_symbols:
            raise ConfigError("symbols must be unique")
        self._check_price_scale(cm)

    def _check_price_scale(self, coupling: np.ndarray):
        # positivity is enforced by scale, not clamping: reject configs
        # whose 6-sigma price drift could reach zero.
        T = self.session_len
        q = min(1.0, self.metaorder_rate * self.mean_length()) * self.participation
        kernel_sq = float((self.impact.values(T)[1:] ** 2).sum())
        row = float(coupling.sum(axis=1).max()) if coupling.size else 0.0
        sigma_impact = (1.0 + row) * np.sqrt(q * self.mean_length() * kernel_sq)
        sigma_noise = self.noise_std * np.sqrt(T)
        drift = 6.0 * (sigma_impact + sigma_noise)
        if drift >= BASE_PRICE:
            raise ConfigError(
                f"price scale unsafe: 6-sigma drift {drift:.1f} >= {BASE_PRICE}; "
                "reduce g0, noise_std or activity"
            )

    def as_dict(self) -> dict:
        return {
            "n_symbols": self.n_symbols, "n_days": self.n_days, "seed": self.seed,
            "metaorder_rate": self.metaorder_rate,
            "metaorder_length_exponent": self.metaorder_length_exponent,
            "length_min": self.length_min, "length_max": self.length_max,
            "participation": self.participation,
            "impact": {"g0": self.impact.g0, "tau0": self.impact.tau0,
                       "beta": self.impact.beta},
            "cross_coupling": (self.cross_coupling if np.isscalar(self.cross_coupling)
                               else np.asarray(self.cross_coupling).tolist()),
            "noise_std": self.noise_std, "half_spread": self.half_spread,
            "open_s": self.open_s, "close_s": self.close_s,
            "start_date": self.start_date.isoformat(), "symbols": list(self.symbols),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        allowed = {
            "n_symbols", "n_days", "seed", "metaorder_rate",
            "metaorder_length_exponent", "length_min", "length_max",
            "participation", "impact", "cross_coupling", "noise_std",
            "half_spread", "open_s", "close_s", "start_date", "symbols",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        if "impact" in d:
            d["impact"] = ImpactKernel(**d["impact"])
        return cls(**d)


@dataclass
class SymbolDayTruth:
    """Realized flow, signs and (after gen_prices) midpoints for one symbol-day.

    Child-trade counts are kept by direction so the trades CSV can be
    reconstructed even when opposite emissions cancel in the sign sum.
    """

    symbol: str
    grid: SessionGrid
    own_buy: np.ndarray  # u2[T]
    own_sell: np.ndarray
    copy_buy: np.ndarray
    copy_sell: np.ndarray
    eps: np.ndarray  # i1[T]
    midpoint: np.ndarray | None = None

    @property
    def sign_series(self) -> SignSeries:
        return SignSeries(self.symbol, self.grid, self.eps.astype(np.int64))

    def second_series(self, half_spread: float) -> SecondSeries:
        """SecondSeries with trades priced at bid/ask around the midpoint."""
        if self.midpoint is None:
            raise ValueError("midpoints not generated yet")
        cells, prices, _ = self.trade_events(half_spread)
        return SecondSeries(self.symbol, self.grid, self.midpoint.copy(), cells, prices)

    def trade_events(self, half_spread: float):
        """Flat (cells, prices, sides) trade arrays; buys at the ask, sells
        at the bid, ordered own-buys, own-sells, copied-buys, copied-sells
        within each second."""
        if self.midpoint is None:
            raise ValueError("midpoints not generated yet")
        ask = self.midpoint + half_spread
        bid = self.midpoint - half_spread
        T = self.grid.len
        t_idx = np.arange(T)
        parts = []
        for rank, (counts, px, side) in enumerate(
            [(self.own_buy, ask, 1), (self.own_sell, bid, -1),
             (self.copy_buy, ask, 1), (self.copy_sell, bid, -1)]
        ):
            c = counts.astype(np.int64)
            cells = np.repeat(t_idx, c)
            parts.append((cells, px[cells], np.full(cells.size, side, dtype=np.int8),
                          np.full(cells.size, rank, dtype=np.int8)))
        cells = np.concatenate([p[0] for p in parts])
        prices = np.concatenate([p[1] for p in parts])
        sides = np.concatenate([p[2] for p in parts])
        ranks = np.concatenate([p[3] for p in parts])
        order = np.lexsort((ranks, cells))
        return cells[order], prices[order], sides[order]

    @property
    def n_trades(self) -> np.ndarray:
        return (self.own_buy.astype(np.int64) + self.own_sell
                + self.copy_buy + self.copy_sell)


@dataclass
class SynthTruth:
    config: SynthConfig
    kernel: np.ndarray  # G(u) for u = 0 .. session_len-1
    symbols: list
    dates: list
    data: dict  # (symbol, date) -> SymbolDayTruth

    def sign_series_set(self) -> dict:
        return {key: sd.sign_series for key, sd in self.data.items()}

    def second_series_set(self) -> dict:
        h = self.config.half_spread
        return {key: sd.second_series(h) for key, sd in self.data.items()}


def build_flow(T: int, metaorders, hits=None):
    """Signed own-emission counts from explicit (start, length, direction)
    metaorders; ``hits`` optionally masks emission seconds per metaorder.
    Returns (buy_counts, sell_counts)."""
    buy = np.zeros(T, dtype=np.uint16)
    sell = np.zeros(T, dtype=np.uint16)
    for k, (start, length, direction) in enumerate(metaorders):
        live = min(length, T - start)
        if live <= 0:
            continue
        mask = np.ones(live, dtype=bool) if hits is None else np.asarray(hits[k])[:live]
        target = buy if direction > 0 else sell
        np.add.at(target, start + np.flatnonzero(mask), 1)
    return buy, sell


def _length_pmf(cfg: SynthConfig):
    lengths = np.arange(cfg.length_min, cfg.length_max + 1, dtype=np.int64)
    w = lengths.astype(np.float64) ** (-cfg.metaorder_length_exponent)
    return lengths, w / w.sum()


def gen_signs_day(cfg: SynthConfig, day_idx: int) -> dict:
    """One day of sign generation for every symbol; pure given (cfg, day_idx)."""
    T = cfg.session_len
    n = cfg.n_symbols
    date = cfg.dates()[day_idx]
    grid = cfg.grid_for(date)
    lengths_all, pmf = _length_pmf(cfg)
    buys = np.zeros((n, T), dtype=np.uint16)
    sells = np.zeros((n, T), dtype=np.uint16)
    for sym in range(n):
        rng = _rng(cfg.seed, day_idx, sym, _TAG_SIGNS)
        starts = np.flatnonzero(rng.random(T) < cfg.metaorder_rate)
        if starts.size == 0:
            continue
        lengths = lengths_all[rng.choice(lengths_all.size, size=starts.size, p=pmf)]
        dirs = rng.integers(0, 2, size=starts.size) * 2 - 1
        if cfg.participation >= 1.0:
            hits = None
        else:
            hits = [rng.random(min(int(L), T - int(s))) < cfg.participation
                    for s, L in zip(starts, lengths)]
        b, s = build_flow(T, list(zip(starts.tolist(), lengths.tolist(), dirs.tolist())), hits)
        buys[sym] = b
        sells[sym] = s
    own_flow = buys.astype(np.int64) - sells.astype(np.int64)
    copy_buy = np.zeros((n, T), dtype=np.uint16)
    copy_sell = np.zeros((n, T), dtype=np.uint16)
    coupling = cfg.coupling_matrix()
    if coupling.any():
        sgn = np.sign(own_flow)
        for i in range(n):
            js = np.flatnonzero(coupling[i] > 0)
            if js.size == 0:
                continue
            rng_c = _rng(cfg.seed, day_idx, i, _TAG_COUPLING)
            hits = rng_c.random((js.size, T)) < coupling[i, js][:, None]
            copied = np.where(hits, sgn[js], 0)
            copy_buy[i] = (copied > 0).sum(axis=0)
            copy_sell[i] = (copied < 0).sum(axis=0)
    total = own_flow + copy_buy.astype(np.int64) - copy_sell.astype(np.int64)
    eps = np.sign(total).astype(np.int8)
    out = {}
    for sym in range(n):
        out[(cfg.symbols[sym], date)] = SymbolDayTruth(
            symbol=cfg.symbols[sym], grid=grid,
            own_buy=buys[sym], own_sell=sells[sym],
            copy_buy=copy_buy[sym], copy_sell=copy_sell[sym],
            eps=eps[sym],
        )
    return out


def gen_signs(cfg: SynthConfig) -> SynthTruth:
    """Generate the sign layer for all symbol-days."""
    cfg.validate()
    data: dict = {}
    for day_idx in range(cfg.n_days):
        data.update(gen_signs_day(cfg, day_idx))
    kernel = cfg.impact.values(cfg.session_len)
    return SynthTruth(cfg, kernel, list(cfg.symbols), cfg.dates(), data)


def gen_prices_day(cfg: SynthConfig, day_idx: int, day_data: dict):
    """Fill midpoints for one generated day (in place on the truth entries)."""
    T = cfg.session_len
    date = cfg.dates()[day_idx]
    kernel = cfg.impact.values(T)
    eps = np.stack([day_data[(s, date)].eps for s in cfg.symbols]).astype(np.float64)
    if cfg.impact.g0 > 0:
        conv = fftconvolve(eps, kernel[None, 1:], axes=1)[:, : T - 1]
        impact = np.zeros((cfg.n_symbols, T))
        impact[:, 1:] = conv
        coupling = cfg.coupling_matrix()
        if coupling.any():
            impact = impact + coupling @ impact
    else:
        impact = np.zeros((cfg.n_symbols, T))
    for sym_idx, sym in enumerate(cfg.symbols):
        m = BASE_PRICE + impact[sym_idx]
        if cfg.noise_std > 0:
            rng = _rng(cfg.seed, day_idx, sym_idx, _TAG_NOISE)
            steps = rng.normal(0.0, cfg.noise_std, T - 1)
            m = m + np.concatenate([[0.0], np.cumsum(steps)])
        day_data[(sym, date)].midpoint = m


def gen_prices(truth: SynthTruth) -> dict:
    """Transient-impact midpoints for every symbol-day of a generated truth.

    Returns the ``{(symbol, date): SecondSeries}`` set and stores the
    midpoints on the truth.
    """
    cfg = truth.config
    for day_idx in range(cfg.n_days):
        gen_prices_day(cfg, day_idx, truth.data)
    return truth.second_series_set()


def generate(cfg: SynthConfig) -> SynthTruth:
    """gen_signs + gen_prices in one call."""
    truth = gen_signs(cfg)
    gen_prices(truth)
    return truth


def expected_response_oracle(truth: SynthTruth, tau: int, i: int = 0, j: int = 0,
                             mode: str = "include_zero") -> float:
    """Brute-force response at one lag, straight from the realized series.

    Equal-weight mean over days of E[r_i(t,tau) e_j(t)] - E[r_i] E[e_j],
    computed by a plain double loop. Guarded to small instances.
    """
    cfg = truth.config
    if cfg.n_symbols > 3 or cfg.session_len > 2000 or cfg.n_days > 20:
        raise InstanceTooLarge("oracle limited to <= 3 symbols, <= 2000 s, <= 20 days")
    sym_i, sym_j = cfg.symbols[i], cfg.symbols[j]
    exclude = mode == "exclude_zero"
    day_vals = []
    for date in truth.dates:
        m = truth.data[(sym_i, date)].midpoint
        eps = truth.data[(sym_j, date)].eps
        if m is None:
            raise ValueError("midpoints not generated")
        re = rs = es = 0.0
        k = 0
        for t in range(m.size - tau):
            if np.isnan(m[t]) or np.isnan(m[t + tau]):
                continue
            e = int(eps[t])
            if exclude and e == 0:
                continue
            r = (m[t + tau] - m[t]) / m[t]
            re += r * e
            rs += r
            es += e
            k += 1
        if k:
            day_vals.append(re / k - (rs / k) * (es / k))
    if not day_vals:
        raise ValueError("no valid samples on any day")
    return float(np.mean(day_vals))


def round_robin_sectors(symbols) -> SectorMap:
    """Cycle the ten GICS sector names over a symbol list."""
    entries = {s: GICS_SECTORS[k % len(GICS_SECTORS)] for k, s in enumerate(symbols)}
    return SectorMap(entries, GICS_SECTORS)


# ---------------------------------------------------------------------------
# CSV emission (the exact trades/quotes schemas the ingest module parses)

def emit_csv_universe(truth: SynthTruth, out_dir):
    """Write per-day trades/quotes CSVs, a sector map and a truth JSON.

    Timestamps are epoch nanoseconds; quotes sit at the start of their
    second, trades follow at 1 microsecond steps. Prices are written with
    six decimals. Returns the list of written paths.
    """
    import os

    cfg = truth.config
    os.makedirs(out_dir, exist_ok=True)
    written = []
    h = cfg.half_spread
    for date in truth.dates:
        t_path = os.path.join(out_dir, f"trades_{date.isoformat()}.csv")
        q_path = os.path.join(out_dir, f"quotes_{date.isoformat()}.csv")
        t_rows = []
        q_rows = []
        for sym in cfg.symbols:
            sd = truth.data[(sym, date)]
            if sd.midpoint is None:
                raise ValueError("midpoints not generated")
            grid = sd.grid
            cells, prices, _ = sd.trade_events(h)
            # per-second running index for the ns offset
            offs = np.arange(cells.size, dtype=np.int64)
            if cells.size:
                starts = np.concatenate([[0], np.flatnonzero(np.diff(cells)) + 1])
                offs = offs - np.repeat(starts, np.diff(np.concatenate([starts, [cells.size]])))
            base = ts_from(date, grid.open_s)
            ts = base + cells * NS_PER_SEC + (offs + 1) * 1_000
            for k in range(cells.size):
                t_rows.append((int(ts[k]), sym, prices[k]))
            m = sd.midpoint
            change = np.concatenate([[True], m[1:] != m[:-1]])
            q_cells = np.flatnonzero(change)
            q_ts = base + q_cells * NS_PER_SEC
            for k, t in enumerate(q_cells):
                q_rows.append((int(q_ts[k]), sym, m[t] - h, m[t] + h))
        t_rows.sort(key=lambda r: (r[0], r[1]))
        q_rows.sort(key=lambda r: (r[0], r[1]))
        with open(t_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("symbol,ts,price,size\n")
            for ts, sym, px in t_rows:
                fh.write(f"{sym},{ts},{px:.6f},100\n")
        with open(q_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("symbol,ts,bid,ask\n")
            for ts, sym, bid, ask in q_rows:
                fh.write(f"{sym},{ts},{bid:.6f},{ask:.6f}\n")
        written += [t_path, q_path]
    sec_path = os.path.join(out_dir, "sectors.csv")
    round_robin_sectors(cfg.symbols).to_csv(sec_path)
    written.append(sec_path)
    truth_path = os.path.join(out_dir, "truth.json")
    payload = {
        "format": "impactlab-synth-truth v1",
        "config": cfg.as_dict(),
        "kernel_head": truth.kernel[:64].tolist(),
    }
    with open(truth_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(truth_path)
    return written
