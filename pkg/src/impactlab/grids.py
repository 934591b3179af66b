"""Time grids: the intraday one-second session grid and the lag grid.

All intraday analysis lives on a fixed grid of one-second cells covering a
single trading session. A timestamp belongs to the cell
``floor(seconds_of_day) - open_s``; cells are half-open ``[s, s+1)``.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

NS_PER_SEC = 1_000_000_000
NS_PER_DAY = 86_400 * NS_PER_SEC
_EPOCH = dt.date(1970, 1, 1)

# 09:40:00 and 15:50:00 in seconds of day
DEFAULT_OPEN_S = 9 * 3600 + 40 * 60
DEFAULT_CLOSE_S = 15 * 3600 + 50 * 60


def date_of_ts(ts_ns: int) -> dt.date:
    """Calendar date of an epoch-ns timestamp (naive exchange-local clock)."""
    return _EPOCH + dt.timedelta(days=int(ts_ns // NS_PER_DAY))


def seconds_of_day(ts_ns) -> np.ndarray:
    """Whole seconds since local midnight, elementwise."""
    ts = np.asarray(ts_ns, dtype=np.int64)
    return (ts % NS_PER_DAY) // NS_PER_SEC


def ts_from(date: dt.date, second_of_day: int, ns_offset: int = 0) -> int:
    """Epoch-ns timestamp for a date plus seconds-of-day (naive local clock)."""
    days = (date - _EPOCH).days
    return days * NS_PER_DAY + second_of_day * NS_PER_SEC + ns_offset


@dataclass(frozen=True)
class SessionGrid:
    """One trading day's one-second grid between session open and close.

    ``len`` counts grid cells; the default 09:40-15:50 window has 22200.
    """

    date: dt.date
    open_s: int = DEFAULT_OPEN_S
    close_s: int = DEFAULT_CLOSE_S

    def __post_init__(self):
        if not self.open_s < self.close_s:
            raise ValueError(f"open_s={self.open_s} must be < close_s={self.close_s}")
        if not (0 <= self.open_s and self.close_s <= 86_400):
            raise ValueError("session bounds must lie within one day")

    @property
    def len(self) -> int:
        return self.close_s - self.open_s

    def cell_of(self, ts_ns) -> np.ndarray:
        """Grid cell index for epoch-ns timestamps; may fall outside [0, len)."""
        return seconds_of_day(ts_ns) - self.open_s

    def in_session(self, ts_ns) -> np.ndarray:
        """Mask of timestamps with open_s <= time-of-day < close_s (half-open)."""
        ts = np.asarray(ts_ns, dtype=np.int64)
        sod_ns = ts % NS_PER_DAY
        return (sod_ns >= self.open_s * NS_PER_SEC) & (sod_ns < self.close_s * NS_PER_SEC)


@dataclass(frozen=True)
class LagGrid:
    """Strictly increasing positive integer lags, in seconds."""

    lags: np.ndarray = field(default_factory=lambda: default_lags())

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.int64)
        object.__setattr__(self, "lags", lags)
        if lags.ndim != 1 or lags.size == 0:
            raise ValueError("lag grid must be a non-empty 1-d array")
        if lags[0] < 1:
            raise ValueError("lags must be >= 1")
        if np.any(np.diff(lags) <= 0):
            raise ValueError("lags must be strictly increasing (unique)")

    def __len__(self) -> int:
        return int(self.lags.size)

    def __iter__(self):
        return iter(self.lags.tolist())

    def validate_for(self, grid: SessionGrid):
        if self.lags[-1] >= grid.len:
            raise ValueError(
                f"max lag {self.lags[-1]} must be < session length {grid.len}"
            )


def default_lags(n: int = 60, lo: int = 1, hi: int = 10_000) -> np.ndarray:
    """Exactly ``n`` approximately log-spaced integer lags from lo to hi.

    Built as x -> max(x+1, round(x*r)): unit steps while the geometric step
    would collide, geometric afterwards. The ratio r is found by bisection
    so the sequence lands on ``hi``.
    """
    if hi - lo + 1 < n:
        raise ValueError(f"cannot place {n} distinct integer lags in [{lo}, {hi}]")

    def build(ratio: float) -> list:
        vals = [lo]
        x = lo
        for _ in range(n - 1):
            x = max(x + 1, int(round(x * ratio)))
            vals.append(x)
        return vals

    lo_r, hi_r = 1.0, float(hi)
    for _ in range(200):
        mid = (lo_r + hi_r) / 2.0
        if build(mid)[-1] >= hi:
            hi_r = mid
        else:
            lo_r = mid
    vals = build(hi_r)
    vals[-1] = hi
    return np.array(vals, dtype=np.int64)


def parse_lag_spec(spec: str) -> np.ndarray:
    """Parse a CLI lag spec: ``log:<lo>:<hi>:<n>`` or a comma list like ``1,2,5``."""
    spec = spec.strip()
    if spec.startswith("log:"):
        parts = spec.split(":")
        if len(parts) != 4:
            raise ValueError(f"bad lag spec {spec!r}, expected log:<lo>:<hi>:<n>")
        lo, hi, n = int(parts[1]), int(parts[2]), int(parts[3])
        return default_lags(n=n, lo=lo, hi=hi)
    return np.unique(np.array([int(x) for x in spec.split(",")], dtype=np.int64))


def parse_session_spec(spec: str, date: dt.date) -> SessionGrid:
    """Parse ``HH:MM[:SS]-HH:MM[:SS]`` into a SessionGrid for ``date``."""

    def sod(part: str) -> int:
        bits = part.strip().split(":")
        if len(bits) not in (2, 3):
            raise ValueError(f"bad time {part!r}")
        h, m = int(bits[0]), int(bits[1])
        s = int(bits[2]) if len(bits) == 3 else 0
        return h * 3600 + m * 60 + s

    try:
        open_part, close_part = spec.split("-")
    except ValueError:
        raise ValueError(f"bad session spec {spec!r}, expected HH:MM-HH:MM") from None
    return SessionGrid(date=date, open_s=sod(open_part), close_s=sod(close_part))
