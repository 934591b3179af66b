"""Tick-rule trade signs and their per-second ternary aggregation.

A trade is signed by the direction of its price change; when the price is
unchanged the previous sign carries over. The first trade of a day has no
predecessor and is assigned 0, carried forward until the first price
change (signs never propagate across days). Per second, the signs of the
N(t) trades inside the cell are summed and collapsed with the ternary
Sgn; seconds without trades hold 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import SessionGrid

FIRST_TRADE_SIGN = 0  # convention, recorded in output metadata


@dataclass
class SignSeries:
    """Per-second ternary signs on the session grid (values in {-1, 0, +1})."""

    symbol: str
    grid: SessionGrid
    eps: np.ndarray  # i8[len]

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=np.int64)
        if eps.shape != (self.grid.len,):
            raise ValueError(f"eps shape {eps.shape} != ({self.grid.len},)")
        if not np.isin(eps, (-1, 0, 1)).all():
            raise ValueError("eps entries must be in {-1, 0, +1}")
        self.eps = eps


def tick_signs(prices) -> np.ndarray:
    """Per-trade signs for one symbol-day of trade prices, in trade order.

    sign[n] = sgn(S[n] - S[n-1]) when the price moved, else sign[n-1];
    sign[0] = 0.
    """
    p = np.asarray(prices, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("prices must be 1-d")
    if p.size == 0:
        return np.zeros(0, dtype=np.int64)
    if not (p > 0).all():
        raise ValueError("prices must be positive")
    raw = np.zeros(p.size, dtype=np.int64)
    raw[1:] = np.sign(np.diff(p)).astype(np.int64)
    raw[0] = FIRST_TRADE_SIGN
    # carry the last nonzero sign over unchanged-price trades
    idx = np.where(raw != 0, np.arange(p.size), -1)
    np.maximum.accumulate(idx, out=idx)
    return np.where(idx >= 0, raw[np.maximum(idx, 0)], 0)


def second_signs(signs, cells, grid: SessionGrid, symbol: str = "") -> SignSeries:
    """Collapse per-trade signs into one ternary sign per grid cell.

    eps[t] = Sgn(sum of signs in cell t) when the cell has trades, else 0.
    Depends only on the signs and their cells, never on prices.
    """
    signs = np.asarray(signs, dtype=np.int64)
    cells = np.asarray(cells, dtype=np.int64)
    if signs.shape != cells.shape:
        raise ValueError("signs and cells must align")
    if cells.size and (cells.min() < 0 or cells.max() >= grid.len):
        raise ValueError("cells outside the session grid")
    sums = np.bincount(cells, weights=signs.astype(np.float64), minlength=grid.len)
    eps = np.sign(sums).astype(np.int64)
    return SignSeries(symbol=symbol, grid=grid, eps=eps)


def sign_series_for(series) -> SignSeries:
    """Tick-rule signs of a SecondSeries' trades, collapsed per second."""
    per_trade = tick_signs(series.trade_prices)
    return second_signs(per_trade, series.trade_cells, series.grid, symbol=series.symbol)


def zero_mask(signs: SignSeries) -> np.ndarray:
    """Boolean mask of cells with a nonzero sign (exclude-zero mode)."""
    return signs.eps != 0
