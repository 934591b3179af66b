"""Trade/quote CSV parsing and resampling onto the one-second session grid.

File formats (UTF-8, LF, header row required):

* trades: ``symbol,ts,price,size``
* quotes: ``symbol,ts,bid,ask[,bid_size,ask_size]`` (sizes ignored)

``ts`` is either an integer epoch-nanosecond value or an ISO-8601 local
timestamp ``YYYY-MM-DDTHH:MM:SS[.fffffffff]`` (``T`` or space separator,
up to nine fractional digits). Timestamps are treated as a naive
exchange-local clock: no time zones, the calendar date is derived
directly from the value.

Malformed rows are never silently dropped: parsers collect one error per
bad row (with its 1-based row number) and report totals, so that for every
file ``rows_total = parsed + malformed``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CrossedQuote,
    EmptyDay,
    MissingColumn,
    NonPositivePrice,
    RowError,
    UnparsableTimestamp,
)
from .grids import NS_PER_SEC, SessionGrid, date_of_ts, seconds_of_day

_EPOCH = dt.date(1970, 1, 1)


@dataclass(frozen=True, slots=True)
class TickRecord:
    symbol: str
    ts: int  # epoch nanoseconds
    price: float
    size: int


@dataclass(frozen=True, slots=True)
class QuoteRecord:
    symbol: str
    ts: int
    bid: float
    ask: float


@dataclass(frozen=True)
class TradeSchema:
    symbol: str = "symbol"
    ts: str = "ts"
    price: str = "price"
    size: str = "size"


@dataclass(frozen=True)
class QuoteSchema:
    symbol: str = "symbol"
    ts: str = "ts"
    bid: str = "bid"
    ask: str = "ask"


@dataclass
class ParseResult:
    """Records in file order plus per-row errors (RowError instances)."""

    records: list
    errors: list = field(default_factory=list)
    rows_total: int = 0  # data rows, header excluded

    @property
    def counts(self) -> dict:
        return {"rows_total": self.rows_total, "parsed": len(self.records),
                "malformed": len(self.errors)}


def parse_timestamp(text: str) -> int:
    """Epoch-ns from an integer or ISO-8601 string (naive local clock)."""
    s = text.strip()
    if not s:
        raise ValueError("empty timestamp")
    body = s[1:] if s[0] in "+-" else s
    if body.isdigit():
        return int(s)
    sep = "T" if "T" in s else " "
    date_part, _, time_part = s.partition(sep)
    if not time_part:
        raise ValueError(f"no time component in {text!r}")
    frac_ns = 0
    if "." in time_part:
        time_part, frac = time_part.split(".", 1)
        if not frac.isdigit() or len(frac) > 9:
            raise ValueError(f"bad fractional seconds in {text!r}")
        frac_ns = int(frac.ljust(9, "0"))
    d = dt.date.fromisoformat(date_part)
    hh, mm, ss = time_part.split(":")
    sod = int(hh) * 3600 + int(mm) * 60 + int(ss)
    if sod >= 86_400:
        raise ValueError(f"time of day out of range in {text!r}")
    return (d - _EPOCH).days * 86_400 * NS_PER_SEC + sod * NS_PER_SEC + frac_ns


def _open_stream(stream):
    if isinstance(stream, (str, os.PathLike)):
        return open(stream, "r", encoding="utf-8", newline=""), True
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(stream.decode("utf-8")), True
    if isinstance(stream, io.TextIOBase):
        return stream, False
    # binary file-like
    return io.TextIOWrapper(stream, encoding="utf-8", newline=""), False


def _header_index(header, wanted, row):
    cols = {}
    for name in wanted:
        if name not in header:
            raise MissingColumn(row, f"column {name!r} not in header {header}")
        cols[name] = header.index(name)
    return cols


def parse_trades(stream, schema: TradeSchema = TradeSchema()) -> ParseResult:
    """Parse a trades CSV into TickRecords, collecting per-row errors.

    A missing header column raises MissingColumn immediately; row-level
    problems (short rows, bad timestamps, non-positive prices or sizes)
    are recorded in ``result.errors`` and the row is skipped.
    """
    fh, close = _open_stream(stream)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(1, "empty file, no header row") from None
        cols = _header_index(header, [schema.symbol, schema.ts, schema.price, schema.size], 1)
        c_sym, c_ts = cols[schema.symbol], cols[schema.ts]
        c_px, c_sz = cols[schema.price], cols[schema.size]
        need = max(cols.values()) + 1
        out = ParseResult(records=[])
        append = out.records.append
        for rowno, row in enumerate(reader, start=2):
            out.rows_total += 1
            if len(row) < need:
                out.errors.append(MissingColumn(rowno, f"expected {need} columns, got {len(row)}"))
                continue
            try:
                ts = parse_timestamp(row[c_ts])
            except ValueError as exc:
                out.errors.append(UnparsableTimestamp(rowno, str(exc)))
                continue
            try:
                price = float(row[c_px])
                size = int(row[c_sz])
            except ValueError as exc:
                out.errors.append(RowError(rowno, f"bad numeric field: {exc}"))
                continue
            if not price > 0:
                out.errors.append(NonPositivePrice(rowno, f"price {row[c_px]}"))
                continue
            if size < 1:
                out.errors.append(RowError(rowno, f"size {size} < 1"))
                continue
            append(TickRecord(row[c_sym], ts, price, size))
        return out
    finally:
        if close:
            fh.close()


def parse_quotes(stream, schema: QuoteSchema = QuoteSchema()) -> ParseResult:
    """Parse a quotes CSV into QuoteRecords; crossed quotes (ask < bid) are
    rejected as row errors."""
    fh, close = _open_stream(stream)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(1, "empty file, no header row") from None
        cols = _header_index(header, [schema.symbol, schema.ts, schema.bid, schema.ask], 1)
        c_sym, c_ts = cols[schema.symbol], cols[schema.ts]
        c_bid, c_ask = cols[schema.bid], cols[schema.ask]
        need = max(cols.values()) + 1
        out = ParseResult(records=[])
        append = out.records.append
        for rowno, row in enumerate(reader, start=2):
            out.rows_total += 1
            if len(row) < need:
                out.errors.append(MissingColumn(rowno, f"expected {need} columns, got {len(row)}"))
                continue
            try:
                ts = parse_timestamp(row[c_ts])
            except ValueError as exc:
                out.errors.append(UnparsableTimestamp(rowno, str(exc)))
                continue
            try:
                bid = float(row[c_bid])
                ask = float(row[c_ask])
            except ValueError as exc:
                out.errors.append(RowError(rowno, f"bad numeric field: {exc}"))
                continue
            if not (bid > 0 and ask > 0):
                out.errors.append(NonPositivePrice(rowno, f"bid {row[c_bid]} ask {row[c_ask]}"))
                continue
            if ask < bid:
                out.errors.append(CrossedQuote(rowno, f"ask {ask} < bid {bid}"))
                continue
            append(QuoteRecord(row[c_sym], ts, bid, ask))
        return out
    finally:
        if close:
            fh.close()


def session_filter(records, grid: SessionGrid):
    """Keep records whose time of day falls in [open, close); returns
    ``(kept, n_dropped)``. Records are sorted by timestamp if needed
    (stable, so intra-second file order survives)."""
    records = list(records)
    lo = grid.open_s * NS_PER_SEC
    hi = grid.close_s * NS_PER_SEC
    day = 86_400 * NS_PER_SEC
    kept = [r for r in records if lo <= (r.ts % day) < hi]
    if any(kept[k].ts > kept[k + 1].ts for k in range(len(kept) - 1)):
        kept.sort(key=lambda r: r.ts)
    return kept, len(records) - len(kept)


@dataclass
class SecondSeries:
    """Per symbol-day arrays on the session grid.

    ``midpoint[t]`` is the midpoint of the last valid quote at or before
    cell ``t`` (NaN before the day's first quote). Trades are stored flat,
    sorted by cell with intra-second order preserved; ``n_trades`` counts
    trades per cell.
    """

    symbol: str
    grid: SessionGrid
    midpoint: np.ndarray  # f8[len], NaN = missing
    trade_cells: np.ndarray  # i8[n], ascending
    trade_prices: np.ndarray  # f8[n]
    n_trades: np.ndarray = None  # i8[len]

    def __post_init__(self):
        if self.n_trades is None:
            self.n_trades = np.bincount(
                self.trade_cells, minlength=self.grid.len
            ).astype(np.int64)

    def trades_in_cell(self, t: int):
        """List of (intra-second index n starting at 1, price) for cell t."""
        lo = np.searchsorted(self.trade_cells, t, side="left")
        hi = np.searchsorted(self.trade_cells, t, side="right")
        return [(n, float(p)) for n, p in enumerate(self.trade_prices[lo:hi], start=1)]


def _ffill_nan(values: np.ndarray) -> np.ndarray:
    """Forward-fill NaN from the previous finite value; leading NaN stay."""
    valid = ~np.isnan(values)
    idx = np.where(valid, np.arange(values.size), -1)
    np.maximum.accumulate(idx, out=idx)
    out = np.where(idx >= 0, values[np.maximum(idx, 0)], np.nan)
    return out


def resample_midpoints_arrays(ts, bid, ask, grid: SessionGrid):
    """Array-level core of resample_midpoints; inputs time-ordered and
    session-filtered. Returns ``(midpoint array, n_crossed_rejected)``."""
    ts = np.asarray(ts, dtype=np.int64)
    bid = np.asarray(bid, dtype=np.float64)
    ask = np.asarray(ask, dtype=np.float64)
    keep = ask >= bid
    n_crossed = int(ts.size - keep.sum())
    ts, bid, ask = ts[keep], bid[keep], ask[keep]
    if ts.size == 0:
        raise EmptyDay(f"no valid quotes on {grid.date}")
    cells = seconds_of_day(ts) - grid.open_s
    if np.any(cells < 0) or np.any(cells >= grid.len):
        raise ValueError("quotes not session-filtered")
    mids = (ask + bid) / 2.0
    midpoint = np.full(grid.len, np.nan)
    ucells, first_in_rev = np.unique(cells[::-1], return_index=True)  # last per cell
    midpoint[ucells] = mids[::-1][first_in_rev]
    return _ffill_nan(midpoint), n_crossed


def resample_midpoints(quotes, grid: SessionGrid):
    """Midpoint per grid cell from session-filtered, time-ordered quotes.

    The last quote inside a cell wins; empty cells forward-fill within the
    day; cells before the first quote stay NaN. Crossed quotes (ask < bid)
    are skipped and counted; locked quotes (ask == bid) are legal.

    Returns ``(midpoint array, n_crossed_rejected)``. Raises EmptyDay if no
    valid quote remains.
    """
    quotes = list(quotes)
    ts = np.fromiter((q.ts for q in quotes), dtype=np.int64, count=len(quotes))
    bid = np.fromiter((q.bid for q in quotes), dtype=np.float64, count=len(quotes))
    ask = np.fromiter((q.ask for q in quotes), dtype=np.float64, count=len(quotes))
    return resample_midpoints_arrays(ts, bid, ask, grid)


def bucket_trades_arrays(ts, prices, grid: SessionGrid):
    """Array-level core of bucket_trades. Returns ``(cells, prices)``."""
    ts = np.asarray(ts, dtype=np.int64)
    prices = np.asarray(prices, dtype=np.float64)
    cells = seconds_of_day(ts) - grid.open_s
    if cells.size and (cells.min() < 0 or cells.max() >= grid.len):
        raise ValueError("trades not session-filtered")
    return cells.astype(np.int64), prices


def bucket_trades(trades, grid: SessionGrid):
    """Flat (cells, prices) arrays from session-filtered, time-ordered trades.

    Intra-second order is file order (the stable sort in session_filter
    keeps it). Returns ``(trade_cells, trade_prices)``.
    """
    trades = list(trades)
    ts = np.fromiter((t.ts for t in trades), dtype=np.int64, count=len(trades))
    prices = np.fromiter((t.price for t in trades), dtype=np.float64, count=len(trades))
    return bucket_trades_arrays(ts, prices, grid)


def build_second_series(symbol: str, quotes, trades, grid: SessionGrid) -> SecondSeries:
    """Resample one symbol-day of session-filtered quotes and trades."""
    midpoint, _ = resample_midpoints(quotes, grid)
    cells, prices = bucket_trades(trades, grid)
    return SecondSeries(symbol, grid, midpoint, cells, prices)


def group_by_symbol_day(records):
    """Split records into ``{(symbol, date): [records]}`` preserving order."""
    groups: dict = {}
    for r in records:
        key = (r.symbol, date_of_ts(r.ts))
        groups.setdefault(key, []).append(r)
    return groups
