import datetime as dt

import numpy as np
import pytest

from impactlab.grids import SessionGrid
from impactlab.signing import SignSeries
from impactlab.taq_ingest import SecondSeries


@pytest.fixture
def tiny_grid():
    """A 10-cell session starting 09:40."""
    return SessionGrid(date=dt.date(2008, 1, 2), open_s=34800, close_s=34810)


def make_grid(n, date=dt.date(2008, 1, 2), open_s=34800):
    return SessionGrid(date=date, open_s=open_s, close_s=open_s + n)


def make_series(mid, grid=None, symbol="AAA"):
    mid = np.asarray(mid, dtype=np.float64)
    grid = grid or make_grid(mid.size)
    assert grid.len == mid.size
    return SecondSeries(
        symbol, grid, mid,
        np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64),
    )


def make_signs(eps, grid=None, symbol="BBB"):
    eps = np.asarray(eps, dtype=np.int64)
    grid = grid or make_grid(eps.size)
    assert grid.len == eps.size
    return SignSeries(symbol, grid, eps)
