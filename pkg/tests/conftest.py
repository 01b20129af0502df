"""Shared fixtures: random-walk bar series and tiny universes."""

from datetime import date, timedelta

import numpy as np
import pytest

from i2e.market_data import DailyBar, TickerSeries


def random_walk_bars(n: int, seed: int, start: date = date(2018, 1, 1), start_price: float = 100.0):
    """Plausible OHLCV random walk honoring the bar invariants."""
    rng = np.random.default_rng(seed)
    bars = []
    open_px = start_price
    day = start
    for _ in range(n):
        while day.weekday() >= 5:
            day += timedelta(days=1)
        close_px = open_px * (1.0 + rng.normal(0, 0.02))
        close_px = max(close_px, 0.01)
        hi = max(open_px, close_px) * (1.0 + abs(rng.normal(0, 0.005)))
        lo = min(open_px, close_px) * (1.0 - abs(rng.normal(0, 0.005)))
        bars.append(DailyBar(day, open_px, hi, lo, close_px, int(rng.integers(1_000, 1_000_000))))
        open_px = max(close_px * (1.0 + rng.normal(0, 0.003)), 0.01)
        day += timedelta(days=1)
    return bars


@pytest.fixture
def walk_series():
    def make(n=200, seed=0, symbol="TST"):
        return TickerSeries(symbol, tuple(random_walk_bars(n, seed)))

    return make
