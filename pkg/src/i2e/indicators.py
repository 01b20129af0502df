"""Per-day technical features (15 channels) with neutral-midpoint sanitization."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path

from .market_data import DailyBar, TickerSeries

log = logging.getLogger(__name__)

# Channel order is a wire format: feature CSVs, sample windows and the
# min-max scaler all index channels in this order.
FEATURE_NAMES = [
    "intraday_return",
    "ema10",
    "ema12",
    "ema26",
    "stoch_k",
    "roc",
    "rsi",
    "accdo",
    "macd",
    "disparity5",
    "disparity10",
    "ma5",
    "ma10",
    "close_lag10",
    "day_of_year",
]
N_FEATURES = len(FEATURE_NAMES)


class IndicatorError(Exception):
    pass


class RowRejected(IndicatorError):
    """A feature row had a non-finite field outside the sanitization rules."""

    def __init__(self, field_name: str, day: date):
        self.field_name = field_name
        self.day = day
        super().__init__(f"non-finite {field_name} on {day}")


@dataclass(frozen=True)
class FeatureRow:
    """The 15 engineered features for one ticker-date."""

    date: date
    intraday_return: float
    ema10: float
    ema12: float
    ema26: float
    stoch_k: float
    roc: float
    rsi: float
    accdo: float
    macd: float
    disparity5: float
    disparity10: float
    ma5: float
    ma10: float
    close_lag10: float
    day_of_year: int

    def values(self) -> list[float]:
        return [float(getattr(self, name)) for name in FEATURE_NAMES]


@dataclass(frozen=True)
class IndicatorWindows:
    """Window lengths the source text leaves open; EMA/MA/disparity are fixed."""

    stoch_k: int = 10
    rsi: int = 14
    roc: int = 10
    close_lag: int = 10


def intraday_return(bar: DailyBar) -> float:
    """(close - open) / open for a single day."""
    if bar.open <= 0:
        raise IndicatorError(f"invalid bar on {bar.date}: open must be positive")
    return (bar.close - bar.open) / bar.open


def sma(closes: list[float], n: int) -> list[float | None]:
    """Trailing n-mean; None during warm-up (first n-1 indices)."""
    if n < 1:
        raise IndicatorError("sma window must be >= 1")
    out: list[float | None] = [None] * len(closes)
    running = 0.0
    for i, c in enumerate(closes):
        running += c
        if i >= n:
            running -= closes[i - n]
        if i >= n - 1:
            out[i] = running / n
    return out


def ema(closes: list[float], n: int) -> list[float]:
    """Exponential moving average, alpha = 2/(n+1), seeded with the first close."""
    if n < 1:
        raise IndicatorError("ema window must be >= 1")
    if not closes:
        return []
    alpha = 2.0 / (n + 1)
    out = [float(closes[0])]
    for c in closes[1:]:
        out.append(alpha * c + (1 - alpha) * out[-1])
    return out


def stochastic_k(bars: list[DailyBar], n: int = 10) -> list[float | None]:
    """100 * (close - LL_n) / (HH_n - LL_n); +inf marks a flat window for sanitize."""
    if n < 1:
        raise IndicatorError("stoch_k window must be >= 1")
    out: list[float | None] = [None] * len(bars)
    for i in range(n - 1, len(bars)):
        window = bars[i - n + 1 : i + 1]
        hh = max(b.high for b in window)
        ll = min(b.low for b in window)
        if hh == ll:
            out[i] = math.nan  # degenerate window; sanitize() maps to 50
        else:
            out[i] = 100.0 * (bars[i].close - ll) / (hh - ll)
    return out


def roc(closes: list[float], n: int = 10) -> list[float | None]:
    """Percent change vs the close n days earlier."""
    out: list[float | None] = [None] * len(closes)
    for i in range(n, len(closes)):
        prev = closes[i - n]
        if prev <= 0:
            raise IndicatorError(f"roc undefined: non-positive close at lag index {i - n}")
        out[i] = 100.0 * (closes[i] - prev) / prev
    return out


def rsi(closes: list[float], n: int = 14) -> list[float | None]:
    """Simple-average RSI; all-up -> 100, flat -> 50 (neutral midpoint)."""
    if n < 1:
        raise IndicatorError("rsi window must be >= 1")
    out: list[float | None] = [None] * len(closes)
    for i in range(n, len(closes)):
        gains = 0.0
        losses = 0.0
        for j in range(i - n + 1, i + 1):
            delta = closes[j] - closes[j - 1]
            if delta > 0:
                gains += delta
            else:
                losses -= delta
        mean_gain = gains / n
        mean_loss = losses / n
        if mean_loss == 0.0 and mean_gain == 0.0:
            out[i] = 50.0
        elif mean_loss == 0.0:
            out[i] = 100.0
        else:
            rs = mean_gain / mean_loss
            out[i] = 100.0 - 100.0 / (1.0 + rs)
    return out


def accdo(bars: list[DailyBar]) -> list[float | None]:
    """(high - prev close) / (high - low); +/- inf marks a zero-range day."""
    out: list[float | None] = [None] * len(bars)
    for i in range(1, len(bars)):
        h, l = bars[i].high, bars[i].low
        prev_close = bars[i - 1].close
        if h == l:
            out[i] = math.nan  # zero-range day; sanitize() maps to 0
        else:
            out[i] = (h - prev_close) / (h - l)
    return out


def macd(ema12_values: list[float], ema26_values: list[float]) -> list[float]:
    """Elementwise ema12 - ema26."""
    if len(ema12_values) != len(ema26_values):
        raise IndicatorError(
            f"macd inputs must have equal length ({len(ema12_values)} vs {len(ema26_values)})"
        )
    return [a - b for a, b in zip(ema12_values, ema26_values)]


def disparity(closes: list[float], n: int) -> list[float | None]:
    """100 * close / sma_n(close)."""
    means = sma(closes, n)
    out: list[float | None] = [None] * len(closes)
    for i, m in enumerate(means):
        if m is not None:
            out[i] = 100.0 * closes[i] / m
    return out


def _finite(x: float) -> bool:
    return math.isfinite(x)


def sanitize(row: FeatureRow) -> FeatureRow:
    """Apply the neutral-midpoint substitutions; reject any other non-finite field.

    Non-finite stoch_k -> 50, non-finite accdo -> 0. Anything else non-finite
    raises RowRejected naming the field and date.
    """
    stoch = row.stoch_k if _finite(row.stoch_k) else 50.0
    acc = row.accdo if _finite(row.accdo) else 0.0
    for f in fields(row):
        if f.name in ("date", "stoch_k", "accdo"):
            continue
        if not _finite(float(getattr(row, f.name))):
            raise RowRejected(f.name, row.date)
    if stoch == row.stoch_k and acc == row.accdo:
        return row
    return FeatureRow(**{**{f.name: getattr(row, f.name) for f in fields(row)}, "stoch_k": stoch, "accdo": acc})


def compute_features(
    series: TickerSeries,
    windows: IndicatorWindows = IndicatorWindows(),
) -> list[FeatureRow]:
    """All 15 features per date, warm-up rows omitted, sanitization applied.

    Rows rejected by sanitize (non-finite outside the two stated substitutions)
    are dropped with a warning rather than aborting the ticker.
    """
    bars = list(series.bars)
    if not bars:
        return []
    closes = [b.close for b in bars]
    ema10_v = ema(closes, 10)
    ema12_v = ema(closes, 12)
    ema26_v = ema(closes, 26)
    macd_v = macd(ema12_v, ema26_v)
    stoch_v = stochastic_k(bars, windows.stoch_k)
    roc_v = roc(closes, windows.roc)
    rsi_v = rsi(closes, windows.rsi)
    accdo_v = accdo(bars)
    disp5_v = disparity(closes, 5)
    disp10_v = disparity(closes, 10)
    ma5_v = sma(closes, 5)
    ma10_v = sma(closes, 10)

    rows: list[FeatureRow] = []
    for i, bar in enumerate(bars):
        lag_idx = i - windows.close_lag
        columns = (
            stoch_v[i],
            roc_v[i],
            rsi_v[i],
            accdo_v[i],
            disp5_v[i],
            disp10_v[i],
            ma5_v[i],
            ma10_v[i],
            closes[lag_idx] if lag_idx >= 0 else None,
        )
        if any(v is None for v in columns):
            continue
        raw = FeatureRow(
            date=bar.date,
            intraday_return=intraday_return(bar),
            ema10=ema10_v[i],
            ema12=ema12_v[i],
            ema26=ema26_v[i],
            stoch_k=columns[0],
            roc=columns[1],
            rsi=columns[2],
            accdo=columns[3],
            macd=macd_v[i],
            disparity5=columns[4],
            disparity10=columns[5],
            ma5=columns[6],
            ma10=columns[7],
            close_lag10=columns[8],
            day_of_year=bar.date.timetuple().tm_yday,
        )
        try:
            rows.append(sanitize(raw))
        except RowRejected as exc:
            log.warning("%s: dropped feature row: %s", series.symbol, exc)
    return rows


# ---------------------------------------------------------------------------
# Feature cache: <features_dir>/<SYMBOL>.csv, header in FEATURE_NAMES order.

FEATURE_CSV_HEADER = ["date"] + FEATURE_NAMES


def write_feature_csv(symbol: str, rows: list[FeatureRow], features_dir: Path | str) -> Path:
    path = Path(features_dir) / f"{symbol.upper()}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_CSV_HEADER)
        for row in rows:
            writer.writerow([row.date.isoformat()] + [repr(v) for v in row.values()])
    return path


def read_feature_csv(path: Path | str) -> list[FeatureRow]:
    path = Path(path)
    rows: list[FeatureRow] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != FEATURE_CSV_HEADER:
            raise IndicatorError(f"{path}: unexpected feature header")
        for record in reader:
            day = date.fromisoformat(record[0])
            vals = [float(v) for v in record[1:]]
            kwargs = dict(zip(FEATURE_NAMES, vals))
            kwargs["day_of_year"] = int(kwargs["day_of_year"])
            rows.append(FeatureRow(date=day, **kwargs))
    return rows
