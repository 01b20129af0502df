"""Windowed samples, min-max scaling, date splits, and a synthetic market."""

from __future__ import annotations

import json
import struct
from bisect import bisect_right
from dataclasses import dataclass, replace
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .indicators import N_FEATURES, FeatureRow
from .market_data import DailyBar, TickerSeries, Universe

WINDOW_LEN = 10
N_CHANNELS = N_FEATURES + 1  # 15 feature channels + 1 target channel
TARGET_CLIP = 2.0

DATASET_MAGIC = b"I2EDS1"


class DatasetError(Exception):
    pass


@dataclass
class Sample:
    """A 10x15 feature window plus the next trading day's intraday return.

    `target_return` is clipped at +2 on construction and lives in scaled space
    once a scaler has been applied; `target_label` always reflects the raw
    next-day return sign.
    """

    symbol: str
    anchor_date: date
    target_date: date
    window: np.ndarray  # (WINDOW_LEN, N_FEATURES)
    target_return: float
    target_label: int

    def __post_init__(self) -> None:
        if self.window.shape != (WINDOW_LEN, N_FEATURES):
            raise DatasetError(f"window must be {WINDOW_LEN}x{N_FEATURES}, got {self.window.shape}")
        if self.target_label not in (0, 1):
            raise DatasetError("label must be 0 or 1")


def clip_target(r: float) -> float:
    """Cap extreme positive returns at +2; the lower tail is untouched."""
    return min(r, TARGET_CLIP)


def make_windows(
    features: list[FeatureRow],
    returns: list[tuple[date, float]],
) -> list[Sample]:
    """One sample per feature date with 9 predecessors and a next-day return.

    `returns` is the full date-ascending (date, raw intraday return) sequence
    for the same ticker; the target day is the first entry dated after the
    window's last feature day.
    """
    symbol_windows: list[Sample] = []
    if len(features) < WINDOW_LEN:
        return symbol_windows
    ret_dates = [d for d, _ in returns]
    ret_values = [v for _, v in returns]
    for j in range(WINDOW_LEN - 1, len(features)):
        anchor = features[j].date
        nxt = bisect_right(ret_dates, anchor)
        if nxt >= len(ret_dates):
            continue
        raw = ret_values[nxt]
        window = np.array(
            [features[j - WINDOW_LEN + 1 + k].values() for k in range(WINDOW_LEN)],
            dtype=np.float64,
        )
        symbol_windows.append(
            Sample(
                symbol="",
                anchor_date=anchor,
                target_date=ret_dates[nxt],
                window=window,
                target_return=clip_target(raw),
                target_label=1 if raw > 0 else 0,
            )
        )
    return symbol_windows


def make_windows_for_symbol(symbol: str, features: list[FeatureRow], returns: list[tuple[date, float]]) -> list[Sample]:
    return [replace(s, symbol=symbol) for s in make_windows(features, returns)]


@dataclass
class MinMaxScaler:
    """Per-channel [min, max] fitted on the training partition only."""

    mins: np.ndarray  # (N_CHANNELS,)
    maxes: np.ndarray  # (N_CHANNELS,)

    def __post_init__(self) -> None:
        if self.mins.shape != (N_CHANNELS,) or self.maxes.shape != (N_CHANNELS,):
            raise DatasetError(f"scaler needs {N_CHANNELS} channels")
        if np.any(self.maxes < self.mins):
            raise DatasetError("scaler max < min")

    def _spans(self) -> np.ndarray:
        spans = self.maxes - self.mins
        return np.where(spans == 0.0, 1.0, spans)  # constant channel maps to 0

    def transform_window(self, window: np.ndarray) -> np.ndarray:
        return (window - self.mins[:N_FEATURES]) / self._spans()[:N_FEATURES]

    def inverse_window(self, window: np.ndarray) -> np.ndarray:
        return window * self._spans()[:N_FEATURES] + self.mins[:N_FEATURES]

    def transform_target(self, r):
        return (r - self.mins[-1]) / self._spans()[-1]

    def inverse_target(self, r):
        return r * self._spans()[-1] + self.mins[-1]


def scaler_to_json(scaler: MinMaxScaler, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"mins": scaler.mins.tolist(), "maxes": scaler.maxes.tolist()}
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def scaler_from_json(path: Path | str) -> MinMaxScaler:
    doc = json.loads(Path(path).read_text())
    return MinMaxScaler(np.array(doc["mins"], dtype=np.float64), np.array(doc["maxes"], dtype=np.float64))


def fit_scaler(train_samples: list[Sample]) -> MinMaxScaler:
    if not train_samples:
        raise DatasetError("cannot fit a scaler on an empty training partition")
    stacked = np.stack([s.window for s in train_samples])  # (N, 10, 15)
    mins = np.empty(N_CHANNELS)
    maxes = np.empty(N_CHANNELS)
    mins[:N_FEATURES] = stacked.min(axis=(0, 1))
    maxes[:N_FEATURES] = stacked.max(axis=(0, 1))
    targets = np.array([s.target_return for s in train_samples])
    mins[-1] = targets.min()
    maxes[-1] = targets.max()
    return MinMaxScaler(mins, maxes)


def apply_scaler(scaler: MinMaxScaler, samples: list[Sample]) -> list[Sample]:
    if scaler is None:
        raise DatasetError("scaler has not been fitted")
    return [
        replace(
            s,
            window=scaler.transform_window(s.window),
            target_return=float(scaler.transform_target(s.target_return)),
        )
        for s in samples
    ]


@dataclass(frozen=True)
class DateInterval:
    start: date
    end: date

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise DatasetError(f"interval start {self.start} after end {self.end}")

    def contains(self, d: date) -> bool:
        return self.start <= d <= self.end


@dataclass(frozen=True)
class SplitSpec:
    """Train / validation / test intervals; membership by target date."""

    train: DateInterval
    validation: DateInterval
    test: DateInterval

    def __post_init__(self) -> None:
        if not (self.train.end < self.validation.start and self.validation.end < self.test.start):
            raise DatasetError("splits must be disjoint and ordered train < validation < test")

    @classmethod
    def default(cls) -> "SplitSpec":
        return cls(
            train=DateInterval(date(2010, 1, 1), date(2021, 12, 31)),
            validation=DateInterval(date(2022, 1, 1), date(2022, 12, 31)),
            test=DateInterval(date(2023, 1, 1), date(2023, 12, 1)),
        )

    @classmethod
    def from_dates(cls, dates: list[date], train_frac: float = 0.7, val_frac: float = 0.15) -> "SplitSpec":
        """Quantile-based spec over an observed trading calendar (synthetic runs)."""
        if len(dates) < 10:
            raise DatasetError("need at least 10 dates to derive a split")
        dates = sorted(dates)
        i_train = int(len(dates) * train_frac)
        i_val = int(len(dates) * (train_frac + val_frac))
        return cls(
            train=DateInterval(dates[0], dates[i_train - 1]),
            validation=DateInterval(dates[i_train], dates[i_val - 1]),
            test=DateInterval(dates[i_val], dates[-1]),
        )


def split_by_date(samples: list[Sample], spec: SplitSpec) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Partition by the TARGET day's date; samples outside all intervals drop."""
    train: list[Sample] = []
    val: list[Sample] = []
    test: list[Sample] = []
    for s in samples:
        if spec.train.contains(s.target_date):
            train.append(s)
        elif spec.validation.contains(s.target_date):
            val.append(s)
        elif spec.test.contains(s.target_date):
            test.append(s)
    return train, val, test


def class_weights(labels) -> tuple[float, float]:
    """w_c = N / (2 * N_c): weighted label mass equal across the two classes."""
    labels = np.asarray(labels)
    n = len(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DatasetError("class_weights requires both classes present")
    return n / (2.0 * n_neg), n / (2.0 * n_pos)


def flatten_window(sample: Sample) -> np.ndarray:
    """Row-major day-then-feature flattening: [day0 f0..f14, day1 f0..f14, ...]."""
    return np.ascontiguousarray(sample.window).reshape(WINDOW_LEN * N_FEATURES)


def unflatten_window(vector: np.ndarray) -> np.ndarray:
    if vector.shape != (WINDOW_LEN * N_FEATURES,):
        raise DatasetError(f"expected a {WINDOW_LEN * N_FEATURES}-vector")
    return vector.reshape(WINDOW_LEN, N_FEATURES)


def to_arrays(samples: list[Sample], dtype=np.float32):
    """Pack samples for model consumption: (X, y_return, y_label)."""
    x = np.stack([s.window for s in samples]).astype(dtype)
    y_ret = np.array([s.target_return for s in samples], dtype=dtype)
    y_lab = np.array([s.target_label for s in samples], dtype=dtype)
    return x, y_ret, y_lab


# ---------------------------------------------------------------------------
# Synthetic market: AR(1) market factor, per-stock beta loading plus noise.


def trading_calendar(n_days: int, start: date = date(2015, 1, 5)) -> list[date]:
    """n_days consecutive weekdays starting at `start` (weekends skipped)."""
    days: list[date] = []
    d = start
    while len(days) < n_days:
        if d.weekday() < 5:
            days.append(d)
        d += timedelta(days=1)
    return days


def _bars_from_returns(rng: np.random.Generator, days: list[date], intraday: np.ndarray, start_price: float) -> tuple[DailyBar, ...]:
    n = len(days)
    gaps = np.clip(rng.normal(0.0, 0.002, size=n), -0.009, 0.009)
    highs_u = np.abs(rng.normal(0.0, 0.002, size=n))
    lows_u = np.abs(rng.normal(0.0, 0.002, size=n))
    volumes = rng.integers(10_000, 1_000_000, size=n)
    bars = []
    open_px = start_price
    for i, day in enumerate(days):
        close_px = open_px * (1.0 + intraday[i])
        hi = max(open_px, close_px) * (1.0 + highs_u[i])
        lo = min(open_px, close_px) * (1.0 - lows_u[i])
        bars.append(DailyBar(day, float(open_px), float(hi), float(lo), float(close_px), int(volumes[i])))
        open_px = close_px * (1.0 + gaps[i])
    return tuple(bars)


def synth_market(
    n_stocks: int,
    n_days: int,
    seed: int,
    *,
    noise_scale: float = 2.0,
    phi: float = 0.9,
    factor_innovation_sd: float = 0.004,
    index_symbol: str = "^INDEX",
    start: date = date(2015, 1, 5),
) -> tuple[Universe, TickerSeries]:
    """Deterministic factor market: index return IS the latent AR(1) factor.

    Stock i's intraday return is beta_i * factor + noise_scale * sigma_f * eps,
    so noise_scale 0 makes every stock perfectly correlated with the index.
    """
    if n_stocks < 2:
        raise DatasetError("need at least 2 stocks")
    if n_days < 200:
        raise DatasetError("need at least 200 days")
    rng = np.random.default_rng(seed)
    days = trading_calendar(n_days, start)

    sigma_f = factor_innovation_sd / np.sqrt(1.0 - phi * phi)
    factor = np.empty(n_days)
    factor[0] = rng.normal(0.0, sigma_f)
    innovations = rng.normal(0.0, factor_innovation_sd, size=n_days - 1)
    for t in range(1, n_days):
        factor[t] = phi * factor[t - 1] + innovations[t - 1]
    factor = np.clip(factor, -0.4, 0.4)

    index_series = TickerSeries(index_symbol, _bars_from_returns(rng, days, factor, 1_000.0))

    betas = rng.uniform(0.5, 1.5, size=n_stocks)
    start_prices = rng.uniform(10.0, 200.0, size=n_stocks)
    members: list[TickerSeries] = []
    for i in range(n_stocks):
        eps = rng.normal(0.0, 1.0, size=n_days)
        returns = np.clip(betas[i] * factor + noise_scale * sigma_f * eps, -0.4, 0.4)
        symbol = f"SYN{i:03d}"
        members.append(TickerSeries(symbol, _bars_from_returns(rng, days, returns, start_prices[i])))
    return Universe.from_series(members), index_series


# ---------------------------------------------------------------------------
# Binary partition cache.
#
# Layout (all little-endian):
#   magic   6 bytes  b"I2EDS1"
#   u32     n_samples
#   u32     window_len (10)
#   u32     n_features (15)
#   u32     n_channels (16)
#   f64[n_channels] scaler mins
#   f64[n_channels] scaler maxes
#   u32     symbol-table byte length, then that many UTF-8 bytes of JSON
#           (list of symbols; records reference indexes into it)
#   records n_samples x 155 float32:
#           150 window values (day-major), target_return, target_label,
#           symbol_index, anchor_date_ordinal, target_date_ordinal
#           (the three trailing ints are exact in float32)

_RECORD_FLOATS = WINDOW_LEN * N_FEATURES + 5


def save_dataset(path: Path | str, samples: list[Sample], scaler: MinMaxScaler) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    symbols = sorted({s.symbol for s in samples})
    sym_idx = {sym: i for i, sym in enumerate(symbols)}
    symtab = json.dumps(symbols).encode("utf-8")
    records = np.empty((len(samples), _RECORD_FLOATS), dtype="<f4")
    for i, s in enumerate(samples):
        records[i, : WINDOW_LEN * N_FEATURES] = s.window.reshape(-1)
        records[i, -5] = s.target_return
        records[i, -4] = s.target_label
        records[i, -3] = sym_idx[s.symbol]
        records[i, -2] = s.anchor_date.toordinal()
        records[i, -1] = s.target_date.toordinal()
    with path.open("wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<4I", len(samples), WINDOW_LEN, N_FEATURES, N_CHANNELS))
        fh.write(scaler.mins.astype("<f8").tobytes())
        fh.write(scaler.maxes.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(symtab)))
        fh.write(symtab)
        fh.write(records.tobytes())


def load_dataset(path: Path | str) -> tuple[list[Sample], MinMaxScaler]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:6] != DATASET_MAGIC:
        raise DatasetError(f"{path}: bad magic")
    off = 6
    n_samples, window_len, n_features, n_channels = struct.unpack_from("<4I", blob, off)
    off += 16
    if (window_len, n_features, n_channels) != (WINDOW_LEN, N_FEATURES, N_CHANNELS):
        raise DatasetError(f"{path}: unexpected geometry")
    mins = np.frombuffer(blob, dtype="<f8", count=n_channels, offset=off).copy()
    off += 8 * n_channels
    maxes = np.frombuffer(blob, dtype="<f8", count=n_channels, offset=off).copy()
    off += 8 * n_channels
    (symtab_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    symbols = json.loads(blob[off : off + symtab_len].decode("utf-8"))
    off += symtab_len
    records = np.frombuffer(blob, dtype="<f4", count=n_samples * _RECORD_FLOATS, offset=off)
    records = records.reshape(n_samples, _RECORD_FLOATS)
    samples: list[Sample] = []
    for i in range(n_samples):
        row = records[i]
        samples.append(
            Sample(
                symbol=symbols[int(row[-3])],
                anchor_date=date.fromordinal(int(row[-2])),
                target_date=date.fromordinal(int(row[-1])),
                window=row[: WINDOW_LEN * N_FEATURES].astype(np.float64).reshape(WINDOW_LEN, N_FEATURES),
                target_return=float(row[-5]),
                target_label=int(row[-4]),
            )
        )
    return samples, MinMaxScaler(mins, maxes)
