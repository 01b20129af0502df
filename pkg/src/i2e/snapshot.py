"""Next-trading-date prediction snapshots served by the HTTP API."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from . import gbt as gbt_mod
from .dataset import MinMaxScaler, WINDOW_LEN, scaler_from_json
from .forecasters import SequenceModel, ensemble_predict, load_weights, model_from_weights
from .indicators import IndicatorWindows, compute_features, read_feature_csv, write_feature_csv
from .market_data import BarCache, TickerSeries, exclude_first_year

log = logging.getLogger(__name__)


class SnapshotError(Exception):
    pass


def next_trading_date(last: date, holidays: set[date] | None = None) -> date:
    """First weekday after `last` that is not a configured holiday."""
    holidays = holidays or set()
    day = last + timedelta(days=1)
    while day.weekday() >= 5 or day in holidays:
        day += timedelta(days=1)
    return day


@dataclass(frozen=True)
class PredictionEntry:
    symbol: str
    predicted_return: float  # raw (inverse-scaled) ensemble value
    rank: int
    transformer: float
    lstm: float
    gbt: float
    ensemble: float


@dataclass(frozen=True)
class PredictionSnapshot:
    as_of: date
    target_date: date
    records: tuple[PredictionEntry, ...]  # rank-ascending
    model_digests: dict[str, str]

    def top_bottom(self, k: int) -> tuple[list[PredictionEntry], list[PredictionEntry]]:
        if k == 0:
            return [], []
        return list(self.records[:k]), list(reversed(self.records[-k:]))


@dataclass
class ModelBundle:
    """The three regression models plus the training scaler."""

    transformer: SequenceModel
    lstm: SequenceModel
    gbt: gbt_mod.GbtModel
    scaler: MinMaxScaler
    digests: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, models_dir: Path | str) -> "ModelBundle":
        import hashlib

        from .forecasters import model_digest

        models_dir = Path(models_dir)
        tf_w = load_weights(models_dir / "transformer_regression.i2ew")
        lstm_w = load_weights(models_dir / "lstm_regression.i2ew")
        gbt_model = gbt_mod.load_model(models_dir / "gbt_regression.json")
        scaler = scaler_from_json(models_dir / "scaler.json")
        tf = model_from_weights(tf_w)
        lstm = model_from_weights(lstm_w)
        gbt_digest = hashlib.sha256((models_dir / "gbt_regression.json").read_bytes()).hexdigest()
        return cls(
            tf,
            lstm,
            gbt_model,
            scaler,
            digests={"transformer": model_digest(tf), "lstm": model_digest(lstm), "gbt": gbt_digest},
        )


class SnapshotBuilder:
    """Computes raw-space ranked predictions for the next trading date."""

    def __init__(
        self,
        cache: BarCache,
        features_dir: Path | str,
        bundle: ModelBundle,
        windows: IndicatorWindows = IndicatorWindows(),
        holidays: set[date] | None = None,
        index_symbol: str | None = None,
        drop_first_year: bool = False,
    ):
        self.cache = cache
        self.features_dir = Path(features_dir)
        self.bundle = bundle
        self.windows = windows
        self.holidays = holidays or set()
        self.index_symbol = index_symbol
        self.drop_first_year = drop_first_year

    def universe_symbols(self) -> list[str]:
        symbols = sorted(self.cache.read_manifest())
        return [s for s in symbols if s != self.index_symbol]

    def _prepared_series(self, symbol: str) -> TickerSeries:
        series = self.cache.load(symbol)
        if self.drop_first_year and len(series):
            series = exclude_first_year(series)
        return series

    def recompute_features(self, symbol: str) -> int:
        """Rebuild and persist one symbol's feature rows; returns row count."""
        rows = compute_features(self._prepared_series(symbol), self.windows)
        write_feature_csv(symbol, rows, self.features_dir)
        return len(rows)

    def feature_rows(self, symbol: str):
        path = self.features_dir / f"{symbol.upper()}.csv"
        if not path.exists():
            self.recompute_features(symbol)
        return read_feature_csv(path)

    def build(self) -> PredictionSnapshot:
        symbols = self.universe_symbols()
        windows = []
        kept: list[str] = []
        as_of: date | None = None
        for symbol in symbols:
            rows = self.feature_rows(symbol)
            if len(rows) < WINDOW_LEN:
                log.warning("%s: not enough feature history for a window", symbol)
                continue
            window = np.array([r.values() for r in rows[-WINDOW_LEN:]], dtype=np.float64)
            windows.append(self.bundle.scaler.transform_window(window))
            kept.append(symbol)
            last_bar = self.cache.load(symbol).last_date()
            if as_of is None or (last_bar is not None and last_bar > as_of):
                as_of = last_bar
        if not kept or as_of is None:
            raise SnapshotError("no symbols with enough history to predict")

        x = np.stack(windows).astype(np.float32)
        flat = x.reshape(len(x), -1).astype(np.float64)
        scaler = self.bundle.scaler
        tf_raw = scaler.inverse_target(self.bundle.transformer.predict(x).astype(np.float64))
        lstm_raw = scaler.inverse_target(self.bundle.lstm.predict(x).astype(np.float64))
        gbt_raw = scaler.inverse_target(self.bundle.gbt.predict(flat))
        ens = ensemble_predict([tf_raw, lstm_raw, gbt_raw])

        order = sorted(range(len(kept)), key=lambda i: (-ens[i], kept[i]))
        records = tuple(
            PredictionEntry(
                symbol=kept[i],
                predicted_return=float(ens[i]),
                rank=rank,
                transformer=float(tf_raw[i]),
                lstm=float(lstm_raw[i]),
                gbt=float(gbt_raw[i]),
                ensemble=float(ens[i]),
            )
            for rank, i in enumerate(order, start=1)
        )
        return PredictionSnapshot(
            as_of=as_of,
            target_date=next_trading_date(as_of, self.holidays),
            records=records,
            model_digests=dict(self.bundle.digests),
        )
