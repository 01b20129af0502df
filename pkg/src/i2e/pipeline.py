"""End-to-end orchestration: ingest -> featurize -> train -> evaluate -> backtest.

Every step reads/writes under the run's out_dir so any prefix of the chain
can be re-run; all randomness flows from the config seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from . import gbt as gbt_mod
from .config import ConfigError, RunConfig, write_manifest
from .dataset import (
    DateInterval,
    Sample,
    SplitSpec,
    apply_scaler,
    class_weights,
    fit_scaler,
    load_dataset,
    make_windows_for_symbol,
    save_dataset,
    scaler_to_json,
    split_by_date,
    synth_market,
    to_arrays,
)
from .evaluation import (
    BacktestReport,
    backtest as run_backtest,
    classification_metrics,
    regression_metrics,
    write_report_csv,
    write_report_json,
    write_weekly_csv,
)
from .forecasters import (
    ModelConfig,
    TrainParams,
    TrainRun,
    build,
    ensemble_predict,
    freeze_backbone,
    load_weights,
    model_from_weights,
    save_weights,
    swap_head,
    train,
    transfer_init,
)
from .indicators import IndicatorWindows, compute_features, write_feature_csv
from .market_data import BarCache, TickerSeries, Universe, build_universe, exclude_first_year, load_csv
from .snapshot import ModelBundle, PredictionSnapshot, SnapshotBuilder

log = logging.getLogger(__name__)


class PipelineError(Exception):
    pass


@dataclass
class Paths:
    root: Path
    cache: Path

    @property
    def features(self) -> Path:
        return self.root / "features"

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def reports(self) -> Path:
        return self.root / "reports"


def paths_for(config: RunConfig) -> Paths:
    """Cache location: I2E_CACHE_DIR env wins, then data.cache_dir under out_dir."""
    import os

    from .market_data import CACHE_DIR_ENV

    root = config.out_path()
    env_cache = os.environ.get(CACHE_DIR_ENV)
    if env_cache:
        cache = Path(env_cache)
    else:
        configured = Path(config.data.cache_dir)
        cache = configured if configured.is_absolute() else root / configured
    return Paths(root, cache)


def indicator_windows(config: RunConfig) -> IndicatorWindows:
    f = config.features
    return IndicatorWindows(stoch_k=f.stoch_k_window, rsi=f.rsi_window, roc=f.roc_lag)


# ---------------------------------------------------------------------------
# ingest


def ingest(config: RunConfig, client=None) -> dict:
    """Populate the bar cache from the configured source; returns counts."""
    paths = paths_for(config)
    cache = BarCache(paths.cache)
    data = config.data
    failed: dict[str, str] = {}
    if data.source == "synth":
        universe, index_series = synth_market(
            data.synth.n_stocks, data.synth.n_days, config.seed, noise_scale=data.synth.noise_scale,
            index_symbol=data.index_symbol,
        )
        for symbol in universe.symbols():
            cache.save(universe.series_by_symbol[symbol])
        cache.save(index_series)
        n_loaded = len(universe.symbols())
    elif data.source == "csv":
        if not data.csv_dir:
            raise ConfigError("data.csv_dir required for csv source")
        csv_dir = Path(data.csv_dir)
        files = sorted(csv_dir.glob("*.csv"))
        if not files:
            raise PipelineError(f"no CSV files in {csv_dir}")
        n_loaded = 0
        for path in files:
            series = load_csv(path)
            cache.save(series)
            n_loaded += 1
        n_loaded -= 1 if (csv_dir / f"{data.index_symbol}.csv").exists() else 0
    elif data.source == "http":
        if not data.symbols:
            raise ConfigError("data.symbols required for http source")
        result = build_universe(
            data.symbols, data.start_date(), data.end_date(),
            base_url=data.base_url, client=client, cache=cache,
        )
        failed = result.failed
        if result.universe is None:
            raise PipelineError(f"every symbol failed: {failed}")
        from .market_data import fetch_history

        index_series = fetch_history(
            data.index_symbol, data.start_date(), data.end_date(), base_url=data.base_url, client=client
        )
        cache.save(index_series)
        n_loaded = len(result.universe.symbols())
    else:
        raise ConfigError(f"unknown data source {data.source!r}")
    write_manifest(config, "ingest", {"loaded": n_loaded, "failed": failed})
    return {"loaded": n_loaded, "failed": failed}


def load_universe(config: RunConfig) -> tuple[Universe, TickerSeries]:
    """Read stock universe + index series back from the cache."""
    paths = paths_for(config)
    cache = BarCache(paths.cache)
    manifest = cache.read_manifest()
    if not manifest:
        raise PipelineError("cache is empty; run ingest first")
    index_symbol = config.data.index_symbol.upper()
    members = []
    index_series = None
    for symbol in sorted(manifest):
        series = cache.load(symbol)
        if symbol == index_symbol:
            index_series = series
        else:
            members.append(series)
    if index_series is None:
        raise PipelineError(f"index series {config.data.index_symbol} missing from cache")
    return Universe.from_series(members), index_series


def coverage_csv(config: RunConfig, out_path: Path | str | None = None) -> Path:
    """Figure-1-style histogram: records per date across the universe."""
    from .market_data import coverage_histogram

    universe, _ = load_universe(config)
    hist = coverage_histogram(universe)
    paths = paths_for(config)
    out = Path(out_path) if out_path else paths.reports / "coverage.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="\n") as fh:
        fh.write("date,records\n")
        for day in sorted(hist):
            fh.write(f"{day.isoformat()},{hist[day]}\n")
    return out


# ---------------------------------------------------------------------------
# featurize


def _series_samples(symbol: str, series: TickerSeries, windows: IndicatorWindows, drop_first_year: bool) -> list[Sample]:
    from .indicators import intraday_return

    if drop_first_year:
        series = exclude_first_year(series)
    if len(series) == 0:
        return []
    features = compute_features(series, windows)
    returns = [(b.date, intraday_return(b)) for b in series.bars]
    return make_windows_for_symbol(symbol, features, returns)


def _split_spec(config: RunConfig, target_dates: list[date]) -> SplitSpec:
    s = config.split
    if s.mode == "dates":
        return SplitSpec(
            DateInterval(date.fromisoformat(s.train[0]), date.fromisoformat(s.train[1])),
            DateInterval(date.fromisoformat(s.validation[0]), date.fromisoformat(s.validation[1])),
            DateInterval(date.fromisoformat(s.test[0]), date.fromisoformat(s.test[1])),
        )
    if s.mode == "fractions":
        return SplitSpec.from_dates(target_dates, s.train_frac, s.val_frac)
    raise ConfigError(f"unknown split mode {s.mode!r}")


def featurize(config: RunConfig) -> dict:
    """Features + windows + scaling + splits for stocks and the index."""
    paths = paths_for(config)
    universe, index_series = load_universe(config)
    windows = indicator_windows(config)
    drop = config.data.exclude_first_year

    stock_samples: list[Sample] = []
    for symbol in universe.symbols():
        series = universe.series_by_symbol[symbol]
        sym_samples = _series_samples(symbol, series, windows, drop)
        stock_samples.extend(sym_samples)
        if drop and len(series):
            series = exclude_first_year(series)
        write_feature_csv(symbol, compute_features(series, windows), paths.features)
    if not stock_samples:
        raise PipelineError("no stock samples produced; series too short?")

    index_samples = _series_samples(index_series.symbol, index_series, windows, drop)
    write_feature_csv(
        index_series.symbol,
        compute_features(exclude_first_year(index_series) if drop else index_series, windows),
        paths.features,
    )

    spec = _split_spec(config, sorted({s.target_date for s in stock_samples}))
    train_s, val_s, test_s = split_by_date(stock_samples, spec)
    if not train_s or not val_s or not test_s:
        raise PipelineError(
            f"degenerate split: train={len(train_s)} val={len(val_s)} test={len(test_s)}"
        )
    scaler = fit_scaler(train_s)
    save_dataset(paths.data / "train.i2eds", apply_scaler(scaler, train_s), scaler)
    save_dataset(paths.data / "val.i2eds", apply_scaler(scaler, val_s), scaler)
    save_dataset(paths.data / "test.i2eds", apply_scaler(scaler, test_s), scaler)
    scaler_to_json(scaler, paths.models / "scaler.json")

    idx_train, idx_val, _ = split_by_date(index_samples, spec)
    if not idx_train or not idx_val:
        raise PipelineError("index series too short for pretraining partitions")
    idx_scaler = fit_scaler(idx_train)
    save_dataset(paths.data / "index_train.i2eds", apply_scaler(idx_scaler, idx_train), idx_scaler)
    save_dataset(paths.data / "index_val.i2eds", apply_scaler(idx_scaler, idx_val), idx_scaler)
    scaler_to_json(idx_scaler, paths.models / "index_scaler.json")

    counts = {
        "train": len(train_s),
        "val": len(val_s),
        "test": len(test_s),
        "index_train": len(idx_train),
        "index_val": len(idx_val),
    }
    write_manifest(config, "featurize", {"counts": counts, "split": {
        "train": [spec.train.start.isoformat(), spec.train.end.isoformat()],
        "validation": [spec.validation.start.isoformat(), spec.validation.end.isoformat()],
        "test": [spec.test.start.isoformat(), spec.test.end.isoformat()],
    }})
    return counts


# ---------------------------------------------------------------------------
# model training steps


def model_config(config: RunConfig, backbone: str, task: str, seed_offset: int = 0) -> ModelConfig:
    m = config.model
    return ModelConfig(
        backbone=backbone,
        blocks=m.blocks,
        head_widths=tuple(m.head_widths),
        task=task,
        d_model=m.d_model,
        heads=m.heads,
        ffn_hidden=m.ffn_hidden,
        lstm_hidden=m.lstm_hidden,
        seed=config.seed + seed_offset,
    )


def train_params(config: RunConfig) -> TrainParams:
    t = config.train
    return TrainParams(
        lr=t.lr, batch_size=t.batch_size, max_epochs=t.max_epochs, patience=t.patience,
        data_order_seed=config.seed,
    )


def _load_partition(paths: Paths, name: str):
    path = paths.data / f"{name}.i2eds"
    if not path.exists():
        raise PipelineError(f"missing partition {path}; run featurize first")
    return load_dataset(path)


def pretrain(config: RunConfig, backbone: str) -> TrainRun:
    """Classification training on the index series."""
    paths = paths_for(config)
    train_samples, _ = _load_partition(paths, "index_train")
    val_samples, _ = _load_partition(paths, "index_val")
    x_train, _, y_train = to_arrays(train_samples)
    x_val, _, y_val = to_arrays(val_samples)
    model = build(model_config(config, backbone, "classification"))
    weights = class_weights(y_train)
    run = train(model, (x_train, y_train), (x_val, y_val), "weighted_bce", weights, train_params(config))
    out = save_weights(model, paths.models / f"pretrained_{backbone}.i2ew")
    write_manifest(config, f"pretrain_{backbone}", {"run": run.to_dict(), "weights": out.name})
    return run


def finetune(config: RunConfig, backbone: str, from_weights: Path | str, task: str = "classification") -> TrainRun:
    """Fine-tune on individual stocks, from pretrained or classification weights."""
    paths = paths_for(config)
    train_samples, _ = _load_partition(paths, "train")
    val_samples, _ = _load_partition(paths, "val")
    x_train, r_train, y_train = to_arrays(train_samples)
    x_val, r_val, y_val = to_arrays(val_samples)
    source = load_weights(from_weights)

    if task == "classification":
        model = build(model_config(config, backbone, "classification"))
        transfer_init(model, source)
        if config.train.freeze_backbone:
            freeze_backbone(model)
        run = train(
            model, (x_train, y_train), (x_val, y_val), "weighted_bce",
            class_weights(y_train), train_params(config),
        )
    elif task == "regression":
        # Inherit the classification model wholesale, then replace only the
        # output node before continuing on the return-value objective.
        model = model_from_weights(source)
        swap_head(model, "regression", seed=config.seed)
        if config.train.freeze_backbone:
            freeze_backbone(model)
        run = train(model, (x_train, r_train), (x_val, r_val), "mse", schedule=train_params(config))
    else:
        raise ConfigError(f"unknown task {task!r}")
    out = save_weights(model, paths.models / f"{backbone}_{task}.i2ew")
    write_manifest(config, f"finetune_{backbone}_{task}", {"run": run.to_dict(), "weights": out.name})
    return run


def train_gbt(config: RunConfig, task: str = "classification") -> gbt_mod.GbtModel:
    paths = paths_for(config)
    train_samples, _ = _load_partition(paths, "train")
    x_train, r_train, y_train = to_arrays(train_samples, dtype=np.float64)
    flat = x_train.reshape(len(x_train), -1)
    g = config.gbt
    if task == "classification":
        params = gbt_mod.GbtParams(
            n_estimators=g.n_estimators, learning_rate=g.learning_rate, max_depth=g.max_depth,
            colsample_bytree=g.colsample_bytree, max_leaves=g.max_leaves, objective="logistic",
            seed=config.seed,
        )
        w_neg, w_pos = class_weights(y_train)
        sample_w = np.where(y_train == 1, w_pos, w_neg)
        model = gbt_mod.fit(flat, y_train, sample_w, params)
    elif task == "regression":
        params = gbt_mod.GbtParams(
            n_estimators=g.n_estimators, learning_rate=g.learning_rate, max_depth=g.max_depth,
            colsample_bytree=g.colsample_bytree, max_leaves=g.max_leaves, objective="squared",
            seed=config.seed,
        )
        model = gbt_mod.fit(flat, r_train, params=params)
    else:
        raise ConfigError(f"unknown task {task!r}")
    out = gbt_mod.save_model(model, paths.models / f"gbt_{task}.json")
    write_manifest(config, f"train_gbt_{task}", {"model": out.name, "final_loss": model.train_losses[-1]})
    return model


# ---------------------------------------------------------------------------
# evaluation + backtest


def _predict_partition(paths: Paths, partition: str):
    samples, scaler = _load_partition(paths, partition)
    x, r, y = to_arrays(samples)
    flat = x.reshape(len(x), -1).astype(np.float64)
    return samples, scaler, x, flat, r, y


def evaluate(config: RunConfig, partition: str = "test") -> dict:
    """Per-model classification and regression metrics on one partition."""
    paths = paths_for(config)
    samples, scaler, x, flat, r, y = _predict_partition(paths, partition)
    results: dict[str, dict] = {"classification": {}, "regression": {}}

    cls_probs: dict[str, np.ndarray] = {}
    for backbone in ("transformer", "lstm"):
        path = paths.models / f"{backbone}_classification.i2ew"
        if path.exists():
            model = model_from_weights(load_weights(path))
            cls_probs[backbone] = model.predict(x)
    gbt_cls_path = paths.models / "gbt_classification.json"
    if gbt_cls_path.exists():
        cls_probs["gbt"] = gbt_mod.load_model(gbt_cls_path).predict(flat)
    if len(cls_probs) >= 2:
        cls_probs["ensemble"] = ensemble_predict(list(cls_probs.values()))
    for name, probs in cls_probs.items():
        results["classification"][name] = classification_metrics(probs, y).to_dict()

    reg_preds: dict[str, np.ndarray] = {}
    for backbone in ("transformer", "lstm"):
        path = paths.models / f"{backbone}_regression.i2ew"
        if path.exists():
            reg_preds[backbone] = model_from_weights(load_weights(path)).predict(x)
    gbt_reg_path = paths.models / "gbt_regression.json"
    if gbt_reg_path.exists():
        reg_preds["gbt"] = gbt_mod.load_model(gbt_reg_path).predict(flat)
    if len(reg_preds) >= 2:
        reg_preds["ensemble"] = ensemble_predict(list(reg_preds.values()))
    for name, preds in reg_preds.items():
        results["regression"][name] = {
            "mse_scaled": regression_metrics(preds, r),
            "mse_raw": regression_metrics(
                scaler.inverse_target(np.asarray(preds, dtype=np.float64)),
                scaler.inverse_target(r.astype(np.float64)),
            ),
        }

    out = paths.reports / f"evaluate_{partition}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    write_manifest(config, f"evaluate_{partition}", {"report": out.name})
    return results


def backtest(config: RunConfig, partition: str = "test") -> dict[str, BacktestReport]:
    """Ranked k-long/k-short daily backtest for each regression model."""
    paths = paths_for(config)
    samples, scaler, x, flat, r, _ = _predict_partition(paths, partition)

    preds: dict[str, np.ndarray] = {}
    for backbone in ("transformer", "lstm"):
        path = paths.models / f"{backbone}_regression.i2ew"
        if not path.exists():
            raise PipelineError(f"missing {path}; run finetune --task regression")
        scaled = model_from_weights(load_weights(path)).predict(x).astype(np.float64)
        preds[backbone] = scaler.inverse_target(scaled)
    gbt_path = paths.models / "gbt_regression.json"
    if not gbt_path.exists():
        raise PipelineError(f"missing {gbt_path}; run train-gbt --task regression")
    preds["gbt"] = scaler.inverse_target(gbt_mod.load_model(gbt_path).predict(flat))
    preds["ensemble"] = ensemble_predict([preds["transformer"], preds["lstm"], preds["gbt"]])

    realized_raw = scaler.inverse_target(r.astype(np.float64))
    by_date_realized: dict[date, dict[str, float]] = {}
    for i, s in enumerate(samples):
        by_date_realized.setdefault(s.target_date, {})[s.symbol] = float(realized_raw[i])

    reports: dict[str, BacktestReport] = {}
    k = config.backtest.k
    for name, values in preds.items():
        by_date: dict[date, dict[str, float]] = {}
        for i, s in enumerate(samples):
            by_date.setdefault(s.target_date, {})[s.symbol] = float(values[i])
        report = run_backtest(by_date, by_date_realized, k)
        reports[name] = report
        write_report_json(report, paths.reports / f"backtest_{name}.json")
        write_report_csv(report, paths.reports / f"backtest_{name}.csv")
        write_weekly_csv(report, paths.reports / f"backtest_{name}_weekly.csv")
    write_manifest(config, f"backtest_{partition}", {
        "average_returns": {name: rep.average_daily_return for name, rep in reports.items()},
        "k": k,
    })
    return reports


# ---------------------------------------------------------------------------
# prediction snapshot (shared with the HTTP service)


def snapshot_builder(config: RunConfig) -> SnapshotBuilder:
    paths = paths_for(config)
    bundle = ModelBundle.load(paths.models)
    holidays = {date.fromisoformat(d) for d in config.service.holidays}
    return SnapshotBuilder(
        BarCache(paths.cache),
        paths.features,
        bundle,
        indicator_windows(config),
        holidays,
        index_symbol=config.data.index_symbol.upper(),
        drop_first_year=config.data.exclude_first_year,
    )


def predict_next(config: RunConfig) -> PredictionSnapshot:
    return snapshot_builder(config).build()


def run_all(config: RunConfig, backbones: tuple[str, ...] = ("transformer", "lstm")) -> dict[str, BacktestReport]:
    """The full training chain on the configured data source."""
    ingest(config)
    featurize(config)
    paths = paths_for(config)
    for backbone in backbones:
        pretrain(config, backbone)
        finetune(config, backbone, paths.models / f"pretrained_{backbone}.i2ew", "classification")
        finetune(config, backbone, paths.models / f"{backbone}_classification.i2ew", "regression")
    train_gbt(config, "classification")
    train_gbt(config, "regression")
    evaluate(config)
    return backtest(config)
