"""Paired pretrain-vs-scratch comparison on the synthetic factor market.

Both arms of each seed share the data, batch order, and schedule; the only
difference is initialization (transferred index weights vs random), so any
gap in validation BCE is attributable to pretraining.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import SplitSpec, apply_scaler, class_weights, fit_scaler, split_by_date, synth_market, to_arrays
from .forecasters import ModelConfig, TrainParams, build, snapshot_weights, train, transfer_init
from .indicators import IndicatorWindows
from .nn.losses import weighted_bce
from .pipeline import _series_samples

log = logging.getLogger(__name__)


@dataclass
class TransferSettings:
    n_stocks: int = 50
    n_days: int = 1500
    noise_scale: float = 2.0
    model: ModelConfig = field(
        default_factory=lambda: ModelConfig(
            backbone="transformer", blocks=2, head_widths=(16, 8, 4), d_model=16, heads=2, ffn_hidden=32
        )
    )
    pretrain_params: TrainParams = field(
        default_factory=lambda: TrainParams(lr=2e-3, batch_size=128, max_epochs=40, patience=10)
    )
    finetune_params: TrainParams = field(
        default_factory=lambda: TrainParams(lr=5e-4, batch_size=256, max_epochs=3, patience=3)
    )
    max_train_samples: int = 18_000
    train_frac: float = 0.7
    val_frac: float = 0.15


@dataclass
class TransferOutcome:
    seed: int
    bce_pretrained: float
    bce_scratch: float
    pretrain_val_bce: float


def _partitioned_arrays(samples, spec: SplitSpec):
    train_s, val_s, _ = split_by_date(samples, spec)
    scaler = fit_scaler(train_s)
    x_tr, _, y_tr = to_arrays(apply_scaler(scaler, train_s))
    x_va, _, y_va = to_arrays(apply_scaler(scaler, val_s))
    return x_tr, y_tr, x_va, y_va


def _val_bce(model, x_val, y_val) -> float:
    return weighted_bce(model.predict(x_val), y_val)


def _stride_subsample(x, y, cap: int):
    if len(x) <= cap:
        return x, y
    stride = int(np.ceil(len(x) / cap))
    return x[::stride], y[::stride]


def run_transfer_pair(seed: int, settings: TransferSettings | None = None) -> TransferOutcome:
    """One seed's paired comparison; returns both arms' validation BCE."""
    settings = settings or TransferSettings()
    universe, index_series = synth_market(
        settings.n_stocks, settings.n_days, seed, noise_scale=settings.noise_scale
    )
    windows = IndicatorWindows()

    index_samples = _series_samples(index_series.symbol, index_series, windows, drop_first_year=False)
    stock_samples = []
    for symbol in universe.symbols():
        stock_samples.extend(
            _series_samples(symbol, universe.series_by_symbol[symbol], windows, drop_first_year=False)
        )
    spec = SplitSpec.from_dates(
        sorted({s.target_date for s in stock_samples}), settings.train_frac, settings.val_frac
    )

    ix_tr, iy_tr, ix_va, iy_va = _partitioned_arrays(index_samples, spec)
    sx_tr, sy_tr, sx_va, sy_va = _partitioned_arrays(stock_samples, spec)
    sx_tr, sy_tr = _stride_subsample(sx_tr, sy_tr, settings.max_train_samples)

    base_cfg = settings.model

    # Pretraining arm: learn index direction, then transfer everything.
    pre_cfg = ModelConfig(**{**base_cfg.to_dict(), "seed": 10_000 + seed, "head_widths": base_cfg.head_widths})
    pre_model = build(pre_cfg)
    pre_sched = TrainParams(**{**settings.pretrain_params.to_dict(), "data_order_seed": 20_000 + seed})
    train(pre_model, (ix_tr, iy_tr), (ix_va, iy_va), "weighted_bce", class_weights(iy_tr), pre_sched)
    pretrain_val_bce = _val_bce(pre_model, ix_va, iy_va)

    stock_weights = class_weights(sy_tr)
    fine_sched = TrainParams(**{**settings.finetune_params.to_dict(), "data_order_seed": seed})

    scratch_cfg = ModelConfig(**{**base_cfg.to_dict(), "seed": seed, "head_widths": base_cfg.head_widths})
    scratch = build(scratch_cfg)
    train(scratch, (sx_tr, sy_tr), (sx_va, sy_va), "weighted_bce", stock_weights, fine_sched)

    finetuned = build(ModelConfig(**{**pre_cfg.to_dict(), "seed": seed, "head_widths": pre_cfg.head_widths}))
    transfer_init(finetuned, snapshot_weights(pre_model))
    train(finetuned, (sx_tr, sy_tr), (sx_va, sy_va), "weighted_bce", stock_weights, fine_sched)

    outcome = TransferOutcome(
        seed=seed,
        bce_pretrained=_val_bce(finetuned, sx_va, sy_va),
        bce_scratch=_val_bce(scratch, sx_va, sy_va),
        pretrain_val_bce=pretrain_val_bce,
    )
    log.info(
        "seed %d: pretrained %.4f vs scratch %.4f (index %.4f)",
        seed, outcome.bce_pretrained, outcome.bce_scratch, outcome.pretrain_val_bce,
    )
    return outcome


def run_transfer_experiment(seeds=range(5), settings: TransferSettings | None = None) -> list[TransferOutcome]:
    return [run_transfer_pair(seed, settings) for seed in seeds]


def median_gap(outcomes: list[TransferOutcome]) -> tuple[float, float]:
    """(median pretrained BCE, median scratch BCE) across seeds."""
    pre = float(np.median([o.bce_pretrained for o in outcomes]))
    scr = float(np.median([o.bce_scratch for o in outcomes]))
    return pre, scr
