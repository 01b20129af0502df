"""Run configuration: one JSON file, strict keys, flag overrides, manifests."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any


class ConfigError(Exception):
    pass


def _check_keys(section: str, raw: dict, allowed: set[str]) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


@dataclass
class SynthConfig:
    n_stocks: int = 20
    n_days: int = 600
    noise_scale: float = 2.0


@dataclass
class DataConfig:
    source: str = "synth"  # synth | csv | http
    base_url: str | None = None
    cache_dir: str = "cache"
    csv_dir: str | None = None
    symbols: list[str] = field(default_factory=list)
    index_symbol: str = "^GSPTSE"
    start: str = "2010-01-01"
    end: str = "2023-12-01"
    exclude_first_year: bool = True
    synth: SynthConfig = field(default_factory=SynthConfig)

    def start_date(self) -> date:
        return date.fromisoformat(self.start)

    def end_date(self) -> date:
        return date.fromisoformat(self.end)


@dataclass
class FeatureConfig:
    stoch_k_window: int = 10
    rsi_window: int = 14
    roc_lag: int = 10


@dataclass
class SplitConfig:
    mode: str = "fractions"  # fractions | dates
    train_frac: float = 0.7
    val_frac: float = 0.15
    train: list[str] = field(default_factory=lambda: ["2010-01-01", "2021-12-31"])
    validation: list[str] = field(default_factory=lambda: ["2022-01-01", "2022-12-31"])
    test: list[str] = field(default_factory=lambda: ["2023-01-01", "2023-12-01"])


@dataclass
class ModelSection:
    blocks: int = 4
    d_model: int = 64
    heads: int = 4
    ffn_hidden: int = 128
    lstm_hidden: int = 64
    head_widths: list[int] = field(default_factory=lambda: [128, 64, 32])


@dataclass
class TrainSection:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    freeze_backbone: bool = False  # fine-tune only the head when set


@dataclass
class GbtSection:
    n_estimators: int = 100
    learning_rate: float = 0.03
    max_depth: int = 9
    colsample_bytree: float = 0.7
    max_leaves: int = 100


@dataclass
class BacktestSection:
    k: int = 5


@dataclass
class ServiceSection:
    host: str = "127.0.0.1"
    port: int = 8000
    holidays: list[str] = field(default_factory=list)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    gbt: GbtSection = field(default_factory=GbtSection)
    backtest: BacktestSection = field(default_factory=BacktestSection)
    service: ServiceSection = field(default_factory=ServiceSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def out_path(self) -> Path:
        return Path(self.out_dir)


_SECTION_TYPES = {
    "data": DataConfig,
    "features": FeatureConfig,
    "split": SplitConfig,
    "model": ModelSection,
    "train": TrainSection,
    "gbt": GbtSection,
    "backtest": BacktestSection,
    "service": ServiceSection,
}


def _build_section(name: str, cls, raw: dict):
    allowed = {f.name for f in fields(cls)}
    _check_keys(name, raw, allowed)
    kwargs = dict(raw)
    if name == "data" and "synth" in kwargs and isinstance(kwargs["synth"], dict):
        _check_keys("data.synth", kwargs["synth"], {f.name for f in fields(SynthConfig)})
        kwargs["synth"] = SynthConfig(**kwargs["synth"])
    return cls(**kwargs)


def config_from_dict(raw: dict) -> RunConfig:
    _check_keys("config", raw, {"seed", "out_dir", *(_SECTION_TYPES)})
    kwargs: dict[str, Any] = {}
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    if "out_dir" in raw:
        kwargs["out_dir"] = str(raw["out_dir"])
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigError(f"section {name!r} must be an object")
            kwargs[name] = _build_section(name, cls, raw[name])
    return RunConfig(**kwargs)


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Load JSON config (or defaults), then apply dotted-key overrides.

    Overrides like {"data.source": "synth", "seed": 3} win over file values,
    matching the flags-beat-file rule.
    """
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} conflicts with config structure")
        node[parts[-1]] = value
    return config_from_dict(raw)


def write_manifest(config: RunConfig, step: str, extra: dict | None = None) -> Path:
    """Persist the fully resolved config (plus step outputs) for reproducibility."""
    out = config.out_path()
    out.mkdir(parents=True, exist_ok=True)
    doc = {"step": step, "config": config.to_dict()}
    if extra:
        doc.update(extra)
    path = out / f"manifest_{step}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
