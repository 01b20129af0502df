"""Sequence forecasters: build, train, transfer weights, swap heads, persist."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import WINDOW_LEN, N_FEATURES
from .nn.autograd import Parameter, Tensor, relu, reshape
from .nn.layers import Dense, LSTMLayer, TransformerBlock, positional_encoding
from .nn.losses import bce_with_logits, mse_loss
from .nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)

WEIGHTS_VERSION = 1
WEIGHTS_SUFFIX = ".i2ew"

BACKBONES = ("transformer", "lstm")
TASKS = ("classification", "regression")


class ModelError(Exception):
    pass


class WeightsError(ModelError):
    pass


class TransferError(ModelError):
    def __init__(self, message: str, mismatches: list[str] | None = None):
        super().__init__(message)
        self.mismatches = mismatches or []


class TrainingDiverged(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "transformer"
    blocks: int = 4
    head_widths: tuple[int, ...] = (128, 64, 32)
    task: str = "classification"
    d_model: int = 64
    heads: int = 4
    ffn_hidden: int = 128
    lstm_hidden: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.backbone not in BACKBONES:
            raise ModelError(f"unknown backbone {self.backbone!r}")
        if self.task not in TASKS:
            raise ModelError(f"unknown task {self.task!r}")
        if self.blocks < 1:
            raise ModelError("block count must be >= 1")
        if not self.head_widths or any(w < 1 for w in self.head_widths):
            raise ModelError(f"invalid head widths {self.head_widths}")

    def backbone_signature(self) -> tuple:
        return (self.backbone, self.blocks, self.d_model, self.heads, self.ffn_hidden, self.lstm_hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_widths"] = list(self.head_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["head_widths"] = tuple(d.get("head_widths", (128, 64, 32)))
        return cls(**d)


class SequenceModel:
    """Backbone over (B, 10, 15) windows plus a dense head to one output node.

    Classification heads read out through a sigmoid at prediction time;
    training always consumes raw logits.
    """

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)
        self._build_backbone(rng)
        self._build_head(rng)

    def _build_backbone(self, rng: np.random.Generator) -> None:
        cfg = self.config
        if cfg.backbone == "transformer":
            self.input_proj = Dense("input_proj", N_FEATURES, cfg.d_model, rng, self.dtype)
            self.pos_table = positional_encoding(WINDOW_LEN, cfg.d_model, self.dtype)
            self.blocks = [
                TransformerBlock(f"block{i}", cfg.d_model, cfg.heads, cfg.ffn_hidden, rng, self.dtype)
                for i in range(cfg.blocks)
            ]
            self._backbone_out_dim = WINDOW_LEN * cfg.d_model
        else:
            self.lstm_layers = [
                LSTMLayer(f"lstm{i}", N_FEATURES if i == 0 else cfg.lstm_hidden, cfg.lstm_hidden, rng, self.dtype)
                for i in range(cfg.blocks)
            ]
            self._backbone_out_dim = WINDOW_LEN * cfg.lstm_hidden

    def _build_head(self, rng: np.random.Generator) -> None:
        widths = self.config.head_widths
        dims = [self._backbone_out_dim, *widths]
        self.head_layers = [
            Dense(f"head.fc{i}", dims[i], dims[i + 1], rng, self.dtype) for i in range(len(widths))
        ]
        self.out_layer = Dense("head.out", dims[-1], 1, rng, self.dtype)

    def forward(self, x: Tensor) -> Tensor:
        batch = x.shape[0]
        if self.config.backbone == "transformer":
            h = self.input_proj(x) + Tensor(self.pos_table)
            for block in self.blocks:
                h = block(h)
        else:
            h = x
            for layer in self.lstm_layers:
                h = layer(h)
        flat = reshape(h, (batch, self._backbone_out_dim))
        for layer in self.head_layers:
            flat = relu(layer(flat))
        return reshape(self.out_layer(flat), (batch,))

    def backbone_parameters(self) -> list[Parameter]:
        if self.config.backbone == "transformer":
            params = self.input_proj.parameters()
            for block in self.blocks:
                params += block.parameters()
        else:
            params = []
            for layer in self.lstm_layers:
                params += layer.parameters()
        return params

    def parameters(self) -> list[Parameter]:
        params = self.backbone_parameters()
        for layer in self.head_layers:
            params += layer.parameters()
        params += self.out_layer.parameters()
        return params

    def param_map(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def predict_logits(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        pieces = []
        for start in range(0, len(x), batch_size):
            pieces.append(self.forward(Tensor(x[start : start + batch_size])).values)
        return np.concatenate(pieces) if pieces else np.empty(0, dtype=self.dtype)

    def predict(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        """Probabilities for classification, scaled returns for regression."""
        from .nn.autograd import stable_sigmoid

        logits = self.predict_logits(x, batch_size)
        if self.config.task == "classification":
            return stable_sigmoid(logits)
        return logits


def build(config: ModelConfig, dtype=np.float32) -> SequenceModel:
    return SequenceModel(config, dtype)


def parameter_count(model: SequenceModel) -> int:
    return sum(p.values.size for p in model.parameters())


def param_digests(model: SequenceModel) -> dict[str, str]:
    return {
        p.name: hashlib.sha256(np.ascontiguousarray(p.values).tobytes()).hexdigest()
        for p in model.parameters()
    }


def model_digest(model: SequenceModel) -> str:
    h = hashlib.sha256()
    for p in sorted(model.parameters(), key=lambda p: p.name):
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    data_order_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainRun:
    config: ModelConfig
    partitions: dict[str, int]
    epoch_log: list[dict] = field(default_factory=list)
    early_stop_epoch: int = 0
    weights_digest: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "partitions": self.partitions,
            "epoch_log": self.epoch_log,
            "early_stop_epoch": self.early_stop_epoch,
            "weights_digest": self.weights_digest,
            "seed": self.seed,
        }


def _epoch_losses(model, x, y, weights, loss_kind, batch_size):
    total = 0.0
    for start in range(0, len(x), batch_size):
        xb = x[start : start + batch_size]
        yb = y[start : start + batch_size]
        logits = model.forward(Tensor(xb))
        if loss_kind == "weighted_bce":
            wb = weights[start : start + batch_size] if weights is not None else None
            batch_loss = bce_with_logits(logits, yb, wb)
        else:
            batch_loss = mse_loss(logits, yb)
        total += float(batch_loss.values) * len(xb)
    return total / len(x)


def train(
    model: SequenceModel,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    loss_kind: str,
    class_weights: tuple[float, float] | None = None,
    schedule: TrainParams | None = None,
) -> TrainRun:
    """Minibatch Adam with early stopping on validation loss.

    Classification requires class weights; the data order is a pure function
    of (data_order_seed, epoch) so paired experiment arms can share it.
    """
    schedule = schedule or TrainParams()
    x_train, y_train = train_data
    x_val, y_val = val_data
    x_train = np.asarray(x_train, dtype=model.dtype)
    y_train = np.asarray(y_train, dtype=model.dtype)
    x_val = np.asarray(x_val, dtype=model.dtype)
    y_val = np.asarray(y_val, dtype=model.dtype)

    if loss_kind == "weighted_bce":
        if class_weights is None:
            raise ModelError("classification training requires class weights")
        w_neg, w_pos = class_weights
        sample_w = np.where(y_train == 1, w_pos, w_neg).astype(model.dtype)
        val_w = np.where(y_val == 1, w_pos, w_neg).astype(model.dtype)
    elif loss_kind == "mse":
        sample_w = None
        val_w = None
    else:
        raise ModelError(f"unknown loss kind {loss_kind!r}")

    params = model.parameters()
    opt_state = AdamState()
    run = TrainRun(
        config=model.config,
        partitions={"train": len(x_train), "validation": len(x_val)},
        seed=schedule.data_order_seed,
    )
    best_val = np.inf
    best_epoch = 0
    best_values: dict[str, np.ndarray] = {}
    since_best = 0

    for epoch in range(1, schedule.max_epochs + 1):
        order = np.random.default_rng([schedule.data_order_seed, epoch]).permutation(len(x_train))
        train_total = 0.0
        for batch_no, start in enumerate(range(0, len(order), schedule.batch_size)):
            idx = order[start : start + schedule.batch_size]
            logits = model.forward(Tensor(x_train[idx]))
            if loss_kind == "weighted_bce":
                batch_loss = bce_with_logits(logits, y_train[idx], sample_w[idx])
            else:
                batch_loss = mse_loss(logits, y_train[idx])
            loss_value = float(batch_loss.values)
            if not np.isfinite(loss_value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {batch_no}")
            for p in params:
                p.zero_grad()
            batch_loss.backward()
            grads = {p.name: p.tensor.grad for p in params if p.tensor.grad is not None}
            adam_step(params, grads, opt_state, schedule.lr, schedule.beta1, schedule.beta2, schedule.eps)
            train_total += loss_value * len(idx)
        train_loss = train_total / len(x_train)
        val_loss = _epoch_losses(model, x_val, y_val, val_w, loss_kind, schedule.batch_size)
        run.epoch_log.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_values = {p.name: p.values.copy() for p in params}
            since_best = 0
        else:
            since_best += 1
            if since_best >= schedule.patience:
                break

    if best_values:
        for p in params:
            p.values = best_values[p.name]
    run.early_stop_epoch = best_epoch
    run.weights_digest = model_digest(model)
    return run


# ---------------------------------------------------------------------------
# Transfer, head swap, ensembling


@dataclass
class ModelWeights:
    version: int
    config: ModelConfig
    params: dict[str, np.ndarray]
    digest: str


def snapshot_weights(model: SequenceModel) -> ModelWeights:
    params = {p.name: p.values.copy() for p in model.parameters()}
    return ModelWeights(WEIGHTS_VERSION, model.config, params, _payload_digest(params))


def transfer_init(model: SequenceModel, source: ModelWeights) -> list[str]:
    """Copy every matching parameter from `source`; any mismatch is an error.

    Returns the copied names. The backbone configurations must agree; name or
    shape mismatches (extra, missing, or reshaped parameters) abort with the
    full offender list so nothing is silently skipped.
    """
    if model.config.backbone_signature() != source.config.backbone_signature():
        raise TransferError(
            f"backbone mismatch: {model.config.backbone_signature()} vs {source.config.backbone_signature()}"
        )
    targets = model.param_map()
    mismatches = []
    for name, values in source.params.items():
        if name not in targets:
            mismatches.append(f"{name}: missing in target")
        elif targets[name].values.shape != values.shape:
            mismatches.append(f"{name}: shape {values.shape} vs target {targets[name].values.shape}")
    for name in targets:
        if name not in source.params:
            mismatches.append(f"{name}: missing in source")
    if mismatches:
        raise TransferError(f"transfer mismatch for {len(mismatches)} parameters", mismatches)
    for name, values in source.params.items():
        targets[name].values = values.copy()
    return sorted(source.params)


def freeze_backbone(model: SequenceModel, frozen: bool = True) -> SequenceModel:
    """Mark backbone parameters (not the head) as non-trainable."""
    for p in model.backbone_parameters():
        p.trainable = not frozen
        p.tensor.requires_grad = not frozen
    return model


def swap_head(model: SequenceModel, new_task: str, seed: int | None = None) -> SequenceModel:
    """Re-initialize only the single output node for the other task.

    Every other parameter (backbone and intermediate head layers) is left
    bitwise untouched. Swapping to the model's current task is a warned no-op.
    """
    if new_task not in TASKS:
        raise ModelError(f"unknown task {new_task!r}")
    if new_task == model.config.task:
        log.warning("swap_head: model already configured for %s; no-op", new_task)
        return model
    rng = np.random.default_rng([model.config.seed if seed is None else seed, 0x5EAD])
    d_in = model.out_layer.w.values.shape[0]
    bound = 1.0 / np.sqrt(d_in)
    model.out_layer.w.values = rng.uniform(-bound, bound, size=(d_in, 1)).astype(model.dtype)
    model.out_layer.b.values = rng.uniform(-bound, bound, size=1).astype(model.dtype)
    model.config = replace(model.config, task=new_task)
    return model


def ensemble_predict(predictions: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean over per-model prediction vectors.

    Computed as first + mean(member - first): exact when all members agree
    and better conditioned than a raw sum.
    """
    if not predictions:
        raise ModelError("ensemble needs at least one member")
    lengths = {len(p) for p in predictions}
    if len(lengths) != 1:
        raise ModelError(f"ensemble member lengths differ: {sorted(lengths)}")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in predictions])
    return stacked[0] + np.mean(stacked - stacked[0], axis=0)


# ---------------------------------------------------------------------------
# Weight file format:
#   u32 little-endian header length, then that many bytes of UTF-8 JSON:
#     {version, config, digest_algorithm, digest, params: [{name, shape,
#      offset, nbytes}]}
#   then the payload: each parameter's float32 values, little-endian,
#   C-order, at its stated offset. The digest is SHA-256 over the payload.


def _payload_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in params:
        h.update(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    return h.hexdigest()


def save_weights(model: SequenceModel, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = []
    blocks = []
    offset = 0
    for p in model.parameters():
        raw = np.ascontiguousarray(p.values, dtype="<f4").tobytes()
        manifest.append({"name": p.name, "shape": list(p.values.shape), "offset": offset, "nbytes": len(raw)})
        blocks.append(raw)
        offset += len(raw)
    payload = b"".join(blocks)
    header = {
        "version": WEIGHTS_VERSION,
        "config": model.config.to_dict(),
        "digest_algorithm": "sha256",
        "digest": hashlib.sha256(payload).hexdigest(),
        "params": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    return path


def load_weights(path: Path | str, expect_config: ModelConfig | None = None) -> ModelWeights:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4:
        raise WeightsError(f"{path}: truncated file")
    (header_len,) = struct.unpack_from("<I", blob, 0)
    if len(blob) < 4 + header_len:
        raise WeightsError(f"{path}: truncated header")
    try:
        header = json.loads(blob[4 : 4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsError(f"{path}: unreadable header: {exc}") from exc
    if header.get("version") != WEIGHTS_VERSION:
        raise WeightsError(f"{path}: unsupported version {header.get('version')}")
    if header.get("digest_algorithm") != "sha256":
        raise WeightsError(f"{path}: unknown digest algorithm")
    payload = blob[4 + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["digest"]:
        raise WeightsError(f"{path}: payload digest mismatch")
    config = ModelConfig.from_dict(header["config"])
    if expect_config is not None and config != expect_config:
        raise WeightsError(f"{path}: config echo mismatch: {config} vs expected {expect_config}")
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise WeightsError(f"{path}: truncated payload for {entry['name']}")
        flat = np.frombuffer(payload[start : start + nbytes], dtype="<f4")
        params[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float32)
    return ModelWeights(header["version"], config, params, header["digest"])


def model_from_weights(weights: ModelWeights, dtype=np.float32) -> SequenceModel:
    model = build(weights.config, dtype)
    targets = model.param_map()
    missing = [n for n in targets if n not in weights.params]
    extra = [n for n in weights.params if n not in targets]
    if missing or extra:
        raise WeightsError(f"weights do not match config: missing={missing} extra={extra}")
    for name, values in weights.params.items():
        if targets[name].values.shape != values.shape:
            raise WeightsError(f"{name}: shape {values.shape} != expected {targets[name].values.shape}")
        targets[name].values = values.astype(dtype)
    return model
