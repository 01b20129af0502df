"""Differentiable layers used by the sequence forecasters."""

from __future__ import annotations

import numpy as np

from .autograd import (
    Parameter,
    ShapeError,
    Tensor,
    add,
    matmul,
    mean,
    narrow,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    swapaxes,
    tanh,
)

LAYER_NORM_EPS = 1e-5


def _uniform_fan_in(rng: np.random.Generator, d_in: int, shape: tuple[int, ...], dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(d_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b on the trailing dimension."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} incompatible with weight {w.shape}")
    return add(matmul(x, w), b)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-vector standardization over the last axis, then affine."""
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    inv = power(var + eps, -0.5)
    return centered * inv * gain + bias


def positional_encoding(seq_len: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal position table: sin on even dims, cos on odd dims."""
    if d_model % 2 != 0:
        raise ShapeError(f"d_model must be even, got {d_model}")
    positions = np.arange(seq_len, dtype=np.float64)[:, None]
    dims = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = positions / np.power(10_000.0, dims / d_model)
    table = np.empty((seq_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(dtype)


class Dense:
    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        # Bias drawn like the weights: avoids exactly-zero preactivations on
        # degenerate inputs (dead layers sit at the relu kink otherwise).
        self.w = Parameter(f"{name}.W", _uniform_fan_in(rng, d_in, (d_in, d_out), dtype))
        self.b = Parameter(f"{name}.b", _uniform_fan_in(rng, d_in, (d_out,), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.w.tensor, self.b.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


class LayerNorm:
    def __init__(self, name: str, d: int, dtype=np.float32):
        self.gain = Parameter(f"{name}.gain", np.ones(d, dtype=dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(d, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain.tensor, self.bias.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.gain, self.bias]


class MultiHeadAttention:
    """Bidirectional scaled dot-product self-attention (no causal mask)."""

    def __init__(self, name: str, d_model: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if d_model % heads != 0:
            raise ShapeError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.wq = Dense(f"{name}.q", d_model, d_model, rng, dtype)
        self.wk = Dense(f"{name}.k", d_model, d_model, rng, dtype)
        self.wv = Dense(f"{name}.v", d_model, d_model, rng, dtype)
        self.out = Dense(f"{name}.out", d_model, d_model, rng, dtype)

    def _split_heads(self, x: Tensor, batch: int, seq: int) -> Tensor:
        return swapaxes(reshape(x, (batch, seq, self.heads, self.d_head)), 1, 2)

    def _attend(self, x: Tensor) -> tuple[Tensor, Tensor]:
        batch, seq, _ = x.shape
        q = self._split_heads(self.wq(x), batch, seq)  # (B, H, T, dh)
        k = self._split_heads(self.wk(x), batch, seq)
        v = self._split_heads(self.wv(x), batch, seq)
        scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(self.d_head))
        weights = softmax(scores, axis=-1)  # (B, H, T, T)
        context = matmul(weights, v)
        merged = reshape(swapaxes(context, 1, 2), (batch, seq, self.d_model))
        return self.out(merged), weights

    def __call__(self, x: Tensor) -> Tensor:
        out, _ = self._attend(x)
        return out

    def attention_weights(self, x: Tensor) -> np.ndarray:
        """(B, H, T, T) softmax weights, for inspection and invariants."""
        _, weights = self._attend(x)
        return weights.values

    def parameters(self) -> list[Parameter]:
        return self.wq.parameters() + self.wk.parameters() + self.wv.parameters() + self.out.parameters()


class FeedForward:
    def __init__(self, name: str, d_model: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Dense(f"{name}.fc1", d_model, hidden, rng, dtype)
        self.fc2 = Dense(f"{name}.fc2", hidden, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))

    def parameters(self) -> list[Parameter]:
        return self.fc1.parameters() + self.fc2.parameters()


class TransformerBlock:
    """Pre-norm residual block: x + MHA(LN(x)), then + FFN(LN(.))."""

    def __init__(self, name: str, d_model: int, heads: int, ffn_hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.ln1 = LayerNorm(f"{name}.ln1", d_model, dtype)
        self.attn = MultiHeadAttention(f"{name}.attn", d_model, heads, rng, dtype)
        self.ln2 = LayerNorm(f"{name}.ln2", d_model, dtype)
        self.ffn = FeedForward(f"{name}.ffn", d_model, ffn_hidden, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = x + self.attn(self.ln1(x))
        return h + self.ffn(self.ln2(h))

    def parameters(self) -> list[Parameter]:
        return self.ln1.parameters() + self.attn.parameters() + self.ln2.parameters() + self.ffn.parameters()


class LSTMLayer:
    """Single LSTM layer returning the full hidden sequence.

    Gate layout along the 4h axis is [input, forget, cell, output]; the
    forget-gate bias starts at 1 to keep early memory open.
    """

    def __init__(self, name: str, d_in: int, d_hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.d_hidden = d_hidden
        self.wx = Parameter(f"{name}.wx", _uniform_fan_in(rng, d_in, (d_in, 4 * d_hidden), dtype))
        self.wh = Parameter(f"{name}.wh", _uniform_fan_in(rng, d_hidden, (d_hidden, 4 * d_hidden), dtype))
        bias = np.zeros(4 * d_hidden, dtype=dtype)
        bias[d_hidden : 2 * d_hidden] = 1.0
        self.b = Parameter(f"{name}.b", bias)

    def __call__(self, x: Tensor) -> Tensor:
        batch, seq, _ = x.shape
        h_dim = self.d_hidden
        dtype = x.values.dtype
        h = Tensor(np.zeros((batch, h_dim), dtype=dtype))
        c = Tensor(np.zeros((batch, h_dim), dtype=dtype))
        hiddens: list[Tensor] = []
        for t in range(seq):
            x_t = reshape(narrow(x, 1, t, t + 1), (batch, x.shape[-1]))
            z = matmul(x_t, self.wx.tensor) + matmul(h, self.wh.tensor) + self.b.tensor
            i_gate = sigmoid(narrow(z, -1, 0, h_dim))
            f_gate = sigmoid(narrow(z, -1, h_dim, 2 * h_dim))
            g_cell = tanh(narrow(z, -1, 2 * h_dim, 3 * h_dim))
            o_gate = sigmoid(narrow(z, -1, 3 * h_dim, 4 * h_dim))
            c = f_gate * c + i_gate * g_cell
            h = o_gate * tanh(c)
            hiddens.append(h)
        return stack(hiddens, axis=1)  # (B, T, h)

    def parameters(self) -> list[Parameter]:
        return [self.wx, self.wh, self.b]
