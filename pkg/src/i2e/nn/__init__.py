"""Minimal reverse-mode-differentiable numeric core."""

from .autograd import Parameter, ShapeError, Tensor
from .gradcheck import GradientCheckError, gradient_check
from .layers import (
    Dense,
    FeedForward,
    LayerNorm,
    LSTMLayer,
    MultiHeadAttention,
    TransformerBlock,
    activation,
    dense,
    layer_norm,
    positional_encoding,
)
from .losses import bce_with_logits, loss, mse, mse_loss, weighted_bce
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "Dense",
    "FeedForward",
    "GradientCheckError",
    "LayerNorm",
    "LSTMLayer",
    "MultiHeadAttention",
    "Parameter",
    "ShapeError",
    "Tensor",
    "TransformerBlock",
    "activation",
    "adam_step",
    "bce_with_logits",
    "dense",
    "gradient_check",
    "layer_norm",
    "loss",
    "mse",
    "mse_loss",
    "positional_encoding",
    "weighted_bce",
]
