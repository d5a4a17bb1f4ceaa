"""Minimal reverse-mode differentiation: tensors, dense and LSTM layers, losses, Adam."""

from stepcast.autodiff.gradcheck import GradCheckReport, grad_check
from stepcast.autodiff.layers import (
    LSTMCellParams,
    ParameterSet,
    dense_forward,
    glorot_uniform,
    lstm_forward,
    lstm_sequence,
)
from stepcast.autodiff.losses import bce_loss, mse_loss
from stepcast.autodiff.optim import Adam, NonFiniteGradientError, adam_step, clip_grad_norm
from stepcast.autodiff.tensor import AutodiffStateError, ShapeError, Tensor

__all__ = [
    "Adam",
    "AutodiffStateError",
    "GradCheckReport",
    "LSTMCellParams",
    "NonFiniteGradientError",
    "ParameterSet",
    "ShapeError",
    "Tensor",
    "adam_step",
    "bce_loss",
    "clip_grad_norm",
    "dense_forward",
    "glorot_uniform",
    "grad_check",
    "lstm_forward",
    "lstm_sequence",
    "mse_loss",
]
