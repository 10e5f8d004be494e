"""Minimal reverse-mode differentiable core (numpy, float64)."""

from . import ops
from .gradcheck import GradCheckReport, grad_check
from .lstm import LstmCellParams, bilstm_sum, lstm_cell_step, lstm_sequence, lstm_sequence_unrolled
from .ops import (
    BatchNormState,
    batch_norm,
    bce_with_logits,
    concat,
    conv1d,
    dropout,
    maxpool1d,
    mse_with_logits,
    relu,
    sigmoid,
    tanh,
    track_kinks,
    upsample2,
    upsample2_conv1x1,
)
from .params import ParameterStore, adam_step, layer_rng
from .tensor import Tensor, no_grad

__all__ = [
    "BatchNormState",
    "GradCheckReport",
    "LstmCellParams",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "batch_norm",
    "bce_with_logits",
    "bilstm_sum",
    "concat",
    "conv1d",
    "dropout",
    "grad_check",
    "layer_rng",
    "lstm_cell_step",
    "lstm_sequence",
    "lstm_sequence_unrolled",
    "maxpool1d",
    "mse_with_logits",
    "no_grad",
    "ops",
    "relu",
    "sigmoid",
    "tanh",
    "track_kinks",
    "upsample2",
    "upsample2_conv1x1",
]
