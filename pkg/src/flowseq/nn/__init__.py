"""Small float64 autodiff core used by the sequence classifier."""

from .layers import (GATES, ConvLSTMCellParams, LSTMCellParams, convlstm_step,
                     convlstm_step_projected, lstm_step, lstm_step_projected,
                     xavier_uniform)
from .optim import Adam, AdamState, adam_update
from .tensor import (NonFiniteError, Tensor, add, as_tensor, backward, blend,
                     conv1d_same, dropout, getitem, l2_normalize, linear,
                     log_softmax, masked_nll, maxpool1d, mul, neg, no_grad,
                     parameter, reshape, scale, sigmoid, softmax, stack, sub,
                     sum_squares, tanh)

__all__ = [
    "GATES", "ConvLSTMCellParams", "LSTMCellParams", "convlstm_step", "convlstm_step_projected",
    "lstm_step", "lstm_step_projected", "xavier_uniform", "Adam", "AdamState", "adam_update",
    "NonFiniteError", "Tensor", "add", "as_tensor", "backward", "blend", "conv1d_same",
    "dropout", "getitem", "l2_normalize", "linear", "log_softmax", "masked_nll", "maxpool1d",
    "mul", "neg", "no_grad", "parameter", "reshape", "scale", "sigmoid", "softmax", "stack",
    "sub", "sum_squares", "tanh",
]
