"""Recurrent cells, initializers and parameter containers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import (Tensor, add, conv1d_same, linear, mul, parameter, sigmoid,
                     tanh)

GATES = ("i", "f", "c", "o")


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator,
                   fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    """Glorot uniform: Var = 2 / (fan_in + fan_out).

    For a 2-D (out, in) matrix the fans are taken from the shape; for a
    conv kernel (c_out, c_in, k) they are c_in*k and c_out*k.
    """
    if fan_in is None or fan_out is None:
        if len(shape) == 2:
            fan_out, fan_in = shape
        elif len(shape) == 3:
            fan_out, fan_in = shape[0] * shape[2], shape[1] * shape[2]
        else:
            raise ValueError(f"cannot infer fans for shape {shape}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class LSTMCellParams:
    """Fused gate weights, rows ordered i, f, c, o.

    w_x: (4h, d), w_h: (4h, h), b: (4h,). ``gate('f')`` returns the
    (W_xf, W_hf, b_f) views.
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h = self.hidden
        s = slice(GATES.index(name) * h, (GATES.index(name) + 1) * h)
        return self.w_x.data[s], self.w_h.data[s], self.b.data[s]

    def tensors(self) -> Iterator[Tensor]:
        yield from (self.w_x, self.w_h, self.b)

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator, prefix: str = "lstm") -> "LSTMCellParams":
        wx = np.concatenate([xavier_uniform((h, d), rng) for _ in GATES])
        wh = np.concatenate([xavier_uniform((h, h), rng) for _ in GATES])
        return cls(parameter(wx, f"{prefix}.w_x"), parameter(wh, f"{prefix}.w_h"),
                   parameter(np.zeros(4 * h), f"{prefix}.b"))

    @classmethod
    def zeros(cls, d: int, h: int) -> "LSTMCellParams":
        return cls(parameter(np.zeros((4 * h, d))), parameter(np.zeros((4 * h, h))),
                   parameter(np.zeros(4 * h)))


def _lstm_update(pre: Tensor, c_prev: Tensor, h: int, axis_slices) -> tuple[Tensor, Tensor]:
    i = sigmoid(pre[axis_slices(0, h)])
    f = sigmoid(pre[axis_slices(h, 2 * h)])
    g = tanh(pre[axis_slices(2 * h, 3 * h)])
    o = sigmoid(pre[axis_slices(3 * h, 4 * h)])
    c = add(mul(f, c_prev), mul(i, g))
    return mul(o, tanh(c)), c


def lstm_step_projected(x_proj: Tensor, h_prev: Tensor, c_prev: Tensor,
                        params: LSTMCellParams) -> tuple[Tensor, Tensor]:
    """One step given the precomputed input projection ``W_x x_t + b`` (B, 4h)."""
    pre = add(x_proj, linear(h_prev, params.w_h))
    return _lstm_update(pre, c_prev, params.hidden, lambda a, b: (Ellipsis, slice(a, b)))


def lstm_step(params: LSTMCellParams, x_t: Tensor, h_prev: Tensor,
              c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """x_t: (B, d); h_prev, c_prev: (B, h)."""
    if x_t.shape[-1] != params.input_dim or h_prev.shape[-1] != params.hidden:
        raise ValueError(f"lstm_step: got x {x_t.shape}, h {h_prev.shape} for "
                         f"d={params.input_dim}, h={params.hidden}")
    return lstm_step_projected(linear(x_t, params.w_x, params.b), h_prev, c_prev, params)


@dataclass
class ConvLSTMCellParams:
    """Gate kernels stacked along output channels in i, f, c, o order.

    w_x: (4c, c_in, k), w_h: (4c, c, k), b: (4c,) broadcast along length.
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @property
    def channels(self) -> int:
        return self.w_h.shape[1]

    @property
    def in_channels(self) -> int:
        return self.w_x.shape[1]

    @property
    def kernel(self) -> int:
        return self.w_x.shape[2]

    def tensors(self) -> Iterator[Tensor]:
        yield from (self.w_x, self.w_h, self.b)

    @classmethod
    def init(cls, c_in: int, c: int, k: int, rng: np.random.Generator,
             prefix: str = "convlstm") -> "ConvLSTMCellParams":
        wx = np.concatenate([xavier_uniform((c, c_in, k), rng) for _ in GATES])
        wh = np.concatenate([xavier_uniform((c, c, k), rng) for _ in GATES])
        return cls(parameter(wx, f"{prefix}.w_x"), parameter(wh, f"{prefix}.w_h"),
                   parameter(np.zeros(4 * c), f"{prefix}.b"))

    @classmethod
    def zeros(cls, c_in: int, c: int, k: int) -> "ConvLSTMCellParams":
        return cls(parameter(np.zeros((4 * c, c_in, k))), parameter(np.zeros((4 * c, c, k))),
                   parameter(np.zeros(4 * c)))


def convlstm_step_projected(x_proj: Tensor, h_prev: Tensor, c_prev: Tensor,
                            params: ConvLSTMCellParams) -> tuple[Tensor, Tensor]:
    """x_proj: (B, 4c, L) = W_x * X_t + b; h_prev, c_prev: (B, c, L)."""
    pre = add(x_proj, conv1d_same(h_prev, params.w_h))
    return _lstm_update(pre, c_prev, params.channels,
                        lambda a, b: (slice(None), slice(a, b), slice(None)))


def convlstm_step(params: ConvLSTMCellParams, x_t: Tensor, h_prev: Tensor,
                  c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """x_t: (B, c_in, L); h_prev, c_prev: (B, c, L)."""
    if len(x_t.shape) != 3 or x_t.shape[1] != params.in_channels:
        raise ValueError(f"convlstm_step: input {x_t.shape} does not have "
                         f"{params.in_channels} channels")
    if h_prev.shape[1] != params.channels or h_prev.shape[2] != x_t.shape[2]:
        raise ValueError(f"convlstm_step: hidden {h_prev.shape} incompatible with input {x_t.shape}")
    return convlstm_step_projected(conv1d_same(x_t, params.w_x, params.b), h_prev, c_prev, params)
