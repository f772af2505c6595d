"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
                lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                eps: float = 1e-8) -> list[np.ndarray]:
    """Return updated copies of ``params``; ``state`` is advanced in place."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new = adam_update([p.data for p in self.params], grads, self.state,
                          self.lr, self.betas, self.eps)
        for p, d in zip(self.params, new):
            p.data = d
