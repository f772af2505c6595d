"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Only the operator set the sequence model needs is provided. Each op builds
an output ``Tensor`` whose ``_backward`` closure pushes ``out.grad`` into
the parents' gradient buffers; :func:`backward` walks the tape in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Skip tape construction (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 _parents: tuple = (), _backward: Optional[Callable[[], None]] = None,
                 op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values produced by {op}{' ' + name if name else ''}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}{', ' + self.name if self.name else ''})"

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __neg__(self): return neg(self)
    def __getitem__(self, idx): return getitem(self, idx)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_factory, op: str) -> Tensor:
    parents = tuple(parents)
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, op=op, _parents=parents if track else ())
    if track:
        out._backward = backward_factory(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
            if node._parents:
                node.grad = None     # free intermediate buffers
    for node in order:
        if node.grad is not None and not np.isfinite(node.grad).all():
            bad = int((~np.isfinite(node.grad)).sum())
            raise NonFiniteError(f"{bad} non-finite gradient entries in {node!r}")


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(out):
        def f():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(out.grad, b.shape))
        return f
    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(out):
        def f():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-out.grad, b.shape))
        return f
    return _make(a.data - b.data, (a, b), bw, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda out: lambda: a._accum(-out.grad), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(out):
        def f():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(out.grad * a.data, b.shape))
        return f
    return _make(a.data * b.data, (a, b), bw, "mul")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids overflow in exp for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda out: lambda: a._accum(out.grad * y * (1.0 - y)), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda out: lambda: a._accum(out.grad * (1.0 - y * y)), "tanh")


def blend(mask: np.ndarray, new: Tensor, old: Tensor) -> Tensor:
    """``mask * new + (1 - mask) * old`` with a constant 0/1 mask."""
    m = np.asarray(mask, dtype=np.float64)
    new, old = as_tensor(new), as_tensor(old)

    def bw(out):
        def f():
            if new.requires_grad:
                new._accum(_unbroadcast(out.grad * m, new.shape))
            if old.requires_grad:
                old._accum(_unbroadcast(out.grad * (1.0 - m), old.shape))
        return f
    return _make(m * new.data + (1.0 - m) * old.data, (new, old), bw, "blend")


# ---------------------------------------------------------------------------
# shape

def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def bw(out):
        def f():
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            if basic:
                a.grad[idx] += out.grad      # basic indices never repeat
            else:
                np.add.at(a.grad, idx, out.grad)
        return f
    return _make(a.data[idx], (a,), bw, "getitem")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,),
                 lambda out: lambda: a._accum(out.grad.reshape(a.shape)), "reshape")


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]

    def bw(out):
        def f():
            parts = np.moveaxis(out.grad, axis, 0)
            for t, g in zip(ts, parts):
                if t.requires_grad:
                    t._accum(g)
        return f
    return _make(np.stack([t.data for t in ts], axis=axis), ts, bw, "stack")


# ---------------------------------------------------------------------------
# linear algebra

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` over the last axis of x; w is (out, in)."""
    parents = (x, w) if b is None else (x, w, b)
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def bw(out):
        def f():
            g = out.grad
            if x.requires_grad:
                x._accum(g @ w.data)
            if w.requires_grad:
                w._accum(g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]))
            if b is not None and b.requires_grad:
                b._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return f
    return _make(y, parents, bw, "linear")


def _patches(xp: np.ndarray, k: int, length: int) -> np.ndarray:
    """(N, c, L + k - 1) padded input -> (N, c * k, L) columns, channel-major."""
    n, c, _ = xp.shape
    cols = np.empty((n, c, k, length))
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j:j + length]
    return cols.reshape(n, c * k, length)


def conv1d_same(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Zero-padded 'same' 1-D cross-correlation.

    x: (N, c_in, L), w: (c_out, c_in, k) with odd k, b: (c_out,).
    """
    n, c_in, length = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d: input has {c_in} channels, kernel expects {c_in_w}")
    if k % 2 != 1:
        raise ValueError("conv1d_same needs an odd kernel size")
    p = k // 2
    cols = _patches(np.pad(x.data, ((0, 0), (0, 0), (p, p))), k, length)
    w2 = w.data.reshape(c_out, c_in * k)
    y = np.matmul(w2, cols)
    if b is not None:
        y += b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(out):
        def f():
            g = out.grad
            if x.requires_grad:
                gcols = np.matmul(w2.T, g).reshape(n, c_in, k, length)
                gxp = np.zeros((n, c_in, length + 2 * p))
                for j in range(k):
                    gxp[:, :, j:j + length] += gcols[:, :, j, :]
                x._accum(gxp[:, :, p:p + length])
            if w.requires_grad:
                g2 = g.transpose(1, 0, 2).reshape(c_out, n * length)
                c2 = cols.transpose(1, 0, 2).reshape(c_in * k, n * length)
                w._accum((g2 @ c2.T).reshape(w.shape))
            if b is not None and b.requires_grad:
                b._accum(g.sum(axis=(0, 2)))
        return f
    return _make(y, parents, bw, "conv1d")


def maxpool1d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max over windows of the last axis; trailing partial window dropped."""
    length = x.shape[-1]
    n_out = (length - k) // stride + 1
    if n_out < 1:
        raise ValueError(f"maxpool1d: length {length} shorter than kernel {k}")
    starts = np.arange(n_out) * stride
    windows = np.stack([x.data[..., starts + j] for j in range(k)], axis=-1)
    arg = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def bw(out):
        def f():
            g = np.zeros_like(x.data)
            src = starts + arg            # (..., n_out) positions in the input
            np.put_along_axis(g, src, out.grad, axis=-1)
            x._accum(g)
        return f
    return _make(y, (x,), bw, "maxpool1d")


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda out: lambda: x._accum(out.grad * keep), "dropout")


def l2_normalize(x: Tensor, eps: float = 1e-12, axis: int = -1) -> Tensor:
    """``x / (||x||_2 + eps)`` along ``axis``."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = norm + eps
    y = x.data / denom

    def bw(out):
        def f():
            g = out.grad
            dot = (g * x.data).sum(axis=axis, keepdims=True)
            safe = np.where(norm > 0, norm, 1.0)
            corr = np.where(norm > 0, dot / (denom * denom * safe), 0.0)
            x._accum(g / denom - x.data * corr)
        return f
    return _make(y, (x,), bw, "l2_normalize")


def sum_squares(ts: Iterable[Tensor]) -> Tensor:
    ts = list(ts)
    total = sum(float((t.data * t.data).sum()) for t in ts)

    def bw(out):
        def f():
            s = float(out.grad)
            for t in ts:
                if t.requires_grad:
                    t._accum(2.0 * s * t.data)
        return f
    return _make(np.array(total), ts, bw, "sum_squares")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda out: lambda: a._accum(out.grad * c), "scale")


# ---------------------------------------------------------------------------
# classification

def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def masked_nll(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of softmax(logits) over masked positions.

    logits: (..., C); targets: (...) ints; mask: (...) bool.
    """
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_nll: no unmasked positions")
    tgt = np.where(mask, targets, 0).astype(np.int64)
    logp = log_softmax(logits.data)
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def bw(out):
        def f():
            g = np.exp(logp)
            np.put_along_axis(g, tgt[..., None],
                              np.take_along_axis(g, tgt[..., None], axis=-1) - 1.0, axis=-1)
            logits._accum(g * (mask[..., None] * (float(out.grad) / count)))
        return f
    return _make(np.array(loss), (logits,), bw, "masked_nll")
