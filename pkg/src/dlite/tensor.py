"""Dense tensors with tape-based reverse-mode differentiation.

Arrays are numpy float32 by default. Binary ops never broadcast: operands
must agree exactly, and callers use :func:`expand` / :func:`reshape` to make
shapes line up. Each op that touches a tensor requiring gradients records its
parents and a backward closure; :meth:`Tensor.backward` walks that graph in
reverse topological order.

Float64 tensors are accepted everywhere so gradient checks can run at a
precision where central differences are meaningful.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NumericError",
    "Tensor",
    "add",
    "concat",
    "conv1d",
    "cosine_similarity",
    "expand",
    "gelu",
    "layer_norm",
    "log_sum_exp",
    "matmul",
    "mean",
    "mse",
    "mul",
    "no_grad",
    "reshape",
    "scale",
    "softmax",
    "square",
    "sub",
    "sum",
    "take",
    "transpose",
]

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NumericError(FloatingPointError):
    """A forward pass produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.asarray(arr, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every reachable leaf that requires gradients.

        Leaf gradients accumulate across calls; call ``zero_grad`` to reset.
        """
        if self.data.size != 1 and grad is None:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor requiring gradients")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.data) if grad is None else np.asarray(grad, self.dtype)
        }
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.isfinite(out).all():
        raise NumericError(f"non-finite values produced by {op}")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t._op = op
    t.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if t.requires_grad:
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t._parents = ()
        t._backward = None
    return t


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = a.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = _as_tensor(a)
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    x2 = x * x
    inner = c * (x + k * x2 * x)
    th = np.tanh(inner)
    out = 0.5 * x * (1 + th)

    def backward(g):
        dinner = c * (1 + 3 * k * x2)
        return (g * (0.5 * (1 + th) + 0.5 * x * (1 - th * th) * dinner),)

    return _make(out, (a,), backward, "gelu")


# shape ---------------------------------------------------------------------


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from exc
    src = a.shape
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _make(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def expand(a, shape: Sequence[int]) -> Tensor:
    """Repeat size-1 axes up to ``shape``. Ranks must already match."""
    a = _as_tensor(a)
    shape = tuple(shape)
    if a.ndim != len(shape) or any(s != 1 and s != t for s, t in zip(a.shape, shape)):
        raise DimensionError(f"expand: cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return _make(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),), "expand")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise DimensionError(f"concat: {t.shape} incompatible with {ref.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(out, tensors, backward, "concat")


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim
    if idx.size and (idx.min() < -a.shape[ax] or idx.max() >= a.shape[ax]):
        raise DimensionError(f"take: index out of range for axis {axis} of size {a.shape[ax]}")
    out = np.take(a.data, idx, axis=ax)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, ax, 0)
        gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (full,)

    return _make(out, (a,), backward, "take")


# reductions ----------------------------------------------------------------


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    src = a.shape
    inv = a.dtype.type(1.0 / n)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, src).copy(),)

    return _make(out, (a,), backward, "mean")


def log_sum_exp(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = np.asarray(out_k.squeeze(axis) if axis is not None else out_k.reshape(()))
    soft = e / s

    def backward(g):
        g = np.expand_dims(g, axis) if axis is not None else np.reshape(g, (1,) * x.ndim)
        return (g * soft,)

    return _make(out, (a,), backward, "log_sum_exp")


# linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``(..., n, k) @ (k, m)`` or ``(..., n, k) @ (..., k, m)`` with equal batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} differ")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if shared:
            k, m = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def conv1d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N, C_in, L) with ``w`` (C_out, C_in, K), zero padded."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} and kernel {w.shape} do not conform")
    n, cin, length = x.shape
    cout, _, k = w.shape
    lp = length + 2 * pad
    lout = (lp - k) // stride + 1
    if lout < 1:
        raise DimensionError(f"conv1d: kernel {k} longer than padded input {lp}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    win = (np.arange(lout) * stride)[:, None] + np.arange(k)[None, :]  # (lout, k)
    cols = xp[:, :, win]  # (n, cin, lout, k)
    cols2 = cols.transpose(0, 2, 1, 3).reshape(n * lout, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    out = (cols2 @ wmat.T).reshape(n, lout, cout).transpose(0, 2, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(n * lout, cout)
        gw = (g2.T @ cols2).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(n, lout, cin, k).transpose(0, 2, 1, 3)
        gxp = np.zeros_like(xp)
        span = stride * (lout - 1) + 1
        for j in range(k):
            gxp[:, :, j : j + span : stride] += gcols[:, :, :, j]
        gx = gxp[:, :, pad : pad + length] if pad else gxp
        return np.ascontiguousarray(gx), gw

    return _make(out, (x, w), backward, "conv1d")


# normalisation / probability ----------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


def layer_norm(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise to zero mean, unit variance along ``axis`` (no affine part)."""
    a = _as_tensor(a)
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    out = xc * rstd

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gxm = (g * out).mean(axis=axis, keepdims=True)
        return (rstd * (g - gm - out * gxm),)

    return _make(out, (a,), backward, "layer_norm")


def cosine_similarity(a, b, axis: int = -1, eps: float = 1e-8) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("cosine_similarity", a, b)
    x, y = a.data, b.data
    nx = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    ny = np.sqrt((y * y).sum(axis=axis, keepdims=True))
    denom = np.maximum(nx * ny, x.dtype.type(eps))
    dot = (x * y).sum(axis=axis, keepdims=True)
    out = np.asarray((dot / denom).squeeze(axis))

    def backward(g):
        g = np.expand_dims(g, axis)
        cos = dot / denom
        # eps only clamps degenerate norms; gradient uses the unclamped form
        ga = g * (y / denom - cos * x / np.maximum(nx * nx, eps))
        gb = g * (x / denom - cos * y / np.maximum(ny * ny, eps))
        return ga, gb

    return _make(out, (a, b), backward, "cosine_similarity")


def mse(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mse", a, b)
    d = a.data - b.data
    out = np.asarray((d * d).mean())
    k = d.dtype.type(2.0 / d.size)
    return _make(out, (a, b), lambda g: (g * k * d, -g * k * d), "mse")
