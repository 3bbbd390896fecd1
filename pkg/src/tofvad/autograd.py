"""Dense tensors with reverse-mode automatic differentiation.

Covers exactly the operator set the network architectures need: elementwise
arithmetic, matmul, shape ops, activations, softmax and layer norm. The
convolution/pooling family lives in `tofvad.nn` on top of the same Tensor.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (scoring hot path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """An n-d float array plus an optional gradient and backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(out):
        a.accumulate_grad(out.grad * np.asarray(s, dtype=a.data.dtype))

    return _make(a.data * np.asarray(s, dtype=a.data.dtype), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dimensions, when present, must match exactly."""
    if a.data.ndim != b.data.ndim or (a.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise ValueError(f"matmul: incompatible ranks {a.shape} @ {b.shape}")

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b.accumulate_grad(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(np.matmul(a.data, b.data), (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(out):
        x.accumulate_grad(out.grad * mask)

    return _make(np.where(mask, x.data, np.asarray(0, dtype=x.data.dtype)), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(out):
        x.accumulate_grad(out.grad * (y * (1.0 - y)))

    return _make(y, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(out):
        x.accumulate_grad(out.grad * (1.0 - y * y))

    return _make(y, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(out):
        x.accumulate_grad(out.grad.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(out):
        x.accumulate_grad(out.grad.transpose(inv))

    return _make(x.data.transpose(axes), (x,), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` elements starting at `start` along `axis`."""
    idx = tuple(slice(None) if i != axis else slice(start, start + length)
                for i in range(x.data.ndim))

    def backward(out):
        g = np.zeros_like(x.data)
        g[idx] = out.grad
        x.accumulate_grad(g)

    return _make(x.data[idx], (x,), backward)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the two trailing (spatial) axes."""
    widths = [(0, 0)] * (x.data.ndim - 2) + [(top, bottom), (left, right)]

    def backward(out):
        sl = tuple([slice(None)] * (x.data.ndim - 2)
                   + [slice(top, top + x.shape[-2]), slice(left, left + x.shape[-1])])
        x.accumulate_grad(out.grad[sl])

    return _make(np.pad(x.data, widths), (x,), backward)


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window of the trailing axes."""
    sl = tuple([slice(None)] * (x.data.ndim - 2) + [slice(0, height), slice(0, width)])

    def backward(out):
        g = np.zeros_like(x.data)
        g[sl] = out.grad
        x.accumulate_grad(g)

    return _make(x.data[sl], (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(out):
        x.accumulate_grad(np.broadcast_to(out.grad, x.shape))

    return _make(np.sum(x.data).reshape(()), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(out):
        g = out.grad
        dot = np.sum(g * y, axis=axis, keepdims=True)
        x.accumulate_grad(y * (g - dot))

    return _make(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-30) -> Tensor:
    """Normalise the last axis to mean 0 / variance 1, then apply an affine.

    eps only guards exactly-zero variance; it is small enough that the
    pre-affine output variance is 1 to within floating-point rounding.
    """
    mean = np.mean(x.data, axis=-1, keepdims=True)
    centred = x.data - mean
    var = np.mean(centred * centred, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    norm = centred * inv_std

    def backward(out):
        g = out.grad
        n = x.shape[-1]
        if gain.requires_grad:
            gain.accumulate_grad(np.sum(g * norm, axis=tuple(range(g.ndim - 1))))
        if bias.requires_grad:
            bias.accumulate_grad(np.sum(g, axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gn = g * gain.data
            dnorm_sum = np.sum(gn, axis=-1, keepdims=True)
            dnorm_dot = np.sum(gn * norm, axis=-1, keepdims=True)
            x.accumulate_grad(inv_std * (gn - dnorm_sum / n - norm * dnorm_dot / n))

    return _make(norm * gain.data + bias.data, (x, gain, bias), backward)


def backward(loss: Tensor) -> None:
    """Populate .grad for every requires_grad tensor reachable from loss.

    Repeated calls without zeroing accumulate, per the engine contract.
    """
    if loss.size != 1:
        raise ValueError("backward expects a scalar loss tensor")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    # fresh seed per call: interior grads are transient, leaves accumulate
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)
            node.grad = None


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
