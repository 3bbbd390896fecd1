"""Neural-network operators on top of `tofvad.autograd`.

Convolutions run through the kernel backend (compiled or numpy) as
im2col/col2im plus BLAS matmuls; everything registers a backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autograd import Tensor, _make

# Convolutions with at most this many output-side channels skip the column
# matrix and use the direct kernels: for those shapes the im2col/col2im
# intermediate is many times larger than the data it carries, so the direct
# loop wins despite BLAS. Wider layers keep the im2col + matmul route.
_DIRECT_MAX_CH = 4


def _check_stride(stride: int) -> None:
    if stride != 1:
        raise ValueError("only stride=1 is supported; spatial reduction is done by pooling")


def _pad_spatial(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 2) -> Tensor:
    """Cross-correlation of (N,C,H,W) with (F,C,kh,kw); same-size at defaults."""
    _check_stride(stride)
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise ValueError(f"conv2d: weight expects {cw} input channels, got {c}")
    oh, ow = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    if oh < 1 or ow < 1:
        raise ValueError("conv2d: kernel larger than padded input")

    xp = _pad_spatial(x.data, padding)
    direct = f <= _DIRECT_MAX_CH
    if direct:
        cols = None
        y = kernels.conv_fwd(xp, np.ascontiguousarray(weight.data))
    else:
        # the column matrix double-dips: forward product here, weight
        # gradient in backward
        cols = kernels.im2col(xp, kh, kw)
        y = np.matmul(weight.data.reshape(f, c * kh * kw), cols).reshape(n, f, oh, ow)
    if bias is not None:
        y += bias.data.reshape(1, f, 1, 1)

    def backward(out):
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(out.grad.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            if direct:
                dw = kernels.conv_dw(xp, np.ascontiguousarray(out.grad), kh, kw)
                weight.accumulate_grad(dw)
            else:
                g = np.ascontiguousarray(out.grad.reshape(n, f, oh * ow))
                dw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
                weight.accumulate_grad(dw.reshape(weight.shape))
        if x.requires_grad:
            if direct:
                dxp = kernels.conv_scatter(np.ascontiguousarray(out.grad),
                                           np.ascontiguousarray(weight.data),
                                           h + 2 * padding, w + 2 * padding)
            else:
                dcols = np.matmul(weight.data.reshape(f, c * kh * kw).T,
                                  out.grad.reshape(n, f, oh * ow))
                dxp = kernels.col2im(dcols, kh, kw, h + 2 * padding, w + 2 * padding)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            x.accumulate_grad(dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 2) -> Tensor:
    """Adjoint of conv2d with the same hyperparameters; weight is (Cin,Cout,kh,kw)."""
    _check_stride(stride)
    n, cin, h, w = x.shape
    cw, cout, kh, kw = weight.shape
    if cw != cin:
        raise ValueError(f"conv_transpose2d: weight expects {cw} input channels, got {cin}")
    hp, wp = h + kh - 1, w + kw - 1
    oh, ow = hp - 2 * padding, wp - 2 * padding
    if oh < 1 or ow < 1:
        raise ValueError("conv_transpose2d: padding removes the whole output")

    w2 = weight.data.reshape(cin, cout * kh * kw)
    xf = np.ascontiguousarray(x.data.reshape(n, cin, h * w))
    cols = np.matmul(w2.T, xf)
    yp = kernels.col2im(np.ascontiguousarray(cols), kh, kw, hp, wp)
    y = yp[:, :, padding:padding + oh, padding:padding + ow] if padding else yp
    if bias is not None:
        y = y + bias.data.reshape(1, cout, 1, 1)

    def backward(out):
        g = out.grad
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        gcols = kernels.im2col(_pad_spatial(g, padding), kh, kw)
        if weight.requires_grad:
            dw2 = np.matmul(xf, gcols.transpose(0, 2, 1)).sum(axis=0)
            weight.accumulate_grad(dw2.reshape(weight.shape))
        if x.requires_grad:
            dx = np.matmul(w2, gcols).reshape(n, cin, h, w)
            x.accumulate_grad(dx)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(y), parents, backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2, floor semantics; ties go to the first
    element of the window in row-major order."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError("maxpool2: input smaller than the pooling window")
    y, idx = kernels.maxpool2_fwd(np.ascontiguousarray(x.data))

    def backward(out):
        x.accumulate_grad(
            kernels.maxpool2_bwd(np.ascontiguousarray(out.grad), idx, h, w))

    return _make(y, (x,), backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling; backward sums each 2x2 block."""
    n, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(out):
        x.accumulate_grad(out.grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(y, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias with weight laid out (in_features, out_features)."""
    from . import autograd as ag

    lead = x.shape[:-1]
    x2 = ag.reshape(x, (int(np.prod(lead)) if lead else 1, x.shape[-1]))
    y = ag.matmul(x2, weight)
    if bias is not None:
        y = ag.add(y, bias)
    return ag.reshape(y, lead + (weight.shape[-1],))


@dataclass
class AttentionParams:
    """Projection weights for multi-head attention (all (dim, dim) + biases)."""
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.wq, self.wk, self.wv, self.wo, self.bq, self.bk, self.bv, self.bo]


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         params: AttentionParams) -> Tensor:
    """Scaled dot-product attention over (tokens, dim) inputs."""
    from . import autograd as ag

    t, dim = q.shape
    if dim % heads:
        raise ValueError(f"embedding dim {dim} not divisible by {heads} heads")
    dh = dim // heads

    def split(x):
        return ag.transpose(ag.reshape(x, (t, heads, dh)), (1, 0, 2))

    qh = split(linear(q, params.wq, params.bq))
    kh = split(linear(k, params.wk, params.bk))
    vh = split(linear(v, params.wv, params.bv))
    scores = ag.scale(ag.matmul(qh, ag.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
    att = ag.softmax(scores, axis=-1)
    ctx = ag.reshape(ag.transpose(ag.matmul(att, vh), (1, 0, 2)), (t, dim))
    return linear(ctx, params.wo, params.bo)


class Adam:
    """Adam with bias correction and a fixed learning rate."""

    def __init__(self, params: list[Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[i]
            v = self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                    fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
