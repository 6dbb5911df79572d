"""Differentiable network operations built on :mod:`emdnet.tensor`.

Convolutions follow the usual cross-correlation convention, weights for
``conv2d`` are ``[Cout, Cin, kh, kw]`` and for ``conv_transpose2d`` are
``[Cin, Cout, kh, kw]``, so that the two are exact adjoints for equal
weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import Tensor, as_tensor, make_op

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int,
                               output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output size {ho}x{wo} is not positive for input {x.shape}")

    xp = _pad(x.data, padding)
    hp, wp = xp.shape[2:]
    cols = kernels.im2col(xp, kh, kw, stride, ho, wo)
    wm = weight.data.reshape(cout, -1)
    out = np.matmul(wm, cols).reshape(n, cout, ho, wo)
    inputs = [x, weight]
    if bias is not None:
        out += bias.data[None, :, None, None]
        inputs.append(bias)

    def backward_fn(g):
        g2 = g.reshape(n, cout, ho * wo)
        dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dx = None
        if x.requires_grad:
            dcols = np.matmul(wm.T, g2)
            dxp = kernels.col2im(dcols, cin, hp, wp, kh, kw, stride, ho, wo)
            dx = dxp[:, :, padding:padding + h, padding:padding + w]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_op("conv2d", inputs, out, backward_fn)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if output_padding < 0:
        raise ShapeError(f"output_padding must be non-negative, got {output_padding}")
    ho = conv_transpose_output_size(h, kh, stride, padding, output_padding)
    wo = conv_transpose_output_size(w, kw, stride, padding, output_padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv_transpose2d output size {ho}x{wo} is not positive for input {x.shape}")

    hp, wp = ho + 2 * padding, wo + 2 * padding
    wm = weight.data.reshape(cin, -1)
    x2 = x.data.reshape(n, cin, h * w)
    cols = np.matmul(wm.T, x2)
    canvas = kernels.col2im(cols, cout, hp, wp, kh, kw, stride, h, w)
    out = np.ascontiguousarray(canvas[:, :, padding:padding + ho, padding:padding + wo])
    inputs = [x, weight]
    if bias is not None:
        out += bias.data[None, :, None, None]
        inputs.append(bias)

    def backward_fn(g):
        gcols = kernels.im2col(_pad(g, padding), kh, kw, stride, h, w)
        dw = np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dx = np.matmul(wm, gcols).reshape(n, cin, h, w) if x.requires_grad else None
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_op("conv_transpose2d", inputs, out, backward_fn)


@dataclass
class BatchNormState:
    """Running per-channel statistics, updated in place during training."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.mean.copy(), self.var.copy(), self.momentum)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState | None = None,
                training: bool = True, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes with the biased batch variance and folds the batch
    statistics into ``state`` by exponential moving average.  Eval mode uses
    ``state`` and leaves it untouched.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d affine params {gamma.shape}/{beta.shape} do not match {c} channels")
    xd = x.data
    g4 = gamma.data[None, :, None, None]
    if training:
        m = n * h * w
        if m < 2:
            raise ShapeError(f"batchnorm2d in train mode needs >= 2 values per channel, got {m}")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if state is not None:
            mom = state.momentum
            state.mean[...] = (1 - mom) * state.mean + mom * mu
            state.var[...] = (1 - mom) * state.var + mom * var
    else:
        if state is None:
            raise ValueError("eval-mode batchnorm2d needs running statistics")
        mu, var = state.mean, state.var
    invstd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu[None, :, None, None]) * invstd[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    def backward_fn(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * g4
        if training:
            m = n * h * w
            dx = (invstd[None, :, None, None] / m) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            dx = dxhat * invstd[None, :, None, None]
        return dx, dgamma, dbeta

    return make_op("batchnorm2d", (x, gamma, beta), out, backward_fn)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """max(x, slope*x); the derivative at 0 is taken as ``slope``."""
    if slope < 0:
        raise ValueError(f"leaky_relu slope must be >= 0, got {slope}")
    xd = x.data
    pos = xd > 0
    return make_op("leaky_relu", (x,), np.where(pos, xd, slope * xd),
                   lambda g: (np.where(pos, g, slope * g),))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd > 0
    return make_op("relu", (x,), np.where(pos, xd, 0).astype(xd.dtype, copy=False),
                   lambda g: (np.where(pos, g, 0).astype(g.dtype, copy=False),))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clamped to the open interval (0, 1) in the working dtype."""
    xd = x.data
    info = np.finfo(xd.dtype)
    s = 0.5 * (1.0 + np.tanh(0.5 * xd))
    s = np.clip(s, info.tiny, 1.0 - info.epsneg).astype(xd.dtype, copy=False)
    return make_op("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def concat_channels(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != 4 or p.shape[0] != ref[0] or p.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels shape mismatch: {ref} vs {p.shape}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)
    return make_op("concat", parts, out,
                   lambda g: [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))])


def bilinear_mix(style: Tensor, weight: Tensor, content: Tensor) -> Tensor:
    """out[n, k] = sum_{r, b} style[n, r] * weight[r, k, b] * content[n, b]."""
    if style.ndim != 2 or content.ndim != 2 or weight.ndim != 3:
        raise ShapeError(f"bilinear_mix expects [N,R], [R,K,B], [N,B]; got {style.shape}, {weight.shape}, {content.shape}")
    n, r = style.shape
    r2, k, b = weight.shape
    if r != r2 or content.shape != (n, b):
        raise ShapeError(f"bilinear_mix dimension mismatch: S {style.shape}, W {weight.shape}, C {content.shape}")
    s, wd, c = style.data, weight.data, content.data
    sw = np.tensordot(s, wd, axes=(1, 0))  # [N, K, B]
    out = np.einsum("nkb,nb->nk", sw, c)

    def backward_fn(g):
        dc = np.einsum("nk,nkb->nb", g, sw)
        cw = np.tensordot(c, wd, axes=(1, 2))  # [N, R, K]
        ds = np.einsum("nrk,nk->nr", cw, g)
        dw = np.einsum("nr,nk,nb->rkb", s, g, c, optimize=True)
        return ds, dw, dc

    return make_op("bilinear_mix", (style, weight, content), out, backward_fn)


def l1_sum(a, b) -> Tensor:
    """sum |a - b|, subgradient 0 where a == b."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_sum shape mismatch: {a.shape} vs {b.shape}")
    sign = np.sign(a.data - b.data)
    out = np.asarray(np.abs(a.data - b.data).sum(), dtype=a.dtype)
    return make_op("l1_sum", (a, b), out, lambda g: (g * sign, -g * sign))


def weighted_abs_sum(pred: Tensor, target: np.ndarray, weights: np.ndarray) -> Tensor:
    """sum_i weights[i] * sum_pixels |pred_i - target_i|; ``target``/``weights`` are constants."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred.data - target
    wb = np.asarray(weights, dtype=pred.dtype).reshape((-1,) + (1,) * (pred.ndim - 1))
    out = np.asarray((wb * np.abs(diff)).sum(), dtype=pred.dtype)
    return make_op("weighted_abs_sum", (pred,), out, lambda g: (g * wb * np.sign(diff),))
