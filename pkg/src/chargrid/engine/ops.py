"""Differentiable ops over NHWC tensors.

Convolutions use "same" padding: output size ``ceil(n / stride)``, with the
total padding ``max((out - 1) * stride + k_eff - n, 0)`` split so that the
smaller half goes before. For a 3x3 stride-2 convolution on an even input this
pads one row/column at the bottom/right only, and the stride-2 transposed
convolution is defined as the exact adjoint of that map, so it doubles the
spatial size.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --- elementwise and structural ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    """Elementwise product of equal-shape tensors, or tensor times python scalar."""
    a = _t(a)
    if isinstance(b, (int, float)):
        return Tensor.from_op(a.data * b, (a,), lambda g: (g * b,))
    b = _t(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def tsum(x: Tensor) -> Tensor:
    x = _t(x)
    return Tensor.from_op(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) with constant weights."""
    x = _t(x)
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ValueError(f"weighted_sum: shape mismatch {x.shape} vs {w.shape}")
    return Tensor.from_op(np.sum(x.data * w), (x,), lambda g: (g * w,))


def relu(x: Tensor) -> Tensor:
    x = _t(x)
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = _t(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax_array(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _t(x)
    s = softmax_array(x.data, axis)

    def bw(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return Tensor.from_op(s, (x,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_t(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                a != b for k, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if k != ax):
            raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        index = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[ax] = slice(lo, hi)
            out.append(g[tuple(index)])
        return out

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def spatial_dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Drop whole channels per sample with probability ``p``; identity in eval mode."""
    if not 0 <= p < 1:
        raise ValueError("dropout probability must be in [0, 1)")
    x = _t(x)
    if not training or p == 0:
        return x
    if rng is None:
        raise ValueError("spatial_dropout needs a random generator in training mode")
    keep = rng.random((x.shape[0],) + (1,) * (x.ndim - 2) + (x.shape[-1],)) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1 - p)
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,))


# --- batch normalization ----------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, eps: float = 1e-5,
               momentum: float = 0.9) -> Tensor:
    """Per-channel normalization over all but the last axis.

    In training mode the batch statistics normalize the input and the running
    estimates move as ``r = momentum * r + (1 - momentum) * batch``, in place.
    """
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data
    m = x.data.size // x.shape[-1]

    def bw(g):
        ggamma = np.sum(g * xhat, axis=axes)
        gbeta = np.sum(g, axis=axes)
        gx_hat = g * gamma.data
        if training:
            gx = (inv_std / m) * (m * gx_hat - gx_hat.sum(axis=axes)
                                  - xhat * np.sum(gx_hat * xhat, axis=axes))
        else:
            gx = gx_hat * inv_std
        return gx, ggamma, gbeta

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), bw)


# --- convolution ------------------------------------------------------------

def same_padding(n: int, k_eff: int, stride: int) -> tuple[int, int, int]:
    """(output size, pad before, pad after) for "same" convolution."""
    out = -(-n // stride)
    total = max((out - 1) * stride + k_eff - n, 0)
    return out, total // 2, total - total // 2


def _im2col(xp: np.ndarray, kh: int, kw: int, out_h: int, out_w: int,
            stride: int, dilation: int) -> np.ndarray:
    n, _, _, c = xp.shape
    s = xp.strides
    win = as_strided(xp, (n, out_h, out_w, kh, kw, c),
                     (s[0], s[1] * stride, s[2] * stride, s[1] * dilation, s[2] * dilation, s[3]),
                     writeable=False)
    return np.ascontiguousarray(win).reshape(n * out_h * out_w, kh * kw * c)


def _col2im(cols: np.ndarray, padded_shape, kh: int, kw: int, out_h: int, out_w: int,
            stride: int, dilation: int) -> np.ndarray:
    n, _, _, c = padded_shape
    cols = cols.reshape(n, out_h, out_w, kh, kw, c)
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    for a in range(kh):
        r0 = a * dilation
        for b in range(kw):
            c0 = b * dilation
            xp[:, r0:r0 + stride * (out_h - 1) + 1:stride,
               c0:c0 + stride * (out_w - 1) + 1:stride, :] += cols[:, :, :, a, b, :]
    return xp


class _ConvGeometry:
    def __init__(self, in_h, in_w, kh, kw, stride, dilation):
        self.kh, self.kw, self.stride, self.dilation = kh, kw, stride, dilation
        self.out_h, self.pt, self.pb = same_padding(in_h, (kh - 1) * dilation + 1, stride)
        self.out_w, self.pl, self.pr = same_padding(in_w, (kw - 1) * dilation + 1, stride)
        self.in_h, self.in_w = in_h, in_w

    def pad(self, x):
        if self.pt == self.pb == self.pl == self.pr == 0:
            return x
        return np.pad(x, ((0, 0), (self.pt, self.pb), (self.pl, self.pr), (0, 0)))

    def padded_shape(self, n, c):
        return (n, self.in_h + self.pt + self.pb, self.in_w + self.pl + self.pr, c)

    def unpad(self, xp):
        return xp[:, self.pt:self.pt + self.in_h, self.pl:self.pl + self.in_w, :]

    def cols(self, x):
        return _im2col(self.pad(x), self.kh, self.kw, self.out_h, self.out_w,
                       self.stride, self.dilation)

    def input_grad(self, gcols, n, c):
        xp = _col2im(gcols, self.padded_shape(n, c), self.kh, self.kw, self.out_h, self.out_w,
                     self.stride, self.dilation)
        return self.unpad(xp)


def _flipped_correlation(g: np.ndarray, w: np.ndarray, geo: _ConvGeometry) -> np.ndarray:
    """Input gradient of a stride-1 same convolution: ``g`` correlated with the flipped kernel.

    Swapping the before/after padding aligns the flipped taps; this avoids
    the scatter-add of col2im.
    """
    n, h, wd, _ = g.shape
    kh, kw, cin, _ = w.shape
    gp = np.pad(g, ((0, 0), (geo.pb, geo.pt), (geo.pr, geo.pl), (0, 0)))
    wf = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, cin)
    return (_im2col(gp, kh, kw, h, wd, 1, geo.dilation) @ wf).reshape(n, h, wd, cin)


def _check_conv(x: Tensor, w: Tensor, stride: int, dilation: int, cin_axis: int):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv: expected 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[3] != w.shape[cin_axis]:
        raise ValueError(f"conv: input has {x.shape[3]} channels, kernel expects {w.shape[cin_axis]}")
    if stride < 1 or dilation < 1:
        raise ValueError("conv: stride and dilation must be >= 1")


def _add_bias(out: np.ndarray, bias: Tensor | None):
    return out if bias is None else out + bias.data


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           dilation: int = 1) -> Tensor:
    """NHWC convolution with kernel (kh, kw, cin, cout) and same padding."""
    x, w = _t(x), _t(w)
    _check_conv(x, w, stride, dilation, cin_axis=2)
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    geo = _ConvGeometry(h, wd, kh, kw, stride, dilation)
    wmat = w.data.reshape(-1, cout)
    pointwise = kh == kw == 1 and stride == 1
    if pointwise:
        cols = x.data.reshape(-1, cin)
    else:
        cols = geo.cols(x.data)
    out = (cols @ wmat).reshape(n, geo.out_h, geo.out_w, cout)
    out = _add_bias(out, bias)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            if pointwise:
                gx = (g2 @ wmat.T).reshape(x.shape)
            elif stride == 1:
                gx = _flipped_correlation(g, w.data, geo)
            else:
                gx = geo.input_grad(g2 @ wmat.T, n, cin)
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, w) if bias is None else (x, w, _t(bias))
    return Tensor.from_op(out, parents, bw)


def conv2d_transpose(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Adjoint of the same-padded ``stride`` convolution; kernel (kh, kw, cin, cout).

    Output spatial size is exactly ``stride`` times the input size.
    """
    x, w = _t(x), _t(w)
    _check_conv(x, w, stride, 1, cin_axis=2)
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    # associated forward conv maps (n, stride*h, stride*w, cout) -> (n, h, w, cin)
    geo = _ConvGeometry(stride * h, stride * wd, kh, kw, stride, 1)
    assert (geo.out_h, geo.out_w) == (h, wd)
    wt = w.data.transpose(0, 1, 3, 2).reshape(-1, cin)  # (kh*kw*cout, cin)
    xmat = x.data.reshape(-1, cin)
    out = geo.input_grad(xmat @ wt.T, n, cout)
    out = _add_bias(np.ascontiguousarray(out), bias)

    def bw(g):
        gcols = geo.cols(g)
        gx = (gcols @ wt).reshape(x.shape) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gwt = (gcols.T @ xmat).reshape(kh, kw, cout, cin)
            gw = gwt.transpose(0, 1, 3, 2)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    parents = (x, w) if bias is None else (x, w, _t(bias))
    return Tensor.from_op(out, parents, bw)
