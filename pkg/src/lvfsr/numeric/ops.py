"""Differentiable operations over :class:`Tensor`.

Each op computes with numpy, validates shapes up front, and registers a
single backward closure, so the tape stays short even for composite layers
like attention. All ops run un-taped when no input requires a gradient.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from ..errors import ShapeError
from .tensor import Tensor, make_node

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return make_node(data, "add", (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return make_node(data, "sub", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return make_node(data, "mul", (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    data = x.data * c

    def bwd(g):
        return (g * c,)

    return make_node(data, "scale", (x,), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)
    src = x.data.shape

    def bwd(g):
        return (g.reshape(src),)

    return make_node(data, "reshape", (x,), bwd)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inv),)

    return make_node(data, "transpose", (x,), bwd)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ShapeError("concat requires at least one input")
    base = list(xs[0].data.shape)
    for t in xs[1:]:
        s = list(t.data.shape)
        s[axis] = base[axis]
        if s != base:
            raise ShapeError(f"concat extents differ off axis {axis}: "
                             f"{xs[0].data.shape} vs {t.data.shape}")
    data = np.concatenate([t.data for t in xs], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(data, "concat", tuple(xs), bwd)


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())
    shape = x.data.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(data, "sum", (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.sum() / n)
    shape = x.data.shape

    def bwd(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return make_node(data, "mean", (x,), bwd)


def mean_abs(x: Tensor) -> Tensor:
    """Mean absolute value; subgradient at 0 is 0 (sign convention)."""
    n = x.data.size
    data = np.asarray(np.abs(x.data).sum() / n)
    sgn = np.sign(x.data)

    def bwd(g):
        return (g * sgn / n,)

    return make_node(data, "mean_abs", (x,), bwd)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """y = x @ w.T + b with w of shape (Dout, Din) and x of shape (..., Din)."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"linear: input width {x.data.shape[-1]} != Din {w.data.shape[1]}")
    if b is not None and b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"linear: bias shape {b.data.shape} != ({w.data.shape[0]},)")
    data = x.data @ w.data.T
    if b is not None:
        np.add(data, b.data, out=data)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gx = g @ w.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.data.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_node(data, "linear", parents, bwd)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW (or unbatched CHW) with zero padding.

    The window view is flattened into one matrix product; 1x1 kernels skip
    the window extraction entirely.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: rank {xd.ndim} input / rank {w.data.ndim} kernel")
    n, cin, h, wd_ = xd.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {cin_w}")
    if b is not None and b.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.data.shape} != ({cout},)")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd_ + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds padded input "
                         f"{h + 2 * pad}x{wd_ + 2 * pad}")

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        y = (w.data.reshape(cout, cin) @ xd.reshape(n, cin, h * wd_)).reshape(
            n, cout, h, wd_)
        if b is not None:
            y += b.data[:, None, None]
        xp = xd
        mat = None
    else:
        if pad:
            xp = np.zeros((n, cin, h + 2 * pad, wd_ + 2 * pad), dtype=xd.dtype)
            xp[:, :, pad:pad + h, pad:pad + wd_] = xd
        else:
            xp = xd
        s0, s1, s2, s3 = xp.strides
        win = np.lib.stride_tricks.as_strided(
            xp, (n, cin, ho, wo, kh, kw),
            (s0, s1, s2 * stride, s3 * stride, s2, s3))
        mat = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
        y = mat @ w.data.reshape(cout, -1).T
        if b is not None:
            np.add(y, b.data, out=y)
        y = np.ascontiguousarray(y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g4 = g[None] if squeeze else g
        if mat is None:
            gflat = g4.reshape(n, cout, ho * wo)
            gw = np.tensordot(g4, xd, axes=([0, 2, 3], [0, 2, 3])).reshape(w.data.shape)
            gx = (w.data.reshape(cout, cin).T @ gflat).reshape(n, cin, h, wd_)
        else:
            gmat = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(
                n * ho * wo, cout)
            gw = (gmat.T @ mat).reshape(w.data.shape)
            gcols = (gmat @ w.data.reshape(cout, -1)).reshape(n, ho, wo, cin, kh, kw)
            gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride,
                        j:j + stride * wo:stride] += gcols[:, :, :, :, i, j]
            gx = gxp[:, :, pad:pad + h, pad:pad + wd_] if pad else gxp
        if squeeze:
            gx = gx[0]
        if b is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    out = y[0] if squeeze else y
    return make_node(out, "conv2d", parents, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.data.shape}/{beta.data.shape} != ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = np.multiply(xc, istd, out=xc)
    data = gamma.data * xhat
    np.add(data, beta.data, out=data)

    def bwd(g):
        gh = g * gamma.data
        gmean = gh.mean(axis=-1, keepdims=True)
        gxmean = (gh * xhat).mean(axis=-1, keepdims=True)
        gx = istd * (gh - gmean - xhat * gxmean)
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_node(data, "layer_norm", (x, gamma, beta), bwd)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return make_node(y, "sigmoid", (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x)."""
    phi_cdf = erf(x.data * _INV_SQRT2)
    np.multiply(phi_cdf, 0.5, out=phi_cdf)
    np.add(phi_cdf, 0.5, out=phi_cdf)
    y = x.data * phi_cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (phi_cdf + x.data * pdf),)

    return make_node(y, "gelu", (x,), bwd)


_ACTIVATIONS = {"sigmoid": sigmoid, "gelu": gelu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return make_node(y, "softmax", (x,), bwd)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1) -> Tensor:
    """Multi-head softmax(Q Kt / sqrt(dh)) V over 2-D token matrices.

    q: (T, D), k: (S, D), v: (S, Dv); D and Dv must divide by heads; the head
    outputs are concatenated back to (T, Dv).
    """
    t, d = q.data.shape
    s, dk = k.data.shape
    sv, dv = v.data.shape
    if dk != d:
        raise ShapeError(f"attention: query width {d} != key width {dk}")
    if sv != s:
        raise ShapeError(f"attention: {s} keys vs {sv} values")
    if d % heads or dv % heads:
        raise ShapeError(f"attention: widths {d}/{dv} not divisible by {heads} heads")
    dh, dvh = d // heads, dv // heads
    sc = 1.0 / math.sqrt(dh)
    # (heads, tokens, width) layout; the scale folds into the smaller operand
    # and the softmax chain reuses the logits buffer
    qh = q.data.reshape(t, heads, dh).transpose(1, 0, 2) * sc
    kh = k.data.reshape(s, heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(s, heads, dvh).transpose(1, 0, 2)
    a = qh @ kh.transpose(0, 2, 1)
    np.subtract(a, a.max(axis=-1, keepdims=True), out=a)
    np.exp(a, out=a)
    np.divide(a, a.sum(axis=-1, keepdims=True), out=a)
    out = (a @ vh).transpose(1, 0, 2).reshape(t, dv)

    def bwd(g):
        gh = g.reshape(t, heads, dvh).transpose(1, 0, 2)
        gv = a.transpose(0, 2, 1) @ gh
        ga = gh @ vh.transpose(0, 2, 1)
        gl = a * (ga - (ga * a).sum(axis=-1, keepdims=True))
        gq = (gl @ kh) * sc
        gk = gl.transpose(0, 2, 1) @ qh
        return (gq.transpose(1, 0, 2).reshape(t, d),
                gk.transpose(1, 0, 2).reshape(s, d),
                gv.transpose(1, 0, 2).reshape(s, dv))

    return make_node(out, "scaled_dot_attention", (q, k, v), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over spatial axes (NCHW/CHW) or over tokens (T, D)."""
    nd = x.data.ndim
    if nd == 4:
        axes: tuple = (2, 3)
    elif nd == 3:
        axes = (1, 2)
    elif nd == 2:
        axes = (0,)
    else:
        raise ShapeError(f"global_avg_pool: unsupported rank {nd}")
    cnt = 1
    for ax in axes:
        cnt *= x.data.shape[ax]
    data = x.data.mean(axis=axes)
    shape = x.data.shape

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axes) / cnt, shape).copy(),)

    return make_node(data, "global_avg_pool", (x,), bwd)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Channel-to-space rearrangement: (N, C*r*r, H, W) -> (N, C, H*r, W*r)."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, c2, h, w = xd.shape
    if c2 % (r * r):
        raise ShapeError(f"pixel_shuffle: {c2} channels not divisible by r^2 = {r * r}")
    c = c2 // (r * r)
    y = xd.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def bwd(g):
        g4 = g[None] if squeeze else g
        gi = g4.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c2, h, w)
        return (gi[0] if squeeze else gi,)

    return make_node(y[0] if squeeze else y, "pixel_shuffle", (x,), bwd)
