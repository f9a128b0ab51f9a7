"""Differentiable layer primitives on (N, C, H, W) tensors.

Convolutions loop over kernel taps and contract channels with a batched
matmul per tap; this keeps memory at one shifted view per tap and makes the
backward pass a direct mirror of the forward pass.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, record

LN_EPS = 1e-5


def _tap(x: np.ndarray, i: int, j: int, stride: int, ho: int, wo: int) -> np.ndarray:
    return x[..., i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2D cross-correlation with zero padding; ``w`` is (Cout, Cin/groups, Kh, Kw)."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects a rank-4 input, got shape {x.shape}")
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if stride < 1 or padding < 0:
        raise ConfigError(f"invalid stride {stride} / padding {padding}")
    if cin % groups or cout % groups:
        raise DimensionError(f"channel axis: Cin={cin}, Cout={cout} not divisible by groups={groups}")
    if cin // groups != cin_g:
        raise DimensionError(f"channel axis: kernel expects {cin_g * groups} input channels, got {cin}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"bias must have shape ({cout},), got {b.shape}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"spatial axes: input {h}x{wd} too small for kernel {kh}x{kw}")

    g = groups
    cout_g = cout // g
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[-2:]
    xg = xp.reshape(n, g, cin_g, hp, wp)
    wg = w.data.reshape(g, cout_g, cin_g, kh, kw)
    depthwise = cin_g == 1 and cout_g == 1

    out = np.zeros((n, g, cout_g, ho * wo), dtype=np.result_type(x.data, w.data))
    for i in range(kh):
        for j in range(kw):
            patch = _tap(xg, i, j, stride, ho, wo).reshape(n, g, cin_g, ho * wo)
            if depthwise:
                out += wg[None, :, :, 0, i, j, None] * patch
            else:
                out += wg[:, :, :, i, j] @ patch
    out = out.reshape(n, cout, ho, wo)
    if b is not None:
        out += b.data[None, :, None, None]

    def bw(gout):
        gg = gout.reshape(n, g, cout_g, ho * wo)
        gxp = np.zeros_like(xg)
        gw = np.zeros_like(wg)
        for i in range(kh):
            for j in range(kw):
                patch = _tap(xg, i, j, stride, ho, wo).reshape(n, g, cin_g, ho * wo)
                view = _tap(gxp, i, j, stride, ho, wo)
                if depthwise:
                    gw[:, 0, 0, i, j] = (gg * patch).sum(axis=(0, 2, 3))
                    view += (wg[None, :, :, 0, i, j, None] * gg).reshape(view.shape)
                else:
                    gw[:, :, :, i, j] = (gg @ np.swapaxes(patch, -1, -2)).sum(axis=0)
                    view += (np.swapaxes(wg[:, :, :, i, j], -1, -2) @ gg).reshape(view.shape)
        gx = gxp.reshape(n, cin, hp, wp)
        if padding:
            gx = gx[:, :, padding : padding + h, padding : padding + wd]
        gb = gout.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw.reshape(w.shape), gb

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv2d", out, inputs, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution without padding; ``w`` is (Cin, Cout, Kh, Kw).

    Output spatial size is (H - 1) * stride + Kh, which equals H * stride when
    the kernel matches the stride.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv_transpose2d expects a rank-4 input, got shape {x.shape}")
    n, cin, h, wd = x.shape
    wcin, cout, kh, kw = w.shape
    if wcin != cin:
        raise DimensionError(f"channel axis: kernel expects {wcin} input channels, got {cin}")
    if stride < 1:
        raise ConfigError(f"invalid stride {stride}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"bias must have shape ({cout},), got {b.shape}")
    ho = (h - 1) * stride + kh
    wo = (wd - 1) * stride + kw
    xf = x.data.reshape(n, cin, h * wd)
    out = np.zeros((n, cout, ho, wo), dtype=np.result_type(x.data, w.data))
    for i in range(kh):
        for j in range(kw):
            view = _tap(out, i, j, stride, h, wd)
            view += (w.data[:, :, i, j].T @ xf).reshape(n, cout, h, wd)
    if b is not None:
        out += b.data[None, :, None, None]

    def bw(gout):
        gx = np.zeros_like(xf)
        gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                gpatch = _tap(gout, i, j, stride, h, wd).reshape(n, cout, h * wd)
                gx += w.data[:, :, i, j] @ gpatch
                gw[:, :, i, j] = (xf @ np.swapaxes(gpatch, -1, -2)).sum(axis=0)
        gb = gout.sum(axis=(0, 2, 3)) if b is not None else None
        return gx.reshape(x.shape), gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv_transpose2d", out, inputs, bw)


def channel_linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Apply a (Cout, Cin) matrix along axis 1 of an (N, Cin, ...) tensor.

    This is a 1x1 convolution for rank-4 inputs and a per-token projection
    for (N, C, L) sequences.
    """
    if w.ndim == 4:
        if w.shape[2:] != (1, 1):
            raise DimensionError(f"channel_linear needs a 1x1 kernel, got {w.shape}")
        wm = w.data.reshape(w.shape[0], w.shape[1])
    else:
        wm = w.data
    n, cin = x.shape[:2]
    if wm.shape[1] != cin:
        raise DimensionError(f"channel axis: projection expects {wm.shape[1]} channels, got {cin}")
    spatial = x.shape[2:]
    xf = x.data.reshape(n, cin, -1)
    out = wm @ xf
    if b is not None:
        out = out + b.data[None, :, None]

    def bw(g):
        gf = g.reshape(n, wm.shape[0], -1)
        gx = (wm.T @ gf).reshape(x.shape)
        gw = (gf @ np.swapaxes(xf, -1, -2)).sum(axis=0).reshape(w.shape)
        gb = gf.sum(axis=(0, 2)) if b is not None else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record("channel_linear", out.reshape((n, wm.shape[0]) + spatial), inputs, bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over axis 1 (channels) independently at every position."""
    if x.ndim < 2 or x.shape[1] == 0:
        raise DimensionError(f"layer_norm needs at least one channel, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"channel axis: affine params must have shape ({c},)")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        gxhat = g * gamma.data.reshape(bshape)
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return record("layer_norm", out, (x, gamma, beta), bw)


def softmax_axis(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return record("silu", x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
    return record("gelu", x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data).astype(x.dtype)
    return record("softplus", out, (x,), lambda g: (g * _sigmoid(x.data),))


_ACTIVATIONS = {"silu": silu, "gelu": gelu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def clamp_abs_min(x: Tensor, floor: float) -> Tensor:
    """Push entries with ``|x| < floor`` out to ``±floor`` (zero maps to +floor).

    Clamped entries receive no gradient.
    """
    small = np.abs(x.data) < floor
    out = np.where(small, np.where(x.data < 0, -floor, floor), x.data).astype(x.dtype)
    return record("clamp_abs_min", out, (x,), lambda g: (np.where(small, 0.0, g),))
