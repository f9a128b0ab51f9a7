"""Channel-wise (transposed) multi-head attention for fusing illumination features.

Each head works on a d_k x d_k score matrix ``K^T Q`` over channels, so the
cost grows linearly with the number of pixels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import Param, Tensor, clamp_abs_min, matmul, reshape, softmax_axis, swap_last
from .errors import ConfigError, DimensionError
from .layers import Conv, ParamFactory

ALPHA_FLOOR = 1e-4


class FusionMode(enum.Enum):
    IFA = "ifa"
    ELEMENTWISE = "elementwise"
    IGMSA = "igmsa"


@dataclass
class IFAWeights:
    wq: Conv
    wk: Conv
    wv: Conv
    alpha: Param  # (heads,) score divisors
    w_out: Conv

    @property
    def heads(self) -> int:
        return self.alpha.shape[0]

    @classmethod
    def build(cls, pf: ParamFactory, channels: int, heads: int) -> "IFAWeights":
        if heads < 1 or channels % heads:
            raise ConfigError(f"channels={channels} not divisible by heads={heads}")
        return cls(
            wq=Conv.build(pf.child("wq"), channels, channels, bias=False),
            wk=Conv.build(pf.child("wk"), channels, channels, bias=False),
            wv=Conv.build(pf.child("wv"), channels, channels, bias=False),
            alpha=pf.constant("alpha", (heads,), 1.0),
            w_out=Conv.build(pf.child("w_out"), channels, channels),
        )


def _check(x: Tensor, f_lu: Tensor, heads: int) -> tuple[int, int, int, int]:
    if x.shape != f_lu.shape:
        raise DimensionError(f"input {x.shape} and illumination features {f_lu.shape} differ")
    n, c, h, w = x.shape
    if heads < 1 or c % heads:
        raise ConfigError(f"channels={c} not divisible by heads={heads}")
    return n, c, h, w


def _split_heads(t: Tensor, heads: int) -> Tensor:
    n, c, h, w = t.shape
    return reshape(t, (n, heads, c // heads, h * w))


def _attention_matrix(q: Tensor, k: Tensor, alpha: Param) -> Tensor:
    # scores[a, b] = sum_p k[a, p] q[b, p]; normalised over the key channel a
    heads = alpha.shape[0]
    scores = matmul(k, swap_last(q)) / reshape(clamp_abs_min(alpha, ALPHA_FLOOR), (1, heads, 1, 1))
    return softmax_axis(scores, axis=-2)


def _attend(q: Tensor, k: Tensor, v: Tensor, w: IFAWeights, shape) -> Tensor:
    attn = _attention_matrix(q, k, w.alpha)
    mixed = matmul(swap_last(attn), v)  # out[b, p] = sum_a attn[a, b] v[a, p]
    return w.w_out(reshape(mixed, shape))


def ifa_forward(x: Tensor, f_lu: Tensor, w: IFAWeights, heads: int | None = None) -> Tensor:
    """Cross attention: queries from the illumination features, keys/values from ``x``."""
    heads = heads or w.heads
    _check(x, f_lu, heads)
    q = _split_heads(w.wq(f_lu), heads)
    k = _split_heads(w.wk(x), heads)
    v = _split_heads(w.wv(x), heads)
    return _attend(q, k, v, w, x.shape)


def igmsa_forward(x: Tensor, f_lu: Tensor, w: IFAWeights, heads: int | None = None) -> Tensor:
    """Self attention on ``x`` with the values modulated by the illumination features."""
    heads = heads or w.heads
    _check(x, f_lu, heads)
    q = _split_heads(w.wq(x), heads)
    k = _split_heads(w.wk(x), heads)
    v = _split_heads(w.wv(x) * f_lu, heads)
    return _attend(q, k, v, w, x.shape)


def elementwise_fuse(x: Tensor, f_lu: Tensor) -> Tensor:
    if x.shape != f_lu.shape:
        raise DimensionError(f"input {x.shape} and illumination features {f_lu.shape} differ")
    return x * f_lu


def attention_maps(x: Tensor, f_lu: Tensor, w: IFAWeights, mode: FusionMode = FusionMode.IFA) -> np.ndarray:
    """Per-head (N, heads, d_k, d_k) attention matrices; columns sum to one."""
    heads = w.heads
    _check(x, f_lu, heads)
    k = _split_heads(w.wk(x), heads)
    q_src = f_lu if mode is FusionMode.IFA else x
    q = _split_heads(w.wq(q_src), heads)
    return _attention_matrix(q, k, w.alpha).data
