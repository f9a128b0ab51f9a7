"""Four-direction 2D selective scan (SS2D) and its gated block wrapper."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import Param, Tensor, channel_linear, reshape, silu, softplus, take
from .errors import DimensionError
from .layers import Conv, Norm, ParamFactory
from .scan import selective_scan

DT_MIN, DT_MAX = 1e-3, 1e-1


class ScanDirection(enum.Enum):
    ROW_FWD = "row_fwd"
    ROW_BWD = "row_bwd"
    COL_FWD = "col_fwd"
    COL_BWD = "col_bwd"

    def order(self, h: int, w: int) -> np.ndarray:
        """Flat row-major pixel indices in the order this direction visits them."""
        grid = np.arange(h * w).reshape(h, w)
        base = grid.ravel() if self in (ScanDirection.ROW_FWD, ScanDirection.ROW_BWD) else grid.T.ravel()
        return base[::-1].copy() if self in (ScanDirection.ROW_BWD, ScanDirection.COL_BWD) else base


DIRECTIONS = tuple(ScanDirection)


@dataclass
class S6Params:
    a_log: Param  # (D, S); A = -exp(a_log)
    d_skip: Param  # (D,)
    w_bc: Param  # (2S, D)
    w_dt: Param  # (D, D)
    b_dt: Param  # (D,)

    @property
    def d_state(self) -> int:
        return self.a_log.shape[1]

    @classmethod
    def build(cls, pf: ParamFactory, d_inner: int, d_state: int) -> "S6Params":
        a_log = np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1)))
        dt = np.exp(pf.rng.uniform(np.log(DT_MIN), np.log(DT_MAX), size=d_inner))
        inv_softplus = dt + np.log(-np.expm1(-dt))
        return cls(
            a_log=pf.param("a_log", a_log),
            d_skip=pf.constant("d_skip", (d_inner,), 1.0),
            w_bc=pf.uniform("w_bc", (2 * d_state, d_inner), d_inner),
            w_dt=pf.uniform("w_dt", (d_inner, d_inner), d_inner),
            b_dt=pf.param("b_dt", inv_softplus),
        )


@dataclass
class SS2DWeights:
    w_in: Conv  # C -> 2 * d_inner, split into signal / gate
    conv_dw: Conv  # 3x3 depthwise on d_inner
    s6: list  # one S6Params per ScanDirection, in DIRECTIONS order
    norm: Norm
    w_out: Conv  # d_inner -> C

    @property
    def d_inner(self) -> int:
        return self.norm.gamma.shape[0]

    @classmethod
    def build(cls, pf: ParamFactory, channels: int, d_state: int, expand: int = 2) -> "SS2DWeights":
        d_inner = expand * channels
        return cls(
            w_in=Conv.build(pf.child("w_in"), channels, 2 * d_inner),
            conv_dw=Conv.build(pf.child("conv_dw"), d_inner, d_inner, k=3, padding=1, groups=d_inner),
            s6=[S6Params.build(pf.child(f"s6.{d.value}"), d_inner, d_state) for d in DIRECTIONS],
            norm=Norm.build(pf.child("norm"), d_inner),
            w_out=Conv.build(pf.child("w_out"), d_inner, channels),
        )


def scan_expand(x: Tensor) -> list[Tensor]:
    """Unfold (N, C, H, W) into four (N, C, H*W) sequences, one per ScanDirection."""
    n, c, h, w = x.shape
    flat = reshape(x, (n, c, h * w))
    return [take(flat, d.order(h, w), axis=-1) for d in DIRECTIONS]


def scan_merge(seqs: list[Tensor], h: int, w: int) -> Tensor:
    """Undo each direction's permutation and sum the four maps back to (N, C, H, W)."""
    if len(seqs) != len(DIRECTIONS):
        raise DimensionError(f"expected {len(DIRECTIONS)} sequences, got {len(seqs)}")
    total = None
    for seq, d in zip(seqs, DIRECTIONS):
        n, c, length = seq.shape
        if length != h * w:
            raise DimensionError(f"sequence length {length} != H*W = {h * w}")
        inverse = np.argsort(d.order(h, w))
        spatial = reshape(take(seq, inverse, axis=-1), (n, c, h, w))
        total = spatial if total is None else total + spatial
    return total


def s6_forward(seq: Tensor, p: S6Params, kernel: str = "parallel") -> Tensor:
    """Selective SSM over an (N, D, L) sequence with token-dependent delta, B and C."""
    s = p.d_state
    delta = softplus(channel_linear(seq, p.w_dt, p.b_dt))
    bc = channel_linear(seq, p.w_bc)
    return selective_scan(seq, delta, p.a_log, bc[:, :s], bc[:, s:], p.d_skip, kernel=kernel)


def s6_sequential(seq: Tensor, p: S6Params) -> Tensor:
    return s6_forward(seq, p, kernel="sequential")


def s6_parallel(seq: Tensor, p: S6Params) -> Tensor:
    return s6_forward(seq, p, kernel="parallel")


def ss2d_block(x: Tensor, w: SS2DWeights, kernel: str = "parallel") -> Tensor:
    _, _, h, wd = x.shape
    d = w.d_inner
    xz = w.w_in(x)
    signal = silu(w.conv_dw(xz[:, :d]))
    gate = xz[:, d:]
    ys = [s6_forward(seq, p, kernel) for seq, p in zip(scan_expand(signal), w.s6)]
    y = w.norm(scan_merge(ys, h, wd))
    return w.w_out(y * silu(gate))
