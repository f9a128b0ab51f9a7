"""Linear-recurrence kernels and the fused selective-scan op.

All kernels solve ``h[t] = a[t] * h[t-1] + b[t]`` with ``h[-1] = 0`` along the
last axis. ``scan_sequential`` is the reference loop. ``scan_parallel`` is a
blocked associative scan: every block is scanned with ``combine`` (all blocks
advance together), the block totals are scanned recursively, and a fix-up
pass folds each block's incoming carry into its entries.
"""

from __future__ import annotations

import numpy as np

from .autodiff.tensor import Tensor, record
from .errors import ConfigError, DimensionError, NumericError

BLOCK = 16
KERNELS = ("sequential", "parallel")


def combine(p, q):
    """Compose two affine steps: apply ``p`` first, then ``q``.

    ``(a1, b1) o (a2, b2) = (a2 * a1, a2 * b1 + b2)``.
    """
    a1, b1 = p
    a2, b2 = q
    return a2 * a1, a2 * b1 + b2


def scan_sequential(a: np.ndarray, b: np.ndarray, check: bool = True) -> np.ndarray:
    at = np.moveaxis(a, -1, 0)
    bt = np.moveaxis(b, -1, 0)
    out = np.empty((at.shape[0],) + np.broadcast_shapes(at.shape[1:], bt.shape[1:]), dtype=np.result_type(a, b))
    h = np.zeros(out.shape[1:], dtype=out.dtype)
    for t in range(at.shape[0]):
        h = at[t] * h + bt[t]
        if check and not np.isfinite(h).all():
            raise NumericError(f"non-finite hidden state at token {t}")
        out[t] = h
    return np.moveaxis(out, 0, -1)


def _scan_time_major(at: np.ndarray, bt: np.ndarray) -> None:
    """In-place inclusive scan along axis 0: afterwards ``at`` holds running
    products and ``bt`` the running state."""
    for j in range(1, at.shape[0]):
        bt[j] += at[j] * bt[j - 1]
        at[j] *= at[j - 1]


def _scan_pairs(a: np.ndarray, b: np.ndarray, block: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive scan of (a, b) pairs along the last axis; returns (products, states)."""
    length = a.shape[-1]
    nblocks = -(-length // block)
    pad = nblocks * block - length
    if pad:
        widths = [(0, 0)] * (a.ndim - 1) + [(0, pad)]
        a = np.pad(a, widths, constant_values=1)
        b = np.pad(b, widths)
    lead = a.shape[:-1]
    # block position first so every step of the in-block scan touches all blocks at once
    at = np.moveaxis(a.reshape(lead + (nblocks, block)), -1, 0).copy()
    bt = np.moveaxis(b.reshape(lead + (nblocks, block)), -1, 0).copy()
    _scan_time_major(at, bt)
    if nblocks > 1:
        if nblocks > block:
            tot_a, tot_h = _scan_pairs(at[-1], bt[-1], block)
        else:
            tot_a = np.moveaxis(at[-1], -1, 0).copy()
            tot_h = np.moveaxis(bt[-1], -1, 0).copy()
            _scan_time_major(tot_a, tot_h)
            tot_a, tot_h = np.moveaxis(tot_a, 0, -1), np.moveaxis(tot_h, 0, -1)
        # fold the carry from all previous blocks into each block
        bt[..., 1:] += at[..., 1:] * tot_h[..., :-1]
        at[..., 1:] *= tot_a[..., :-1]
    acc = np.moveaxis(at, 0, -1).reshape(lead + (nblocks * block,))[..., :length]
    h = np.moveaxis(bt, 0, -1).reshape(lead + (nblocks * block,))[..., :length]
    return acc, h


def scan_parallel(a: np.ndarray, b: np.ndarray, block: int = BLOCK, check: bool = True) -> np.ndarray:
    a, b = np.broadcast_arrays(a, b)
    if a.shape[-1] == 1:
        h = b.copy()
    else:
        h = _scan_pairs(a, b, block)[1]
    if check:
        _check_finite(h)
    return h


def _check_finite(h: np.ndarray) -> None:
    bad = ~np.isfinite(h)
    if bad.any():
        t = int(np.argmax(bad.reshape(-1, h.shape[-1]).any(axis=0)))
        raise NumericError(f"non-finite hidden state at token {t}")


def linear_scan(a: np.ndarray, b: np.ndarray, kernel: str = "parallel", check: bool = True) -> np.ndarray:
    if kernel == "sequential":
        return scan_sequential(a, b, check=check)
    if kernel == "parallel":
        return scan_parallel(a, b, check=check)
    raise ConfigError(f"unknown scan kernel {kernel!r}; expected one of {KERNELS}")


# ------------------------------------------------------------ selective scan


def _discretize(u, delta, a_log, bmat):
    # (N, D, L) x (D, S) -> (N, D, S, L)
    a = -np.exp(a_log)
    decay = np.exp(delta[:, :, None, :] * a[None, :, :, None])
    drive = (delta * u)[:, :, None, :] * bmat[:, None, :, :]
    return a, decay, drive


def selective_scan_forward(u, delta, a_log, bmat, cmat, d_skip, kernel="parallel"):
    """Numpy forward of the selective scan; returns ``(y, h, decay)``.

    u, delta: (N, D, L); a_log: (D, S); bmat, cmat: (N, S, L); d_skip: (D,).
    """
    _, decay, drive = _discretize(u, delta, a_log, bmat)
    h = linear_scan(decay, drive, kernel)
    y = (h * cmat[:, None, :, :]).sum(axis=2) + d_skip[None, :, None] * u
    return y, h, decay


def selective_scan_backward(g, u, delta, a_log, bmat, cmat, d_skip, h, decay, kernel="parallel"):
    a = -np.exp(a_log)
    g_d = (g * u).sum(axis=(0, 2))
    g_u = g * d_skip[None, :, None]
    g_c = (h * g[:, :, None, :]).sum(axis=1)
    g_h = g[:, :, None, :] * cmat[:, None, :, :]

    # adjoint recurrence runs right-to-left: lam[t] = g_h[t] + decay[t+1] * lam[t+1]
    next_decay = np.concatenate([decay[..., 1:], np.ones_like(decay[..., :1])], axis=-1)
    lam = linear_scan(next_decay[..., ::-1], g_h[..., ::-1], kernel, check=False)[..., ::-1]
    h_prev = np.concatenate([np.zeros_like(h[..., :1]), h[..., :-1]], axis=-1)

    g_drive = lam
    g_dA = lam * h_prev * decay  # d/d(delta * A)
    du_b = (g_drive * bmat[:, None, :, :]).sum(axis=2)  # (N, D, L)
    g_u = g_u + du_b * delta
    g_delta = du_b * u + (g_dA * a[None, :, :, None]).sum(axis=2)
    g_b = (g_drive * (delta * u)[:, :, None, :]).sum(axis=1)
    g_a = (g_dA * delta[:, :, None, :]).sum(axis=(0, 3))
    g_alog = g_a * a
    return g_u, g_delta, g_alog, g_b, g_c, g_d


def selective_scan(
    u: Tensor,
    delta: Tensor,
    a_log: Tensor,
    bmat: Tensor,
    cmat: Tensor,
    d_skip: Tensor,
    kernel: str = "parallel",
) -> Tensor:
    """Differentiable selective scan with ``A = -exp(a_log)`` and ``B_bar = delta * B``."""
    n, d, length = u.shape
    s = a_log.shape[1]
    if delta.shape != u.shape:
        raise DimensionError(f"delta shape {delta.shape} != input shape {u.shape}")
    if a_log.shape != (d, s) or d_skip.shape != (d,):
        raise DimensionError(f"state params must be ({d}, S) and ({d},), got {a_log.shape}, {d_skip.shape}")
    if bmat.shape != (n, s, length) or cmat.shape != (n, s, length):
        raise DimensionError(f"B/C must be {(n, s, length)}, got {bmat.shape}, {cmat.shape}")
    y, h, decay = selective_scan_forward(u.data, delta.data, a_log.data, bmat.data, cmat.data, d_skip.data, kernel)
    if not np.isfinite(y).all():
        _check_finite(y)

    def bw(g):
        return selective_scan_backward(
            g, u.data, delta.data, a_log.data, bmat.data, cmat.data, d_skip.data, h, decay, kernel
        )

    return record("selective_scan", y, (u, delta, a_log, bmat, cmat, d_skip), bw)
