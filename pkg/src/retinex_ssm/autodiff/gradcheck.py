"""Central finite differences, the independent oracle for ``backward``."""

from __future__ import annotations

from typing import Callable

import numpy as np


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-3,
    indices: np.ndarray | None = None,
) -> np.ndarray:
    """Estimate d f / d x by central differences, accumulating in float64.

    ``f`` must be pure. ``x`` is perturbed in place and restored after each
    probe. With ``indices`` (flat positions) only those entries are probed
    and the result has one entry per index; otherwise it has ``x.shape``.
    """
    flat = x.reshape(-1)
    positions = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.empty(len(positions), dtype=np.float64)
    for k, pos in enumerate(positions):
        orig = flat[pos]
        flat[pos] = orig + h
        fp = float(f(x))
        flat[pos] = orig - h
        fm = float(f(x))
        flat[pos] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape) if indices is None else out


def rel_l2(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||); zero when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
