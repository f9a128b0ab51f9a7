"""Deterministic synthetic low-light / reference pairs for smoke tests and demos."""

from __future__ import annotations

import numpy as np


def reference_image(size: int = 64, seed: int = 0) -> np.ndarray:
    """Smooth colour ramps with a few flat shapes, (3, size, size) in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.stack([
        0.25 + 0.5 * xx,
        0.3 + 0.4 * yy,
        0.6 - 0.3 * xx * yy,
    ])
    for _ in range(3):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        r = rng.uniform(0.08, 0.2)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[:, mask] = rng.uniform(0.1, 0.95, size=(3, 1))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def darken(img: np.ndarray, gain: float = 0.25, gamma: float = 1.4, noise: float = 0.01, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed + 1)
    low = gain * img.astype(np.float64) ** gamma + noise * rng.standard_normal(img.shape)
    return np.clip(low, 0.0, 1.0).astype(np.float32)


def synthetic_pair(size: int = 64, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    gt = reference_image(size, seed)
    return darken(gt, seed=seed), gt
