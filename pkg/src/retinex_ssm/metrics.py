"""PSNR / SSIM / RMSE for (3, H, W) images with values in [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _as_image(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"expected a (C, H, W) image, got shape {arr.shape}")
    return arr


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def rmse(a, b) -> float:
    """Root-mean-square error on the 0-255 scale."""
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((255.0 * a - 255.0 * b) ** 2)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (no padding), averaged over channels."""
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise DimensionError(f"spatial axes: image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    per_channel = (num / den).mean(axis=(-2, -1))
    return float(per_channel.mean())


@dataclass
class MetricReport:
    name: str
    psnr_db: float
    ssim: float
    rmse: float


def evaluate_pair(name: str, pred, target) -> MetricReport:
    return MetricReport(name, psnr(pred, target), ssim(pred, target), rmse(pred, target))


def mean_report(reports: list[MetricReport], name: str = "mean") -> MetricReport:
    if not reports:
        raise ValueError("no reports to average")
    return MetricReport(
        name,
        float(np.mean([r.psnr_db for r in reports])),
        float(np.mean([r.ssim for r in reports])),
        float(np.mean([r.rmse for r in reports])),
    )
