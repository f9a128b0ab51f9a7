"""L1 loss, Adam, cosine annealing, paired augmentation and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Param, Tape, Tensor, backward, mean, tabs
from .errors import ConfigError, DimensionError, UsageError
from .model import ModelConfig, ModelWeights, build_model, model_forward

logger = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 2e-4
    lr_min: float = 1e-6
    total_steps: int = 1000
    batch_size: int = 8
    crop: int = 128
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.crop < 4 or self.crop % 4:
            raise ConfigError(f"crop must be a positive multiple of 4, got {self.crop}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.lr_min <= self.lr_max:
            raise ConfigError(f"need 0 <= lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    return mean(tabs(pred - target))


# ----------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS


def adam_step(params: Sequence[Param], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place; zeroes every gradient afterwards."""
    for p in params:
        if p.grad is None or p.grad.shape != p.shape:
            raise UsageError(f"parameter {p.name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[p.name] = m
        state.v[p.name] = v
        p.data -= (lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)).astype(p.dtype)
        p.zero_grad()


def cosine_lr(step: int, cfg: TrainConfig, horizon: int | None = None) -> float:
    """``lr_min + (lr_max - lr_min) * (1 + cos(pi * step / horizon)) / 2``; horizon defaults to total_steps."""
    horizon = cfg.total_steps if horizon is None else horizon
    if not 0 <= step <= horizon:
        raise UsageError(f"step {step} outside [0, {horizon}]")
    if horizon == 0:
        return cfg.lr_max
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * step / horizon))


# -------------------------------------------------------------- augmentation


def geometric(img: np.ndarray, hflip: bool = False, vflip: bool = False, rot: int = 0) -> np.ndarray:
    """Flip / rotate the last two (H, W) axes."""
    if hflip:
        img = img[..., :, ::-1]
    if vflip:
        img = img[..., ::-1, :]
    if rot % 4:
        img = np.rot90(img, k=rot % 4, axes=(-2, -1))
    return np.ascontiguousarray(img)


def augment(pair: tuple[np.ndarray, np.ndarray], cfg: TrainConfig, rng: np.random.Generator):
    """Apply one random crop and one random flip/rotation identically to both images."""
    low, gt = pair
    if low.shape != gt.shape:
        raise DimensionError(f"low {low.shape} and gt {gt.shape} differ")
    h, w = low.shape[-2:]
    c = cfg.crop
    if h < c or w < c:
        raise DimensionError(f"spatial axes: image {h}x{w} smaller than crop {c}")
    top = int(rng.integers(0, h - c + 1))
    left = int(rng.integers(0, w - c + 1))
    hflip = cfg.hflip and bool(rng.integers(0, 2))
    vflip = cfg.vflip and bool(rng.integers(0, 2))
    rot = int(rng.integers(0, 4)) if cfg.rot90 else 0
    out = []
    for img in (low, gt):
        patch = img[..., top : top + c, left : left + c]
        out.append(geometric(patch, hflip, vflip, rot))
    return out[0], out[1]


# ---------------------------------------------------------------------- loop


@dataclass
class TrainResult:
    weights: ModelWeights
    losses: list
    lrs: list


def train_loop(
    dataset: Sequence[tuple[np.ndarray, np.ndarray]],
    weights: ModelWeights | None,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    trace_path: str | Path | None = None,
    kernel: str = "parallel",
) -> TrainResult:
    """Run ``cfg.total_steps`` updates of sample -> augment -> forward -> L1 -> backward -> Adam.

    ``dataset`` holds (low, gt) float arrays shaped (3, H, W). The learning
    rate follows the cosine schedule from ``lr_max`` at the first step to
    ``lr_min`` at the last.
    """
    if not dataset:
        raise UsageError("training dataset is empty")
    weights = weights if weights is not None else build_model(model_cfg)
    params = weights.params()
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []
    horizon = max(cfg.total_steps - 1, 1)
    losses, lrs = [], []

    trace_file = open(trace_path, "w", newline="") if trace_path else None
    writer = csv.writer(trace_file) if trace_file else None
    if writer:
        writer.writerow(["step", "lr", "l1"])
    try:
        for step in range(cfg.total_steps):
            lows, gts = [], []
            for _ in range(cfg.batch_size):
                if not order:
                    order = list(rng.permutation(len(dataset)))
                low, gt = augment(dataset[order.pop(0)], cfg, rng)
                lows.append(low)
                gts.append(gt)
            x = Tensor(np.stack(lows).astype(np.float32))
            y = Tensor(np.stack(gts).astype(np.float32))
            lr = cosine_lr(min(step, horizon), cfg, horizon)
            with Tape() as tape:
                loss = l1_loss(model_forward(x, weights, model_cfg, kernel), y)
            backward(tape, loss)
            adam_step(params, state, lr)
            value = float(loss.data)
            losses.append(value)
            lrs.append(lr)
            if writer:
                writer.writerow([step, repr(lr), repr(value)])
                trace_file.flush()
            if step % 50 == 0 or step == cfg.total_steps - 1:
                logger.info("step %d lr %.3g l1 %.5f", step, lr, value)
    finally:
        if trace_file:
            trace_file.close()
    return TrainResult(weights, losses, lrs)
