"""Illumination estimator: channel-mean prior, three-conv feature path, lit-up image."""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Tensor, concat, mean
from .errors import DimensionError
from .layers import Conv, ParamFactory


@dataclass
class IEWeights:
    conv_fuse: Conv  # 1x1, (3 + 1) -> n_feat
    conv_dw: Conv  # 5x5 depthwise, n_feat groups
    conv_out: Conv  # 1x1, n_feat -> 3

    @classmethod
    def build(cls, pf: ParamFactory, n_feat: int = 40) -> "IEWeights":
        return cls(
            conv_fuse=Conv.build(pf.child("conv_fuse"), 4, n_feat),
            conv_dw=Conv.build(pf.child("conv_dw"), n_feat, n_feat, k=5, padding=2, groups=n_feat),
            conv_out=Conv.build(pf.child("conv_out"), n_feat, 3),
        )


def illumination_prior(image: Tensor) -> Tensor:
    """Per-pixel mean over the three colour channels, shape (N, 1, H, W)."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"channel axis: expected an (N, 3, H, W) image, got {image.shape}")
    return mean(image, axis=1, keepdims=True)


def ie_forward(image: Tensor, prior: Tensor, w: IEWeights) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(lit_up, features, illum_map)``.

    ``illum_map`` is left unbounded; ``lit_up = image * illum_map`` channel by channel.
    """
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"channel axis: expected an (N, 3, H, W) image, got {image.shape}")
    if prior.shape != (image.shape[0], 1) + image.shape[2:]:
        raise DimensionError(f"spatial axes: prior {prior.shape} does not match image {image.shape}")
    features = w.conv_dw(w.conv_fuse(concat([image, prior], axis=1)))
    illum_map = w.conv_out(features)
    return image * illum_map, features, illum_map
