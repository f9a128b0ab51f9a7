"""Two-level U-shaped restorer built from IFSSM blocks, plus the end-to-end model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .attention import FusionMode, IFAWeights, elementwise_fuse, ifa_forward, igmsa_forward
from .autodiff import Param, Tensor, concat, gelu
from .errors import ConfigError, DimensionError
from .illumination import IEWeights, ie_forward, illumination_prior
from .layers import Conv, ConvT, Norm, ParamFactory, iter_params
from .ss2d import SS2DWeights, ss2d_block

LEVELS = 2
FFN_EXPANSION = 4


@dataclass(frozen=True)
class ModelConfig:
    n_feat: int = 40
    levels: int = LEVELS
    d_state_base: int = 16
    d_state_fixed: bool = False
    fusion: FusionMode = FusionMode.IFA
    ss2d_enabled: bool = True
    heads_base_width: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.levels != LEVELS:
            raise ConfigError(f"levels must be {LEVELS}, got {self.levels}")
        if self.n_feat < 1 or self.d_state_base < 1 or self.heads_base_width < 1:
            raise ConfigError("n_feat, d_state_base and heads_base_width must be positive")
        if self.n_feat % self.heads_base_width:
            raise ConfigError(f"n_feat={self.n_feat} not divisible by heads_base_width={self.heads_base_width}")
        if not isinstance(self.fusion, FusionMode):
            object.__setattr__(self, "fusion", FusionMode(self.fusion))

    def channels(self, level: int) -> int:
        return self.n_feat * 2**level

    def d_state(self, level: int) -> int:
        return self.d_state_base if self.d_state_fixed else self.d_state_base * 2**level

    def heads(self, level: int) -> int:
        return self.channels(level) // self.heads_base_width


VARIANTS = {
    "fixedhs": {"d_state_fixed": True},
    "nofb": {"fusion": FusionMode.ELEMENTWISE},
    "noss2d": {"ss2d_enabled": False},
    "igmsa": {"fusion": FusionMode.IGMSA},
}


def apply_variant(cfg: ModelConfig, variant: str) -> ModelConfig:
    try:
        changes = VARIANTS[variant.lower()]
    except KeyError:
        raise ConfigError(f"unknown ablation variant {variant!r}; expected one of {sorted(VARIANTS)}") from None
    return dataclasses.replace(cfg, **changes)


@dataclass
class IFSSMWeights:
    ln1: Norm
    ln2: Norm
    ln3: Norm
    ifa: IFAWeights | None
    ss2d: SS2DWeights | None
    ffn_in: Conv
    ffn_out: Conv

    @classmethod
    def build(cls, pf: ParamFactory, cfg: ModelConfig, level: int) -> "IFSSMWeights":
        c = cfg.channels(level)
        use_attn = cfg.fusion is not FusionMode.ELEMENTWISE
        return cls(
            ln1=Norm.build(pf.child("ln1"), c),
            ln2=Norm.build(pf.child("ln2"), c),
            ln3=Norm.build(pf.child("ln3"), c),
            ifa=IFAWeights.build(pf.child("ifa"), c, cfg.heads(level)) if use_attn else None,
            ss2d=SS2DWeights.build(pf.child("ss2d"), c, cfg.d_state(level)) if cfg.ss2d_enabled else None,
            ffn_in=Conv.build(pf.child("ffn_in"), c, FFN_EXPANSION * c),
            ffn_out=Conv.build(pf.child("ffn_out"), FFN_EXPANSION * c, c),
        )


@dataclass
class EncoderLevel:
    block: IFSSMWeights
    down: Conv  # 4x4, stride 2: C -> 2C


@dataclass
class DecoderLevel:
    up: ConvT  # 2x2, stride 2: 2C -> C
    fuse: Conv  # 1x1 after skip concat: 2C -> C
    block: IFSSMWeights


@dataclass
class IFVMWeights:
    embed: Conv
    enc: list
    bottleneck: IFSSMWeights
    dec: list  # indexed by level, executed deepest first
    out: Conv
    flu_pyramid: list

    @classmethod
    def build(cls, pf: ParamFactory, cfg: ModelConfig) -> "IFVMWeights":
        n = cfg.n_feat
        enc, dec, pyramid = [], [], []
        for lvl in range(cfg.levels):
            c = cfg.channels(lvl)
            name = f"enc{lvl}"
            enc.append(EncoderLevel(
                IFSSMWeights.build(pf.child(name), cfg, lvl),
                Conv.build(pf.child(f"{name}.down"), c, 2 * c, k=4, stride=2, padding=1),
            ))
        bottleneck = IFSSMWeights.build(pf.child("bottleneck"), cfg, cfg.levels)
        for lvl in reversed(range(cfg.levels)):
            c = cfg.channels(lvl)
            name = f"dec{lvl}"
            dec.insert(0, DecoderLevel(
                ConvT.build(pf.child(f"{name}.up"), 2 * c, c),
                Conv.build(pf.child(f"{name}.fuse"), 2 * c, c),
                IFSSMWeights.build(pf.child(name), cfg, lvl),
            ))
        for lvl in range(cfg.levels):
            c = cfg.channels(lvl)
            pyramid.append(Conv.build(pf.child(f"flu{lvl + 1}"), c, 2 * c, k=4, stride=2, padding=1))
        return cls(
            embed=Conv.build(pf.child("embed"), 3, n, k=3, padding=1),
            enc=enc,
            bottleneck=bottleneck,
            dec=dec,
            out=Conv.build(pf.child("out"), n, 3, k=3, padding=1),
            flu_pyramid=pyramid,
        )


@dataclass
class ModelWeights:
    ie: IEWeights
    ifvm: IFVMWeights
    config: ModelConfig = field(compare=False)

    def params(self) -> list[Param]:
        return list(iter_params(self.ie)) + list(iter_params(self.ifvm))

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def astype(self, dtype) -> "ModelWeights":
        """Convert every parameter (and its gradient) in place."""
        for p in self.params():
            p.data = np.ascontiguousarray(p.data, dtype=dtype)
            p.grad = np.zeros_like(p.data)
        return self


def build_model(cfg: ModelConfig) -> ModelWeights:
    root = ParamFactory(np.random.default_rng(cfg.seed))
    return ModelWeights(IEWeights.build(root.child("ie"), cfg.n_feat), IFVMWeights.build(root.child("ifvm"), cfg), cfg)


def census(weights: ModelWeights) -> dict[str, tuple]:
    return {p.name: p.shape for p in weights.params()}


def param_census(cfg: ModelConfig) -> dict[str, tuple]:
    return census(build_model(cfg))


def d_state_trace(weights: ModelWeights) -> list[int]:
    """SS2D state size at encoder levels then the bottleneck (empty when SS2D is off)."""
    blocks = [e.block for e in weights.ifvm.enc] + [weights.ifvm.bottleneck]
    return [b.ss2d.s6[0].d_state for b in blocks if b.ss2d is not None]


# ------------------------------------------------------------------ forward


def ifssm_forward(x: Tensor, f_l: Tensor, w: IFSSMWeights, cfg: ModelConfig, kernel: str = "parallel") -> Tensor:
    if x.shape != f_l.shape:
        raise DimensionError(f"block input {x.shape} and illumination level {f_l.shape} differ")
    normed = w.ln1(x)
    if cfg.fusion is FusionMode.IFA:
        fused = ifa_forward(normed, f_l, w.ifa)
    elif cfg.fusion is FusionMode.IGMSA:
        fused = igmsa_forward(normed, f_l, w.ifa)
    else:
        fused = elementwise_fuse(normed, f_l)
    y = x + fused
    if cfg.ss2d_enabled:
        y = y + ss2d_block(w.ln2(y), w.ss2d, kernel)
    return y + w.ffn_out(gelu(w.ffn_in(w.ln3(y))))


def _check_divisible(shape, multiple: int = 4) -> None:
    h, w = shape[-2:]
    if h % multiple or w % multiple:
        raise DimensionError(f"spatial axes: H={h}, W={w} must be multiples of {multiple}")


def build_flu_pyramid(f_lu: Tensor, w: IFVMWeights) -> list[Tensor]:
    _check_divisible(f_lu.shape, 2 ** len(w.flu_pyramid))
    levels = [f_lu]
    for conv in w.flu_pyramid:
        levels.append(conv(levels[-1]))
    return levels


def ifvm_forward(
    lit_up: Tensor,
    f_lu: Tensor,
    w: IFVMWeights,
    cfg: ModelConfig,
    kernel: str = "parallel",
    trace: list | None = None,
) -> Tensor:
    _check_divisible(lit_up.shape)
    pyramid = build_flu_pyramid(f_lu, w)
    x = w.embed(lit_up)
    skips = []
    for lvl, level in enumerate(w.enc):
        x = ifssm_forward(x, pyramid[lvl], level.block, cfg, kernel)
        _note(trace, f"enc{lvl}", x)
        skips.append(x)
        x = level.down(x)
    x = ifssm_forward(x, pyramid[-1], w.bottleneck, cfg, kernel)
    _note(trace, "bottleneck", x)
    for lvl in reversed(range(len(w.dec))):
        level = w.dec[lvl]
        x = level.fuse(concat([level.up(x), skips[lvl]], axis=1))
        x = ifssm_forward(x, pyramid[lvl], level.block, cfg, kernel)
        _note(trace, f"dec{lvl}", x)
    return w.out(x) + lit_up


def _note(trace, stage: str, x: Tensor) -> None:
    if trace is not None:
        trace.append((stage, x.shape))


def model_forward(
    image: Tensor,
    weights: ModelWeights,
    cfg: ModelConfig | None = None,
    kernel: str = "parallel",
    trace: list | None = None,
) -> Tensor:
    cfg = cfg or weights.config
    _check_divisible(image.shape)
    lit_up, f_lu, _ = ie_forward(image, illumination_prior(image), weights.ie)
    return ifvm_forward(lit_up, f_lu, weights.ifvm, cfg, kernel, trace)
