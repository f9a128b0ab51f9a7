"""Named parameter construction and the small weight containers used by every block."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autodiff import Param, Tensor, channel_linear, conv2d, conv_transpose2d, layer_norm


class ParamFactory:
    """Creates seeded, uniquely named parameters under a dotted prefix."""

    def __init__(self, rng: np.random.Generator, prefix: str = "", registry: set | None = None):
        self.rng = rng
        self.prefix = prefix
        self._names = registry if registry is not None else set()

    def child(self, name: str) -> "ParamFactory":
        return ParamFactory(self.rng, self._join(name), self._names)

    def _join(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def param(self, name: str, data: np.ndarray) -> Param:
        full = self._join(name)
        if full in self._names:
            raise ValueError(f"duplicate parameter name {full!r}")
        self._names.add(full)
        return Param(np.asarray(data, dtype=np.float32), full)

    def uniform(self, name: str, shape: tuple, fan_in: int) -> Param:
        bound = np.sqrt(1.0 / fan_in)
        return self.param(name, self.rng.uniform(-bound, bound, size=shape))

    def constant(self, name: str, shape: tuple, value: float) -> Param:
        return self.param(name, np.full(shape, value))


@dataclass
class Conv:
    w: Param
    b: Param | None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    @classmethod
    def build(cls, pf: ParamFactory, cin: int, cout: int, k: int = 1, stride: int = 1,
              padding: int = 0, groups: int = 1, bias: bool = True) -> "Conv":
        fan_in = (cin // groups) * k * k
        w = pf.uniform("w", (cout, cin // groups, k, k), fan_in)
        b = pf.uniform("b", (cout,), fan_in) if bias else None
        return cls(w, b, stride, padding, groups)

    def __call__(self, x: Tensor) -> Tensor:
        if self.w.shape[2:] == (1, 1) and self.stride == 1 and self.padding == 0 and self.groups == 1:
            return channel_linear(x, self.w, self.b)
        return conv2d(x, self.w, self.b, self.stride, self.padding, self.groups)


@dataclass
class ConvT:
    w: Param
    b: Param | None
    stride: int = 2

    @classmethod
    def build(cls, pf: ParamFactory, cin: int, cout: int, k: int = 2, stride: int = 2) -> "ConvT":
        fan_in = cout * k * k
        return cls(pf.uniform("w", (cin, cout, k, k), fan_in), pf.uniform("b", (cout,), fan_in), stride)

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.w, self.b, self.stride)


@dataclass
class Norm:
    gamma: Param
    beta: Param

    @classmethod
    def build(cls, pf: ParamFactory, c: int) -> "Norm":
        return cls(pf.constant("gamma", (c,), 1.0), pf.constant("beta", (c,), 0.0))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


def iter_params(obj) -> Iterator[Param]:
    """Yield every Param reachable through dataclass fields and lists, in field order."""
    if isinstance(obj, Param):
        yield obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from iter_params(getattr(obj, f.name))
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            yield from iter_params(item)
