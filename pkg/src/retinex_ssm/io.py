"""PNG images, binary checkpoints and flat ``key = value`` config files.

Checkpoint layout (all integers unsigned 32-bit little-endian)::

    b"RXMB" | version | config length | config text (UTF-8 key=value lines)
    | entry count | entries...

and each entry is ``name length | name | rank | dims... | float32 LE data``.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .attention import FusionMode
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, ImageIOError
from .model import ModelConfig, ModelWeights, build_model
from .train import TrainConfig

MAGIC = b"RXMB"
VERSION = 1
PAD_MULTIPLE = 4

# ---------------------------------------------------------------------- PNG


def load_image(path: str | Path) -> tuple[Tensor, tuple[int, int]]:
    """Read an 8-bit RGB PNG as a (1, 3, H', W') tensor in [0, 1].

    H and W are padded up to multiples of 4 by edge replication; the original
    (H, W) is returned alongside.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageIOError(f"{path}: not a PNG file (found {im.format})")
            if im.mode != "RGB":
                raise ImageIOError(f"{path}: expected 8-bit RGB, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise ImageIOError(f"{path}: no such file") from None
    except UnidentifiedImageError:
        raise ImageIOError(f"{path}: not a readable image") from None
    except (OSError, SyntaxError) as exc:
        if isinstance(exc, ImageIOError):
            raise
        raise ImageIOError(f"{path}: corrupt image ({exc})") from None
    h, w = arr.shape[:2]
    chw = arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)
    pad_h = -h % PAD_MULTIPLE
    pad_w = -w % PAD_MULTIPLE
    if pad_h or pad_w:
        chw = np.pad(chw, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    return Tensor(chw[None]), (h, w)


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and map v -> floor(255 v + 0.5)."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(t, path: str | Path, original_size: tuple[int, int] | None = None) -> None:
    arr = np.asarray(getattr(t, "data", t))
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ImageIOError(f"save_image expects a single image, got batch of {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageIOError(f"save_image expects (1, 3, H, W), got {np.shape(getattr(t, 'data', t))}")
    if original_size is not None:
        h, w = original_size
        arr = arr[:, :h, :w]
    pixels = to_bytes(arr).transpose(1, 2, 0)
    try:
        Image.fromarray(np.ascontiguousarray(pixels), mode="RGB").save(Path(path), format="PNG")
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write image ({exc})") from None


# ------------------------------------------------------------------- config

_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"batch_size"} | {"batch"}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, FusionMode):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is FusionMode:
            return FusionMode(raw.lower())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _field_types(cls) -> dict:
    hints = {"int": int, "float": float, "bool": bool, "FusionMode": FusionMode}
    return {f.name: hints[f.type if isinstance(f.type, str) else f.type.__name__] for f in dataclasses.fields(cls)}


def model_config_text(cfg: ModelConfig) -> str:
    return "".join(f"{f.name}={_format(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))


def parse_model_config(text: str) -> ModelConfig:
    values = _parse_lines(text)
    unknown = set(values) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    types = _field_types(ModelConfig)
    return ModelConfig(**{k: _parse(k, v, types[k]) for k, v in values.items()})


def _parse_lines(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    return values


def parse_config(text: str) -> tuple[ModelConfig, TrainConfig]:
    """Parse a combined model + training config; unknown keys are rejected.

    ``seed`` is shared by both halves.
    """
    values = _parse_lines(text)
    unknown = set(values) - _MODEL_KEYS - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    mtypes = _field_types(ModelConfig)
    ttypes = _field_types(TrainConfig)
    ttypes["batch"] = ttypes.pop("batch_size")
    model_kw = {k: _parse(k, v, mtypes[k]) for k, v in values.items() if k in _MODEL_KEYS}
    train_kw = {k: _parse(k, v, ttypes[k]) for k, v in values.items() if k in _TRAIN_KEYS}
    if "batch" in train_kw:
        train_kw["batch_size"] = train_kw.pop("batch")
    if "seed" in model_kw:
        train_kw["seed"] = model_kw["seed"]
    return ModelConfig(**model_kw), TrainConfig(**train_kw)


def config_text(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    lines = [f"{f.name} = {_format(getattr(model_cfg, f.name))}" for f in dataclasses.fields(model_cfg)]
    for f in dataclasses.fields(train_cfg):
        if f.name == "seed":
            continue
        key = "batch" if f.name == "batch_size" else f.name
        lines.append(f"{key} = {_format(getattr(train_cfg, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from None
    return parse_config(text)


# --------------------------------------------------------------- checkpoint


def checkpoint_bytes(weights: ModelWeights, cfg: ModelConfig | None = None) -> bytes:
    cfg = cfg or weights.config
    text = model_config_text(cfg).encode("utf-8")
    params = weights.params()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(text)), text, struct.pack("<I", len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)) + name)
        chunks.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_checkpoint(path: str | Path, weights: ModelWeights, cfg: ModelConfig | None = None) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(weights, cfg))
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot write checkpoint ({exc})") from None


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def parse_checkpoint(buf: bytes) -> ModelWeights:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        cfg = parse_model_config(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from None
    weights = build_model(cfg)
    expected = weights.named_params()
    count = r.u32()
    seen = set()
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32(rank)) if rank > 1 else ((r.u32(),) if rank == 1 else ())
        data = np.frombuffer(r.take(4 * int(np.prod(dims, dtype=np.int64))), dtype="<f4").reshape(dims)
        p = expected.get(name)
        if p is None:
            raise CheckpointError(f"unexpected parameter {name!r} for this config")
        if p.shape != dims:
            raise CheckpointError(f"parameter {name!r}: shape {dims} != expected {p.shape}")
        p.data = data.astype(np.float32)
        seen.add(name)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint entries")
    missing = set(expected) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks {len(missing)} parameters, e.g. {sorted(missing)[0]!r}")
    return weights


def load_checkpoint(path: str | Path) -> ModelWeights:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from None
    return parse_checkpoint(buf)
