"""Retinex-guided low-light enhancement with a 2D selective-scan restorer, on a numpy autodiff engine."""

from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    ImageIOError,
    NumericError,
    RetinexSSMError,
    UsageError,
)
from .model import ModelConfig, ModelWeights, apply_variant, build_model, model_forward

__version__ = "0.1.0"
