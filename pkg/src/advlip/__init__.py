"""Speaker-independent lipreading with domain-adversarial training, built on
a small from-scratch numpy network stack with an optional compiled LSTM core.
"""

from ._kernels import BACKEND
from .errors import (
    AdvlipError,
    ConfigError,
    DataIntegrityError,
    NumericalError,
    ShapeError,
)
from .model import Model, ModelConfig, build_model, forward_sequence, load_checkpoint, save_checkpoint
from .tensor import Rng, derive_seed

__version__ = "0.1.0"

__all__ = [
    "AdvlipError",
    "BACKEND",
    "ConfigError",
    "DataIntegrityError",
    "Model",
    "ModelConfig",
    "NumericalError",
    "Rng",
    "ShapeError",
    "build_model",
    "derive_seed",
    "forward_sequence",
    "load_checkpoint",
    "save_checkpoint",
    "__version__",
]
