"""Shared mixture-of-adapters fine-tuning on a small numpy transformer."""

from .config import ExperimentConfig, ModelConfig, TaskConfig, TrainConfig, load_config
from .model import AdapterXModel, build_model
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "AdapterXModel",
    "ExperimentConfig",
    "ModelConfig",
    "TaskConfig",
    "Tensor",
    "TrainConfig",
    "build_model",
    "load_config",
]
