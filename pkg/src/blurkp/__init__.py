"""Blur-aware MLP keypoint detector: autodiff core, network, training and evaluation."""

from .keypoint import Keypoint
from .kernels import BACKEND as KERNEL_BACKEND
from .model import Model, ModelConfig, build_model, detect, param_count, score_map

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND", "Keypoint", "Model", "ModelConfig", "build_model", "detect",
    "param_count", "score_map",
]
