"""Amortised maximum-likelihood learning with a kernel-ridge gradient model."""
from . import autodiff, kernels, krr, models
from .krr import Hyperparams, KernelRidgeGradientModel
from .trainer import AmortisedWakeSleep, TrainConfig, train

__all__ = ["autodiff", "kernels", "krr", "models", "Hyperparams", "KernelRidgeGradientModel",
           "AmortisedWakeSleep", "TrainConfig", "train"]
__version__ = "0.1.0"
