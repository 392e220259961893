"""Fully Bayesian training: HMC over hyperparameters and whitened latents."""

from .hmc import SamplerConfig, hmc_sample, log_posterior
from .models import (
    SF,
    MF,
    SPARSE_MF,
    KernelConfig,
    build_model,
)
from .predict import PredictionSummary, predict_class_probability
from .trace import PosteriorTrace, export_trace, load_trace

__all__ = [
    "SamplerConfig",
    "hmc_sample",
    "log_posterior",
    "KernelConfig",
    "build_model",
    "SF",
    "MF",
    "SPARSE_MF",
    "PosteriorTrace",
    "export_trace",
    "load_trace",
    "PredictionSummary",
    "predict_class_probability",
]
