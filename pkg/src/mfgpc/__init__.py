"""Multi-fidelity Gaussian process classification of expensive simulations."""

__version__ = "0.1.0"

from .data import (
    HIGH,
    LOW,
    BoxDomain,
    LabeledDataset,
    Standardizer,
    balanced_seed_selection,
    latin_hypercube,
    load_dataset,
    save_dataset,
)
from .inference import (
    MF,
    SF,
    SPARSE_MF,
    KernelConfig,
    SamplerConfig,
    build_model,
    hmc_sample,
    predict_class_probability,
)
from .kernels import ArdSqExpParams, PriorSpec
from .metrics import MetricsReport, compute_metrics

__all__ = [
    "__version__",
    "LOW",
    "HIGH",
    "BoxDomain",
    "LabeledDataset",
    "Standardizer",
    "latin_hypercube",
    "balanced_seed_selection",
    "save_dataset",
    "load_dataset",
    "ArdSqExpParams",
    "PriorSpec",
    "KernelConfig",
    "SamplerConfig",
    "build_model",
    "hmc_sample",
    "predict_class_probability",
    "SF",
    "MF",
    "SPARSE_MF",
    "MetricsReport",
    "compute_metrics",
]
