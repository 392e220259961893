"""Train/predict bundle tying standardization, model, and trace together.

Classifiers consume physical-unit inputs; features are z-scored by the
training data before the GP sees them (configurable), and every query goes
through the same map. Retraining always starts from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BoxDomain, LabeledDataset, Standardizer
from .errors import ConfigError
from .gp.sparse import DEFAULT_NUGGET, InducingSet, kmeans_inducing
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
from .inference.predict import PredictionSummary

CLASSIFIER_KINDS = (SF, MF, SPARSE_MF)


def make_standardizer(mode: str, inputs, domain: BoxDomain | None):
    if mode == "data":
        return Standardizer.from_data(inputs)
    if mode == "domain":
        if domain is None:
            raise ConfigError("domain standardization needs a BoxDomain")
        return Standardizer.from_domain(domain)
    if mode == "none":
        return Standardizer(mean=np.zeros(np.atleast_2d(inputs).shape[1]),
                            scale=np.ones(np.atleast_2d(inputs).shape[1]))
    raise ConfigError(f"unknown standardization mode {mode!r}")


@dataclass
class FittedClassifier:
    """A trained classifier plus the input map it was trained under."""

    kind: str
    model: object
    trace: object
    standardizer: Standardizer

    def predict(self, X, seed: int = 0) -> PredictionSummary:
        return predict_class_probability(
            self.trace, self.model, self.standardizer.apply(X), seed=seed
        )

    def predict_labels(self, X, seed: int = 0, threshold: float = 0.5):
        return (self.predict(X, seed=seed).prob_mean >= threshold).astype(int)

    def diagnostics(self) -> dict:
        return self.trace.diagnostics()


def train_classifier(dataset: LabeledDataset, kind: str,
                     kernel: KernelConfig = KernelConfig(),
                     sampler: SamplerConfig = SamplerConfig(),
                     m_low_inducing: int = 30,
                     sigma: float = DEFAULT_NUGGET,
                     standardize: str = "data",
                     domain: BoxDomain | None = None,
                     inducing_seed: int = 0) -> FittedClassifier:
    """Fit one classifier kind on a physical-unit dataset."""
    if kind not in CLASSIFIER_KINDS:
        raise ConfigError(f"unknown classifier kind {kind!r}")
    work = dataset.high_only() if kind == SF else dataset
    std = make_standardizer(standardize, work.inputs, domain)
    std_ds = LabeledDataset(std.apply(work.inputs), work.labels, work.fidelity)
    inducing = None
    if kind == SPARSE_MF:
        m_low = min(m_low_inducing, std_ds.n_low)
        centers = kmeans_inducing(std_ds.inputs_low, m_low, seed=inducing_seed)
        inducing = InducingSet(
            X_u=np.vstack([centers, std_ds.inputs_high]), n_low=m_low
        )
    model = build_model(std_ds, kind, kernel, inducing=inducing, sigma=sigma)
    trace = hmc_sample(model, sampler)
    return FittedClassifier(kind=kind, model=model, trace=trace,
                            standardizer=std)
