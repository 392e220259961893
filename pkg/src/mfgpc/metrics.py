"""Binary classification metrics from confusion counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy, precision, recall, F1 (fractions in [0, 1]) and raw counts.

    Zero-denominator metrics come back as 0.0 with the metric name flagged.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    zero_division_flags: tuple = ()

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "zero_division_flags": list(self.zero_division_flags),
        }


def compute_metrics(predicted, true) -> MetricsReport:
    """Confusion-count metrics; inputs are 0/1 label vectors."""
    predicted = np.asarray(predicted).astype(int)
    true = np.asarray(true).astype(int)
    if predicted.shape != true.shape:
        raise ConfigError(
            f"length mismatch: {predicted.shape} predictions vs "
            f"{true.shape} labels"
        )
    tp = int(np.sum((predicted == 1) & (true == 1)))
    fp = int(np.sum((predicted == 1) & (true == 0)))
    tn = int(np.sum((predicted == 0) & (true == 0)))
    fn = int(np.sum((predicted == 0) & (true == 1)))
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(name)
            return 0.0
        return num / den

    accuracy = ratio(tp + tn, tp + fp + tn + fn, "accuracy")
    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f1 = ratio(2.0 * precision * recall, precision + recall, "f1")
    return MetricsReport(
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        tp=tp, fp=fp, tn=tn, fn=fn, zero_division_flags=tuple(flags),
    )


def labels_from_probabilities(prob, threshold: float = 0.5) -> np.ndarray:
    """Threshold class probabilities into 0/1 labels."""
    return (np.asarray(prob, dtype=float) >= threshold).astype(int)
