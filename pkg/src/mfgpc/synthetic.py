"""Analytic two-level sine-boundary labelers and their training designs.

High level:  1  iff  0.5  + sin(2.5 pi x1) / 3   - x2 > 0
Low level:   1  iff  0.45 + sin(2.2 pi x1) / 2.5 - x2 > 0

Both are defined on the unit square with a strict inequality on the zero set
(measure zero, pinned for determinism). The low-fidelity boundary is a
perturbed version of the high one, so the two labelers disagree on a thin
band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LOW, BoxDomain, LabeledDataset, latin_hypercube
from .errors import ConfigError

UNIT_SQUARE = BoxDomain(lower=np.zeros(2), upper=np.ones(2))

# number of near-boundary and space-filling low-fidelity samples, and how
# far from the boundary "close" reaches (the margin is a pinned choice)
N_NEAR_BOUNDARY = 30
N_SPACE_FILLING = 15
BOUNDARY_MARGIN = 0.05


@dataclass(frozen=True)
class SineBoundarySpec:
    """offset + sin(frequency * x1) / divisor - x2 > 0"""

    offset: float
    divisor: float
    frequency: float

    def margin(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (
            self.offset + np.sin(self.frequency * X[..., 0]) / self.divisor
            - X[..., 1]
        )

    def boundary_x2(self, x1) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        return self.offset + np.sin(self.frequency * x1) / self.divisor


HIGH_BOUNDARY = SineBoundarySpec(offset=0.5, divisor=3.0,
                                 frequency=2.5 * np.pi)
LOW_BOUNDARY = SineBoundarySpec(offset=0.45, divisor=2.5,
                                frequency=2.2 * np.pi)


def _label(X, spec: SineBoundarySpec):
    X = np.asarray(X, dtype=float)
    scalar = X.ndim == 1
    pts = np.atleast_2d(X)
    if pts.shape[1] != 2:
        raise ConfigError("synthetic labelers take 2-feature points")
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ConfigError("points must lie in the unit square")
    labels = (spec.margin(pts) > 0.0).astype(np.int64)
    return int(labels[0]) if scalar else labels


def label_high(x):
    """High-fidelity label; accepts one point or a matrix of points."""
    return _label(x, HIGH_BOUNDARY)


def label_low(x):
    """Low-fidelity label; accepts one point or a matrix of points."""
    return _label(x, LOW_BOUNDARY)


def make_low_fidelity_design(seed: int) -> LabeledDataset:
    """45 low-fidelity samples: 30 hugging the low boundary, 15 from an LHS.

    Near-boundary points sample x1 uniformly and offset x2 from the analytic
    boundary by at most the margin, rejecting anything outside the square.
    """
    rng = np.random.default_rng(seed)
    near = np.empty((N_NEAR_BOUNDARY, 2))
    count = 0
    while count < N_NEAR_BOUNDARY:
        x1 = rng.uniform(0.0, 1.0)
        x2 = LOW_BOUNDARY.boundary_x2(x1) + rng.uniform(
            -BOUNDARY_MARGIN, BOUNDARY_MARGIN
        )
        if 0.0 <= x2 <= 1.0:
            near[count] = (x1, x2)
            count += 1
    filler = latin_hypercube(UNIT_SQUARE, N_SPACE_FILLING,
                             seed=int(rng.integers(2**31)))
    inputs = np.vstack([near, filler])
    return LabeledDataset(
        inputs=inputs,
        labels=label_low(inputs),
        fidelity=np.full(inputs.shape[0], LOW, "U1"),
    )
