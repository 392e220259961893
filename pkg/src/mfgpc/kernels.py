"""ARD squared-exponential kernel, hyperparameter priors, and factorizations.

The kernel is k(x, x') = eta * exp(-sum_m (x_m - x'_m)^2 / (2 l_m^2)) with
either one shared lengthscale (M = 1, summed over all features) or one per
feature (M = D). Priors follow HalfNormal(5) on eta, Gamma(alpha=2, rate=2)
on each lengthscale, and Normal(0, 10) on the cross-fidelity scale. The Gamma
beta is interpreted as a rate; the choice is pinned by tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CholeskyError, ConfigError, ParameterDomainError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Jitter ladder: start at 1e-8 * mean(diag), double until 1e-2 * mean(diag).
JITTER_START = 1e-8
JITTER_MAX = 1e-2


@dataclass(frozen=True)
class ArdSqExpParams:
    """Kernel amplitude eta and M lengthscales (M = 1 shared or M = D).

    Construction is permissive so that out-of-support values can be scored
    by ``log_prior`` (which returns -inf); evaluation functions validate.
    """

    eta: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "lengthscales", ls)

    @property
    def n_lengthscales(self) -> int:
        return self.lengthscales.shape[0]

    def in_domain(self) -> bool:
        return self.eta > 0 and bool(np.all(self.lengthscales > 0))

    def validate(self, n_features: int | None = None) -> None:
        if not self.in_domain():
            raise ParameterDomainError(
                f"eta and lengthscales must be positive, got eta={self.eta}, "
                f"lengthscales={self.lengthscales}"
            )
        if n_features is not None and self.n_lengthscales not in (1, n_features):
            raise ParameterDomainError(
                f"need 1 or {n_features} lengthscales, got {self.n_lengthscales}"
            )


@dataclass(frozen=True)
class PriorSpec:
    """Hyper-prior constants: HalfNormal eta, Gamma(alpha, rate) lengthscales,
    Normal(0, sigma) cross-fidelity scale."""

    eta_sigma: float = 5.0
    gamma_alpha: float = 2.0
    gamma_beta: float = 2.0
    rho_sigma: float = 10.0

    def __post_init__(self):
        for name in ("eta_sigma", "gamma_alpha", "gamma_beta", "rho_sigma"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


def sq_distances(X, X2, per_feature: bool) -> np.ndarray:
    """Squared distances: shape (M, N, N2) with M = D per-feature matrices,
    or M = 1 holding the total squared distance."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != X2.shape[1]:
        raise ConfigError(
            f"feature dimensions differ: {X.shape[1]} vs {X2.shape[1]}"
        )
    diff = X[:, None, :] - X2[None, :, :]
    np.square(diff, out=diff)
    if per_feature:
        return np.moveaxis(diff, 2, 0)
    return diff.sum(axis=2)[None, :, :]


def _scaled_exponent(sqd: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """exp(-0.5 * sum_m sqd[m] / l_m^2) for a stacked distance array."""
    w = np.tensordot(1.0 / lengthscales**2, sqd, axes=(0, 0))
    return np.exp(-0.5 * w)


def kernel_eval(x, x2, params: ArdSqExpParams) -> float:
    """Evaluate the kernel at a single pair of points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ConfigError(f"point dimensions differ: {x.shape} vs {x2.shape}")
    params.validate(x.shape[0])
    d2 = (x - x2) ** 2
    if params.n_lengthscales == 1:
        expo = d2.sum() / params.lengthscales[0] ** 2
    else:
        expo = float(np.sum(d2 / params.lengthscales**2))
    return params.eta * math.exp(-0.5 * expo)


def gram_matrix(X, X2, params: ArdSqExpParams) -> np.ndarray:
    """Kernel matrix between two point sets (symmetric PSD when X2 is X)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    params.validate(X.shape[1])
    sqd = sq_distances(X, X2, per_feature=params.n_lengthscales > 1)
    return params.eta * _scaled_exponent(sqd, params.lengthscales)


def half_normal_logpdf(x: float, sigma: float) -> float:
    if x < 0:
        return -math.inf
    return (
        math.log(2.0) - math.log(sigma) - _HALF_LOG_2PI - 0.5 * (x / sigma) ** 2
    )


def gamma_logpdf(x: float, alpha: float, rate: float) -> float:
    if x <= 0:
        return -math.inf
    return (
        alpha * math.log(rate)
        - math.lgamma(alpha)
        + (alpha - 1.0) * math.log(x)
        - rate * x
    )


def normal_logpdf(x: float, mu: float, sigma: float) -> float:
    return -math.log(sigma) - _HALF_LOG_2PI - 0.5 * ((x - mu) / sigma) ** 2


def log_prior(params: ArdSqExpParams, rho: float | None,
              spec: PriorSpec = PriorSpec()) -> float:
    """Sum of hyper-prior log densities; -inf outside the support.

    The rho term participates only when a cross-fidelity scale is passed
    (multi-fidelity use).
    """
    lp = half_normal_logpdf(params.eta, spec.eta_sigma)
    for ell in params.lengthscales:
        lp += gamma_logpdf(float(ell), spec.gamma_alpha, spec.gamma_beta)
    if rho is not None:
        lp += normal_logpdf(float(rho), 0.0, spec.rho_sigma)
    return lp


def chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of K + jitter*I, escalating jitter from 1e-8 to 1e-2
    of the mean diagonal before giving up."""
    mean_diag = float(np.mean(np.diag(K)))
    if not np.isfinite(mean_diag) or mean_diag <= 0:
        raise CholeskyError(f"matrix diagonal is not positive (mean {mean_diag})")
    jitter = JITTER_START * mean_diag
    limit = JITTER_MAX * mean_diag
    eye = np.eye(K.shape[0])
    while jitter <= limit * (1 + 1e-12):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise CholeskyError(
        f"factorization failed with jitter up to {limit:.3e} "
        f"(mean diagonal {mean_diag:.3e})"
    )
