"""Single-fidelity latent GP: Bernoulli-sigmoid likelihood and exact
conditioning on training latents.

All solves go through the jittered Cholesky ladder; no explicit inverse is
formed. Only marginal predictive variances are exposed publicly (the
acquisition rule needs marginals only); ``condition_full`` exists for tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import ConfigError, NumericalError
from ..kernels import ArdSqExpParams, chol_with_jitter, gram_matrix

VARIANCE_FLOOR = -1e-10


def sigmoid(f):
    """Logistic sigmoid, stable for any finite input."""
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    pos = f >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-f[pos]))
    ef = np.exp(f[~pos])
    out[~pos] = ef / (1.0 + ef)
    if out.ndim == 0:
        return float(out)
    return out


def log_likelihood(f, y) -> float:
    """Bernoulli log likelihood sum_i y_i log s(f_i) + (1-y_i) log(1-s(f_i)).

    Uses y*f - softplus(f), which cannot overflow for |f| far beyond 1e3.
    """
    f = np.atleast_1d(np.asarray(f, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if f.shape != y.shape:
        raise ConfigError(f"length mismatch: f has {f.shape}, y has {y.shape}")
    softplus = np.maximum(f, 0.0) + np.log1p(np.exp(-np.abs(f)))
    return float(np.sum(y * f - softplus))


def log_likelihood_grad(f, y) -> np.ndarray:
    """d log_likelihood / df = y - sigmoid(f)."""
    return np.asarray(y, dtype=float) - sigmoid(f)


@dataclass(frozen=True)
class PredictiveGaussian:
    """Marginal predictive moments at query points."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if mean.shape != var.shape:
            raise ConfigError("mean and variance lengths differ")
        if np.any(var < VARIANCE_FLOOR):
            raise NumericalError(
                f"predictive variance {var.min():.3e} below {VARIANCE_FLOOR}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", np.maximum(var, 0.0))


@dataclass(frozen=True)
class LatentState:
    """Latent values f and their whitened representation z with f = L z."""

    f: np.ndarray
    whitened: np.ndarray | None = None

    @classmethod
    def from_whitened(cls, chol_factor: np.ndarray, z) -> "LatentState":
        z = np.asarray(z, dtype=float)
        return cls(f=chol_factor @ z, whitened=z)

    def check_consistent(self, chol_factor: np.ndarray, tol: float = 1e-10):
        if self.whitened is None:
            return
        resid = np.linalg.norm(self.f - chol_factor @ self.whitened)
        if resid > tol * max(np.linalg.norm(self.f), 1.0):
            raise NumericalError(f"latent state inconsistent: residual {resid:.3e}")


def condition(train_X, train_f, params: ArdSqExpParams,
              query_X) -> PredictiveGaussian:
    """Exact GP conditioning: mean K*x K^-1 f, marginal variances.

    Jitter follows the shared ladder; at a training input the mean
    reproduces the training latent and the variance is at jitter scale.
    """
    K = gram_matrix(train_X, train_X, params)
    Ks = gram_matrix(query_X, train_X, params)
    L, _ = chol_with_jitter(K)
    alpha = solve_triangular(
        L.T, solve_triangular(L, np.asarray(train_f, dtype=float), lower=True),
        lower=False,
    )
    mean = Ks @ alpha
    V = solve_triangular(L, Ks.T, lower=True)
    variance = params.eta - np.einsum("ij,ij->j", V, V)
    return PredictiveGaussian(mean=mean, variance=variance)


def condition_full(train_X, train_f, params: ArdSqExpParams, query_X):
    """Conditioning with the full Q x Q predictive covariance (tests only)."""
    K = gram_matrix(train_X, train_X, params)
    Ks = gram_matrix(query_X, train_X, params)
    Kss = gram_matrix(query_X, query_X, params)
    L, _ = chol_with_jitter(K)
    alpha = solve_triangular(
        L.T, solve_triangular(L, np.asarray(train_f, dtype=float), lower=True),
        lower=False,
    )
    V = solve_triangular(L, Ks.T, lower=True)
    return Ks @ alpha, Kss - V.T @ V
