"""Inducing-point approximation of the GP prior with a diagonal-corrected
likelihood, sparse predictive equations, and k-means inducing selection.

The latent prior becomes f ~ N(K_fu K_uu^-1 u, diag(K_ff - Q_ff) + sigma^2 I)
with Q_ff = K_uf' K_uu^-1 K_uf. Predictions use

    mu_s  = K_*u Phi K_uf Lam^-1 f
    Sig_s = K_** - Q_** + K_*u Phi K_*u'

with Phi = (K_uu + K_uf Lam^-1 K_uf')^-1 and Lam the corrected diagonal.
The nugget sigma is a fixed constant (default 0.1), not inferred; inducing
locations are never optimized. In multi-fidelity mode the high-fidelity
inducing points must sit exactly on the high-fidelity training rows, and
every kernel evaluation follows the two-level block rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ..data import HIGH, LOW, LabeledDataset
from ..errors import ConfigError, ParameterDomainError
from ..kernels import ArdSqExpParams, chol_with_jitter, gram_matrix
from .dense import PredictiveGaussian
from .multifidelity import (
    MultiFidelityParams,
    level_pair_gram,
    level_prior_variance,
)

DEFAULT_NUGGET = 0.1


@dataclass(frozen=True)
class SparseNugget:
    """Fixed diagonal noise that keeps the corrected covariance invertible."""

    sigma: float = DEFAULT_NUGGET

    def __post_init__(self):
        if self.sigma <= 0:
            raise ParameterDomainError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class InducingSet:
    """Inducing inputs; n_low marks the low/high split in multi-fidelity mode
    (None for single-fidelity). u optionally carries sampled inducing values."""

    X_u: np.ndarray
    n_low: int | None = None
    u: np.ndarray | None = None

    def __post_init__(self):
        X_u = np.atleast_2d(np.asarray(self.X_u, dtype=float))
        object.__setattr__(self, "X_u", X_u)
        if self.n_low is not None and not 0 <= self.n_low <= X_u.shape[0]:
            raise ConfigError("n_low outside the inducing set")
        if self.u is not None and np.asarray(self.u).shape[0] != X_u.shape[0]:
            raise ConfigError("u length != number of inducing points")

    @property
    def m(self) -> int:
        return self.X_u.shape[0]

    def levels(self) -> np.ndarray:
        if self.n_low is None:
            return np.full(self.m, HIGH, "U1")
        return np.concatenate(
            [np.full(self.n_low, LOW, "U1"),
             np.full(self.m - self.n_low, HIGH, "U1")]
        )


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator):
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = X[rng.integers(n)]
            continue
        centroids[i] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centroids[i]) ** 2, axis=1))
    return centroids


def lloyd_iterations(X: np.ndarray, centroids: np.ndarray, max_iter: int = 300,
                     tol: float = 1e-9):
    """Run Lloyd updates; returns (centroids, inertia history)."""
    k = centroids.shape[0]
    history = []
    for _ in range(max_iter):
        d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(X.shape[0]), assign].sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new_centroids[j] = X[members].mean(axis=0)
            else:
                # reseed an empty cluster at the worst-served point
                worst = np.argmax(d2[np.arange(X.shape[0]), assign])
                new_centroids[j] = X[worst]
        movement = np.max(np.linalg.norm(new_centroids - centroids, axis=1))
        centroids = new_centroids
        if movement < tol:
            break
    return centroids, history


def kmeans_inducing(X, m: int, seed: int) -> np.ndarray:
    """Select m cluster centroids from X via k-means++ seeded Lloyd."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if m > X.shape[0]:
        raise ConfigError(f"cannot place {m} inducing points on {X.shape[0]} rows")
    if m < 1:
        raise ConfigError("need at least one inducing point")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(X, m, rng)
    centroids, _ = lloyd_iterations(X, centroids)
    return centroids


def _sparse_factors(K_uu, K_uf, kff_diag, sigma: float):
    """B = L_uu^-1 K_uf and the corrected diagonal lam, shared by all paths."""
    L_u, _ = chol_with_jitter(K_uu)
    B = solve_triangular(L_u, K_uf, lower=True)
    lam = kff_diag - np.einsum("ij,ij->j", B, B) + sigma**2
    return L_u, B, lam


def sparse_prior_cov(X, X_u, params: ArdSqExpParams, sigma: float):
    """Mean weights K_fu K_uu^-1 (N x M) and the corrected prior diagonal.

    The mean of f given inducing values u is weights @ u.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X_u = np.atleast_2d(np.asarray(X_u, dtype=float))
    K_uu = gram_matrix(X_u, X_u, params)
    K_uf = gram_matrix(X_u, X, params)
    kff_diag = np.full(X.shape[0], params.eta)
    L_u, B, lam = _sparse_factors(K_uu, K_uf, kff_diag, sigma)
    weights = solve_triangular(L_u.T, B, lower=False).T
    return weights, lam


def _sparse_predict_core(L_u, B, lam, f, B_star, kss_diag):
    C = np.eye(B.shape[0]) + (B / lam) @ B.T
    L_c = np.linalg.cholesky(C)
    rhs = np.column_stack([B @ (np.asarray(f, dtype=float) / lam)[:, None], B_star])
    solved = solve_triangular(L_c, rhs, lower=True)
    beta, W = solved[:, 0], solved[:, 1:]
    mean = W.T @ beta
    variance = (
        kss_diag
        - np.einsum("ij,ij->j", B_star, B_star)
        + np.einsum("ij,ij->j", W, W)
    )
    return PredictiveGaussian(mean=mean, variance=variance)


def sparse_predict(train_X, X_u, f, params: ArdSqExpParams, sigma: float,
                   query_X) -> PredictiveGaussian:
    """Sparse predictive moments at query points (single fidelity)."""
    train_X = np.atleast_2d(np.asarray(train_X, dtype=float))
    X_u = np.atleast_2d(np.asarray(X_u, dtype=float))
    query_X = np.atleast_2d(np.asarray(query_X, dtype=float))
    K_uu = gram_matrix(X_u, X_u, params)
    K_uf = gram_matrix(X_u, train_X, params)
    kff_diag = np.full(train_X.shape[0], params.eta)
    L_u, B, lam = _sparse_factors(K_uu, K_uf, kff_diag, sigma)
    K_us = gram_matrix(X_u, query_X, params)
    B_star = solve_triangular(L_u, K_us, lower=True)
    kss_diag = np.full(query_X.shape[0], params.eta)
    return _sparse_predict_core(L_u, B, lam, f, B_star, kss_diag)


@dataclass(frozen=True)
class SparseMultiFidelityModel:
    """Assembled sparse two-level structure; predictions at the high level."""

    dataset: LabeledDataset
    inducing: InducingSet
    params: MultiFidelityParams
    sigma: float

    def _factors(self):
        levels_u = self.inducing.levels()
        levels_f = self.dataset.fidelity
        K_uu = level_pair_gram(self.inducing.X_u, levels_u, self.inducing.X_u,
                               levels_u, self.params)
        K_uu = 0.5 * (K_uu + K_uu.T)
        K_uf = level_pair_gram(self.inducing.X_u, levels_u,
                               self.dataset.inputs, levels_f, self.params)
        kff_diag = level_prior_variance(levels_f, self.params)
        return _sparse_factors(K_uu, K_uf, kff_diag, self.sigma)

    def prior_parts(self, u):
        """Mean of f given inducing values, and the corrected diagonal."""
        L_u, B, lam = self._factors()
        mean = B.T @ solve_triangular(L_u, np.asarray(u, dtype=float),
                                      lower=True)
        return mean, lam

    def predict_high(self, f, query_X) -> PredictiveGaussian:
        query_X = np.atleast_2d(np.asarray(query_X, dtype=float))
        L_u, B, lam = self._factors()
        levels_u = self.inducing.levels()
        levels_q = np.full(query_X.shape[0], HIGH, "U1")
        K_us = level_pair_gram(self.inducing.X_u, levels_u, query_X, levels_q,
                               self.params)
        B_star = solve_triangular(L_u, K_us, lower=True)
        kss_diag = level_prior_variance(levels_q, self.params)
        return _sparse_predict_core(L_u, B, lam, f, B_star, kss_diag)


def assemble_mf_sparse(dataset: LabeledDataset, inducing: InducingSet,
                       params: MultiFidelityParams,
                       sigma: float = DEFAULT_NUGGET) -> SparseMultiFidelityModel:
    """Build the sparse two-level model, enforcing X_Hu == X_H exactly."""
    if inducing.n_low is None:
        raise ConfigError("multi-fidelity inducing set needs an n_low split")
    X_Hu = inducing.X_u[inducing.n_low :]
    if X_Hu.shape != dataset.inputs_high.shape or not np.array_equal(
        X_Hu, dataset.inputs_high
    ):
        raise ConfigError(
            "high-fidelity inducing points must equal the high-fidelity "
            "training rows"
        )
    params.validate(dataset.dim)
    return SparseMultiFidelityModel(dataset=dataset, inducing=inducing,
                                    params=params, sigma=float(sigma))
