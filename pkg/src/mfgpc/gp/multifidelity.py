"""Two-level autoregressive GP prior realized as a block joint covariance.

The high-fidelity latent is rho * f_low + delta with independent GP priors
on f_low and delta, which makes the joint covariance over stacked
(low, high) latents

    K_LL = k_L(X_L, X_L)
    K_LH = rho * k_L(X_L, X_H)
    K_HH = rho^2 * k_L(X_H, X_H) + k_H(X_H, X_H)

The delta process never exists as an object: it is the additive k_H term.
The assembler works over an ordered level list so more levels could slot in,
but two levels is all that is supported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ..data import HIGH, LOW, LabeledDataset
from ..errors import ConfigError, NumericalError
from ..kernels import ArdSqExpParams, chol_with_jitter, gram_matrix
from .dense import PredictiveGaussian


@dataclass(frozen=True)
class MultiFidelityParams:
    """Kernel parameters for both levels and the cross-fidelity scale rho."""

    low: ArdSqExpParams
    high: ArdSqExpParams
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "rho", float(self.rho))

    def validate(self, n_features: int | None = None) -> None:
        self.low.validate(n_features)
        self.high.validate(n_features)


@dataclass(frozen=True)
class BlockCovariance:
    """Joint covariance with the low block occupying the first n_low rows."""

    K: np.ndarray
    n_low: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ConfigError("block covariance must be square")
        if not 0 <= self.n_low <= K.shape[0]:
            raise ConfigError("block boundary outside the matrix")
        asym = np.max(np.abs(K - K.T)) if K.size else 0.0
        if asym > 1e-12 * max(1.0, np.max(np.abs(K))):
            raise NumericalError(f"covariance asymmetry {asym:.3e}")
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return self.K.shape[0]


def level_pair_gram(Xa, levels_a, Xb, levels_b,
                    params: MultiFidelityParams) -> np.ndarray:
    """Covariance between two tagged point sets under the block rule.

    Entry (i, j) depends on the fidelity tags of row i and column j:
    (L,L) -> k_L, (L,H)/(H,L) -> rho*k_L, (H,H) -> rho^2*k_L + k_H.
    """
    Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    levels_a = np.asarray(levels_a, dtype="U1")
    levels_b = np.asarray(levels_b, dtype="U1")
    rho = params.rho
    KL = gram_matrix(Xa, Xb, params.low)
    scale = np.where(levels_a[:, None] == HIGH, rho, 1.0) * np.where(
        levels_b[None, :] == HIGH, rho, 1.0
    )
    K = KL * scale
    ha = levels_a == HIGH
    hb = levels_b == HIGH
    if ha.any() and hb.any():
        K[np.ix_(ha, hb)] += gram_matrix(Xa[ha], Xb[hb], params.high)
    return K


def level_prior_variance(levels, params: MultiFidelityParams) -> np.ndarray:
    """Prior variance per tagged point: eta_L or rho^2*eta_L + eta_H."""
    levels = np.asarray(levels, dtype="U1")
    high_var = params.rho**2 * params.low.eta + params.high.eta
    return np.where(levels == HIGH, high_var, params.low.eta)


def assemble_joint(X_L, X_H, params: MultiFidelityParams) -> BlockCovariance:
    """Joint covariance over stacked (low, high) training inputs."""
    X_L = np.atleast_2d(np.asarray(X_L, dtype=float))
    X_H = np.atleast_2d(np.asarray(X_H, dtype=float))
    if X_L.size == 0:
        X_L = X_L.reshape(0, X_H.shape[1])
    if X_H.size == 0:
        X_H = X_H.reshape(0, X_L.shape[1])
    params.validate(X_L.shape[1])
    levels = np.concatenate(
        [np.full(X_L.shape[0], LOW, "U1"), np.full(X_H.shape[0], HIGH, "U1")]
    )
    X = np.vstack([X_L, X_H])
    K = level_pair_gram(X, levels, X, levels, params)
    K = 0.5 * (K + K.T)
    return BlockCovariance(K=K, n_low=X_L.shape[0])


def cross_covariance(query_X, X_L, X_H, params: MultiFidelityParams,
                     target_level: str) -> np.ndarray:
    """Covariance between query latents at one level and all training latents."""
    if target_level not in (LOW, HIGH):
        raise ConfigError(f"target_level must be '{LOW}' or '{HIGH}'")
    query_X = np.atleast_2d(np.asarray(query_X, dtype=float))
    X_L = np.atleast_2d(np.asarray(X_L, dtype=float))
    X_H = np.atleast_2d(np.asarray(X_H, dtype=float))
    if X_L.size == 0:
        X_L = X_L.reshape(0, query_X.shape[1])
    if X_H.size == 0:
        X_H = X_H.reshape(0, query_X.shape[1])
    levels_q = np.full(query_X.shape[0], target_level, "U1")
    levels = np.concatenate(
        [np.full(X_L.shape[0], LOW, "U1"), np.full(X_H.shape[0], HIGH, "U1")]
    )
    return level_pair_gram(query_X, levels_q, np.vstack([X_L, X_H]), levels, params)


def predict_high(dataset: LabeledDataset, f, params: MultiFidelityParams,
                 query_X) -> PredictiveGaussian:
    """Condition the joint prior on the stacked latents, at the high level."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != dataset.n:
        raise ConfigError(
            f"latent length {f.shape[0]} != dataset rows {dataset.n}"
        )
    block = assemble_joint(dataset.inputs_low, dataset.inputs_high, params)
    Ks = cross_covariance(
        query_X, dataset.inputs_low, dataset.inputs_high, params, HIGH
    )
    L, _ = chol_with_jitter(block.K)
    alpha = solve_triangular(L.T, solve_triangular(L, f, lower=True), lower=False)
    mean = Ks @ alpha
    V = solve_triangular(L, Ks.T, lower=True)
    prior_var = params.rho**2 * params.low.eta + params.high.eta
    variance = prior_var - np.einsum("ij,ij->j", V, V)
    return PredictiveGaussian(mean=mean, variance=variance)
