"""Posterior density and exact gradients for the three classifier kinds.

The unconstrained state vector is (hyperparameters, whitened latents):
eta and lengthscales are log-transformed, rho stays identity, and latents
are non-centered (f = L z with L the Cholesky factor of the prior
covariance; the sparse model whitens u and f hierarchically). Gradients
with respect to the kernel hyperparameters flow through the factorization
via the reverse-mode Cholesky rule, so one backward pass prices every
hyperparameter.

Inside the density, factorizations use only the base jitter (1e-8 of the
mean diagonal, included in the gradient); a failed factorization signals a
rejected state (-inf) instead of escalating, which keeps the sampled density
well defined. Prediction paths use the full jitter ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.linalg import solve_triangular as _solve_triangular
from scipy.linalg.lapack import dtrtrs as _dtrtrs

solve_triangular = partial(_solve_triangular, check_finite=False)

from ..data import HIGH, LabeledDataset
from ..errors import CholeskyError, ConfigError
from ..gp.dense import log_likelihood, log_likelihood_grad, sigmoid
from ..gp.sparse import DEFAULT_NUGGET, InducingSet
from ..kernels import JITTER_START, PriorSpec, chol_with_jitter, sq_distances

SF = "sf"
MF = "mf"
SPARSE_MF = "sparse-mf"

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_PHI_BOUND = 40.0  # |log eta|, |log ell| beyond this is a rejected state

_REJECT = (-np.inf, None)


@dataclass(frozen=True)
class KernelConfig:
    """Number of lengthscales (1 shared or one per feature) and priors."""

    n_lengthscales: int = 1
    priors: PriorSpec = field(default_factory=PriorSpec)

    def validate(self, n_features: int) -> None:
        if self.n_lengthscales not in (1, n_features):
            raise ConfigError(
                f"n_lengthscales must be 1 or {n_features}, "
                f"got {self.n_lengthscales}"
            )


def _phi_half_diag(A: np.ndarray) -> np.ndarray:
    """Lower triangle of A with the diagonal halved (Cholesky pushforward map)."""
    out = np.tril(A)
    idx = np.diag_indices_from(out)
    out[idx] *= 0.5
    return out


def _tri_solve_t(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """L^T x = B via LAPACK directly (hot path, inputs known finite)."""
    x, info = _dtrtrs(L, B, lower=1, trans=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dtrtrs failed with info={info}")
    return x


def _chol_reverse(L: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Adjoint of K -> chol(K): K_bar = sym(L^-T Phi(L^T L_bar) L^-1).

    T must already be L^T @ L_bar.
    """
    if L.shape[0] == 0:
        return np.zeros_like(L)
    P = _phi_half_diag(T)
    A = _tri_solve_t(L, P)
    Kbar = _tri_solve_t(L, A.T).T
    return 0.5 * (Kbar + Kbar.T)


class _HyperBlock:
    """Shared handling of hyperparameter transforms, priors, and gradients."""

    # subclasses set: hyper_names, hyper_kinds ('eta'|'ell'|'rho'), priors

    def n_hyper(self) -> int:
        return len(self.hyper_names)

    def constrain_hyper(self, phi: np.ndarray) -> np.ndarray:
        theta = np.array(phi, dtype=float, copy=True)
        for j, kind in enumerate(self.hyper_kinds):
            if kind != "rho":
                theta[..., j] = np.exp(theta[..., j])
        return theta

    def unconstrain_hyper(self, theta: np.ndarray) -> np.ndarray:
        phi = np.array(theta, dtype=float, copy=True)
        for j, kind in enumerate(self.hyper_kinds):
            if kind != "rho":
                phi[..., j] = np.log(phi[..., j])
        return phi

    def report(self, x: np.ndarray) -> np.ndarray:
        return self.constrain_hyper(x[: self.n_hyper()])

    @property
    def report_names(self):
        return self.hyper_names

    def _prior_lp_grad(self, phi, theta):
        """Log prior of the constrained values plus transform Jacobians,
        and its gradient in the unconstrained parameters."""
        pr = self.priors
        lp = 0.0
        grad = np.empty_like(phi)
        for j, kind in enumerate(self.hyper_kinds):
            t, p = theta[j], phi[j]
            if kind == "eta":
                lp += (
                    math.log(2.0) - math.log(pr.eta_sigma) - _HALF_LOG_2PI
                    - 0.5 * (t / pr.eta_sigma) ** 2 + p
                )
                grad[j] = 1.0 - (t / pr.eta_sigma) ** 2
            elif kind == "ell":
                lp += (
                    pr.gamma_alpha * math.log(pr.gamma_beta)
                    - math.lgamma(pr.gamma_alpha)
                    + pr.gamma_alpha * p - pr.gamma_beta * t
                )
                grad[j] = pr.gamma_alpha - pr.gamma_beta * t
            else:  # rho
                lp += (
                    -math.log(pr.rho_sigma) - _HALF_LOG_2PI
                    - 0.5 * (t / pr.rho_sigma) ** 2
                )
                grad[j] = -t / pr.rho_sigma**2
        return lp, grad

    def initial_position(self, rng: np.random.Generator) -> np.ndarray:
        x = np.zeros(self.dim)
        p = self.n_hyper()
        x[:p] = 0.2 * rng.standard_normal(p)
        for j, kind in enumerate(self.hyper_kinds):
            if kind == "rho":
                x[j] += 1.0
        x[p:] = 0.1 * rng.standard_normal(self.dim - p)
        return x

    def positions_from_records(self, names, values: np.ndarray) -> np.ndarray:
        """Rebuild unconstrained positions from exported (name, value) series."""
        wanted = list(self.hyper_names) + list(self.latent_names)
        index = {n: i for i, n in enumerate(names)}
        missing = [n for n in wanted if n not in index]
        if missing:
            raise ConfigError(f"trace is missing parameters: {missing[:5]}")
        cols = np.stack([values[..., index[n]] for n in wanted], axis=-1)
        p = self.n_hyper()
        out = cols.copy()
        out[..., :p] = self.unconstrain_hyper(cols[..., :p])
        return out


def _batched_gram(sqd, inv_ls_sq):
    """exp(-0.5 sum_m sqd[m] * w[b, m]) for a batch of lengthscale draws."""
    if sqd.shape[0] == 1:
        W = sqd[0] * (-0.5 * inv_ls_sq[:, 0, None, None])
    else:
        W = np.tensordot(-0.5 * inv_ls_sq, sqd, axes=(1, 0))
    return np.exp(W, out=W)


class SingleFidelityGP(_HyperBlock):
    """Dense single-level classifier model."""

    kind = SF

    def __init__(self, X, y, config: KernelConfig):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float)
        if self.X.shape[0] != self.y.shape[0]:
            raise ConfigError("inputs and labels disagree in length")
        config.validate(self.X.shape[1])
        self.config = config
        self.priors = config.priors
        self.n = self.X.shape[0]
        self.m_ls = config.n_lengthscales
        self.sqd = sq_distances(self.X, self.X, per_feature=self.m_ls > 1)
        if self.m_ls == 1:
            self.hyper_names = ("eta", "ell")
        else:
            self.hyper_names = ("eta",) + tuple(
                f"ell[{m}]" for m in range(self.m_ls)
            )
        self.hyper_kinds = ("eta",) + ("ell",) * self.m_ls
        self.latent_names = tuple(f"z[{i}]" for i in range(self.n))
        self.dim = self.n_hyper() + self.n

    def _kernel_parts(self, theta):
        eta, ls = theta[0], theta[1:]
        E = _batched_gram(self.sqd, (1.0 / ls**2)[None, :])[0]
        K = eta * E
        jitter = JITTER_START * eta  # mean diagonal is eta
        K[np.diag_indices(self.n)] += jitter
        return E, K

    def logp_grad(self, x):
        p = self.n_hyper()
        phi, z = x[:p], x[p:]
        if np.any(np.abs(phi) > _PHI_BOUND):
            return _REJECT
        theta = self.constrain_hyper(phi)
        eta, ls = theta[0], theta[1:]
        E, K = self._kernel_parts(theta)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return _REJECT
        f = L @ z
        g = log_likelihood_grad(f, self.y)
        lp_prior, grad_phi = self._prior_lp_grad(phi, theta)
        lp = (
            lp_prior
            - 0.5 * z @ z - self.n * _HALF_LOG_2PI
            + log_likelihood(f, self.y)
        )
        grad_z = -z + L.T @ g
        Kbar = _chol_reverse(L, np.outer(L.T @ g, z))
        # dK/dlog(eta) = K itself (jitter included); dK/dlog(ell_m) via sqd
        grad_phi[0] += np.vdot(Kbar, K)
        KbarKL = Kbar * (eta * E)
        for m in range(self.m_ls):
            grad_phi[1 + m] += np.vdot(KbarKL, self.sqd[m]) / ls[m] ** 2
        return lp, np.concatenate([grad_phi, grad_z])

    # -- prediction ---------------------------------------------------------

    def _cross_sqd(self, query_X):
        return sq_distances(query_X, self.X, per_feature=self.m_ls > 1)

    def predict_f_draws(self, positions, query_X, draw_chunk=32,
                        query_chunk=512):
        """Per-draw predictive means/variances at query points (batched)."""
        positions = np.atleast_2d(positions)
        query_X = np.atleast_2d(np.asarray(query_X, dtype=float))
        p = self.n_hyper()
        S, Q = positions.shape[0], query_X.shape[0]
        means = np.full((S, Q), np.nan)
        variances = np.full((S, Q), np.nan)
        failed = np.zeros(S, dtype=bool)
        sqd_q = self._cross_sqd(query_X)
        for s0 in range(0, S, draw_chunk):
            sl = slice(s0, min(s0 + draw_chunk, S))
            theta = self.constrain_hyper(positions[sl, :p])
            z = positions[sl, p:]
            eta, ls = theta[:, 0], theta[:, 1:]
            inv = 1.0 / ls**2
            E = _batched_gram(self.sqd, inv)
            K = eta[:, None, None] * E
            bidx = np.arange(K.shape[0])[:, None], *np.diag_indices(self.n)
            K[bidx[0], bidx[1], bidx[2]] += (JITTER_START * eta)[:, None]
            try:
                Lb = np.linalg.cholesky(K)
                fb = np.einsum("bij,bj->bi", Lb, z)
                for q0 in range(0, Q, query_chunk):
                    qs = slice(q0, min(q0 + query_chunk, Q))
                    Kq = eta[:, None, None] * _batched_gram(sqd_q[:, qs, :], inv)
                    A = np.linalg.solve(K, Kq.transpose(0, 2, 1))
                    means[sl, qs] = np.einsum("bnq,bn->bq", A, fb)
                    variances[sl, qs] = eta[:, None] - np.einsum(
                        "bqn,bnq->bq", Kq, A
                    )
            except np.linalg.LinAlgError:
                for i in range(sl.start, sl.stop):
                    self._predict_one(positions[i], query_X, sqd_q, means[i],
                                      variances[i], failed, i)
        np.maximum(variances, 0.0, out=variances)
        return means, variances, failed

    def _predict_one(self, position, query_X, sqd_q, mean_out, var_out,
                     failed, i):
        p = self.n_hyper()
        theta = self.constrain_hyper(position[:p])
        eta, ls = theta[0], theta[1:]
        inv = (1.0 / ls**2)[None, :]
        E = _batched_gram(self.sqd, inv)[0]
        K = eta * E
        try:
            L, _ = chol_with_jitter(K)
        except CholeskyError:
            failed[i] = True
            return
        f = L @ position[p:]
        Kq = eta * _batched_gram(sqd_q, inv)[0]
        V = solve_triangular(L, Kq.T, lower=True)
        alpha = solve_triangular(L, f, lower=True)
        mean_out[:] = V.T @ alpha
        var_out[:] = eta - np.einsum("ij,ij->j", V, V)


class MultiFidelityGP(_HyperBlock):
    """Dense two-level classifier model over the stacked (low, high) latents."""

    kind = MF

    def __init__(self, dataset: LabeledDataset, config: KernelConfig):
        if dataset.n_low == 0:
            raise ConfigError("multi-fidelity model needs low-fidelity rows")
        config.validate(dataset.dim)
        self.dataset = dataset
        self.X = dataset.inputs
        self.y = dataset.labels.astype(float)
        self.n = dataset.n
        self.n_low = dataset.n_low
        self.config = config
        self.priors = config.priors
        self.m_ls = config.n_lengthscales
        self.sqd = sq_distances(self.X, self.X, per_feature=self.m_ls > 1)
        self.sqd_hh = self.sqd[:, self.n_low :, self.n_low :]
        if self.m_ls == 1:
            ls_names = lambda tag: (f"ell_{tag}",)
        else:
            ls_names = lambda tag: tuple(
                f"ell_{tag}[{m}]" for m in range(self.m_ls)
            )
        self.hyper_names = (
            ("eta_L",) + ls_names("L") + ("eta_H",) + ls_names("H") + ("rho",)
        )
        self.hyper_kinds = (
            ("eta",) + ("ell",) * self.m_ls
        ) * 2 + ("rho",)
        self.latent_names = tuple(f"z[{i}]" for i in range(self.n))
        self.dim = self.n_hyper() + self.n

    def _split_theta(self, theta):
        m = self.m_ls
        return (theta[..., 0], theta[..., 1 : 1 + m], theta[..., 1 + m],
                theta[..., 2 + m : 2 + 2 * m], theta[..., 2 + 2 * m])

    def _mean_diag(self, eta_l, eta_h, rho):
        n_h = self.n - self.n_low
        return (self.n_low * eta_l + n_h * (rho**2 * eta_l + eta_h)) / self.n

    def _assemble(self, theta):
        """K plus the pieces every derivative needs."""
        eta_l, ls_l, eta_h, ls_h, rho = self._split_theta(theta)
        nl = self.n_low
        E_l = _batched_gram(self.sqd, (1.0 / ls_l**2)[None, :])[0]
        E_h = _batched_gram(self.sqd_hh, (1.0 / ls_h**2)[None, :])[0]
        K_lpart = eta_l * E_l
        K_lpart[:nl, nl:] *= rho
        K_lpart[nl:, :nl] *= rho
        K_lpart[nl:, nl:] *= rho**2
        K = K_lpart.copy()
        K[nl:, nl:] += eta_h * E_h
        jitter = JITTER_START * self._mean_diag(eta_l, eta_h, rho)
        K[np.diag_indices(self.n)] += jitter
        return K, K_lpart, E_l, E_h

    def logp_grad(self, x):
        p = self.n_hyper()
        phi, z = x[:p], x[p:]
        if np.any(np.abs(phi[:-1]) > _PHI_BOUND) or abs(phi[-1]) > 1e3:
            return _REJECT
        theta = self.constrain_hyper(phi)
        eta_l, ls_l, eta_h, ls_h, rho = self._split_theta(theta)
        nl, n, m = self.n_low, self.n, self.m_ls
        n_h = n - nl
        K, K_lpart, E_l, E_h = self._assemble(theta)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return _REJECT
        f = L @ z
        g = log_likelihood_grad(f, self.y)
        lp_prior, grad_phi = self._prior_lp_grad(phi, theta)
        lp = (
            lp_prior - 0.5 * z @ z - n * _HALF_LOG_2PI
            + log_likelihood(f, self.y)
        )
        grad_z = -z + L.T @ g
        Kbar = _chol_reverse(L, np.outer(L.T @ g, z))
        tr_kbar = np.trace(Kbar)
        # log(eta_L): the k_L-derived part scales with eta_L, jitter follows
        grad_phi[0] += np.vdot(Kbar, K_lpart) + tr_kbar * JITTER_START * (
            (nl * eta_l + n_h * rho**2 * eta_l) / n
        )
        KbKl = Kbar * K_lpart
        for i in range(m):
            grad_phi[1 + i] += np.vdot(KbKl, self.sqd[i]) / ls_l[i] ** 2
        # log(eta_H): high block only
        Kb_hh = Kbar[nl:, nl:]
        EH = eta_h * E_h
        grad_phi[1 + m] += np.vdot(Kb_hh, EH) + tr_kbar * JITTER_START * (
            n_h * eta_h / n
        )
        KbEH = Kb_hh * EH
        for i in range(m):
            grad_phi[2 + m + i] += np.vdot(KbEH, self.sqd_hh[i]) / ls_h[i] ** 2
        # rho: cross blocks scale linearly, high block quadratically
        KL_raw = eta_l * E_l
        d_rho = (
            2.0 * np.vdot(Kbar[:nl, nl:], KL_raw[:nl, nl:])
            + 2.0 * rho * np.vdot(Kb_hh, KL_raw[nl:, nl:])
            + tr_kbar * JITTER_START * (n_h * 2.0 * rho * eta_l / n)
        )
        grad_phi[-1] += d_rho
        return lp, np.concatenate([grad_phi, grad_z])

    # -- prediction (high-fidelity target) ----------------------------------

    def predict_f_draws(self, positions, query_X, draw_chunk=32,
                        query_chunk=512):
        positions = np.atleast_2d(positions)
        query_X = np.atleast_2d(np.asarray(query_X, dtype=float))
        p = self.n_hyper()
        nl, n = self.n_low, self.n
        S, Q = positions.shape[0], query_X.shape[0]
        means = np.full((S, Q), np.nan)
        variances = np.full((S, Q), np.nan)
        failed = np.zeros(S, dtype=bool)
        per_feat = self.m_ls > 1
        sqd_q = sq_distances(query_X, self.X, per_feature=per_feat)
        sqd_qh = sqd_q[:, :, nl:]
        for s0 in range(0, S, draw_chunk):
            sl = slice(s0, min(s0 + draw_chunk, S))
            theta = self.constrain_hyper(positions[sl, :p])
            z = positions[sl, p:]
            eta_l, ls_l, eta_h, ls_h, rho = self._split_theta(theta)
            inv_l, inv_h = 1.0 / ls_l**2, 1.0 / ls_h**2
            E_l = _batched_gram(self.sqd, inv_l)
            K = eta_l[:, None, None] * E_l
            K[:, :nl, nl:] *= rho[:, None, None]
            K[:, nl:, :nl] *= rho[:, None, None]
            K[:, nl:, nl:] *= (rho**2)[:, None, None]
            K[:, nl:, nl:] += eta_h[:, None, None] * _batched_gram(
                self.sqd_hh, inv_h
            )
            jit = JITTER_START * self._mean_diag(eta_l, eta_h, rho)
            didx = np.diag_indices(n)
            K[np.arange(K.shape[0])[:, None], didx[0], didx[1]] += jit[:, None]
            prior_var = rho**2 * eta_l + eta_h
            try:
                Lb = np.linalg.cholesky(K)
                fb = np.einsum("bij,bj->bi", Lb, z)
                for q0 in range(0, Q, query_chunk):
                    qs = slice(q0, min(q0 + query_chunk, Q))
                    Kq = (rho * eta_l)[:, None, None] * _batched_gram(
                        sqd_q[:, qs, :], inv_l
                    )
                    Kq[:, :, nl:] *= rho[:, None, None]
                    Kq[:, :, nl:] += eta_h[:, None, None] * _batched_gram(
                        sqd_qh[:, qs, :], inv_h
                    )
                    A = np.linalg.solve(K, Kq.transpose(0, 2, 1))
                    means[sl, qs] = np.einsum("bnq,bn->bq", A, fb)
                    variances[sl, qs] = prior_var[:, None] - np.einsum(
                        "bqn,bnq->bq", Kq, A
                    )
            except np.linalg.LinAlgError:
                for i in range(sl.start, sl.stop):
                    self._predict_one(positions[i], query_X, means[i],
                                      variances[i], failed, i)
        np.maximum(variances, 0.0, out=variances)
        return means, variances, failed

    def _predict_one(self, position, query_X, mean_out, var_out, failed, i):
        from ..gp.multifidelity import predict_high
        from ..kernels import ArdSqExpParams
        from ..gp.multifidelity import MultiFidelityParams

        p = self.n_hyper()
        theta = self.constrain_hyper(position[:p])
        eta_l, ls_l, eta_h, ls_h, rho = self._split_theta(theta)
        params = MultiFidelityParams(
            low=ArdSqExpParams(eta_l, ls_l),
            high=ArdSqExpParams(eta_h, ls_h),
            rho=rho,
        )
        K, _, _, _ = self._assemble(theta)
        try:
            L, _ = chol_with_jitter(K)
        except CholeskyError:
            failed[i] = True
            return
        f = L @ position[p:]
        try:
            pred = predict_high(self.dataset, f, params, query_X)
        except CholeskyError:
            failed[i] = True
            return
        mean_out[:] = pred.mean
        var_out[:] = pred.variance


class SparseMultiFidelityGP(_HyperBlock):
    """Sparse two-level classifier: whitened inducing values and a
    diagonal-corrected latent layer, sampled hierarchically.

    Fidelity blocks are contiguous (low before high) both in the data and in
    the inducing set, so every block operation is a slice.
    """

    kind = SPARSE_MF

    def __init__(self, dataset: LabeledDataset, inducing: InducingSet,
                 config: KernelConfig, sigma: float = DEFAULT_NUGGET):
        if inducing.n_low is None:
            raise ConfigError("sparse model needs a low/high inducing split")
        if not np.array_equal(inducing.X_u[inducing.n_low :],
                              dataset.inputs_high):
            raise ConfigError(
                "high-fidelity inducing points must equal the training rows"
            )
        config.validate(dataset.dim)
        self.dataset = dataset
        self.inducing = inducing
        self.sigma = float(sigma)
        self.config = config
        self.priors = config.priors
        self.m_ls = config.n_lengthscales
        self.X = dataset.inputs
        self.y = dataset.labels.astype(float)
        self.n = dataset.n
        self.n_low = dataset.n_low
        self.mu = inducing.m
        self.mu_low = inducing.n_low
        per_feat = self.m_ls > 1
        self.sqd_uu = sq_distances(inducing.X_u, inducing.X_u, per_feat)
        self.sqd_uf = sq_distances(inducing.X_u, self.X, per_feat)
        self.sqd_uu_hh = np.ascontiguousarray(
            self.sqd_uu[:, self.mu_low :, self.mu_low :]
        )
        self.sqd_uf_hh = np.ascontiguousarray(
            self.sqd_uf[:, self.mu_low :, self.n_low :]
        )
        if self.m_ls == 1:
            ls_names = lambda tag: (f"ell_{tag}",)
        else:
            ls_names = lambda tag: tuple(
                f"ell_{tag}[{m}]" for m in range(self.m_ls)
            )
        self.hyper_names = (
            ("eta_L",) + ls_names("L") + ("eta_H",) + ls_names("H") + ("rho",)
        )
        self.hyper_kinds = (
            ("eta",) + ("ell",) * self.m_ls
        ) * 2 + ("rho",)
        self.latent_names = tuple(
            f"zu[{i}]" for i in range(self.mu)
        ) + tuple(f"zf[{i}]" for i in range(self.n))
        self.dim = self.n_hyper() + self.mu + self.n

    _split_theta = MultiFidelityGP._split_theta

    def _grams(self, theta):
        """k_L-derived parts, unit high-level grams, assembled Kuu/Kuf, and
        the corrected prior diagonal."""
        eta_l, ls_l, eta_h, ls_h, rho = self._split_theta(theta)
        inv_l = (1.0 / ls_l**2)[None, :]
        inv_h = (1.0 / ls_h**2)[None, :]
        ml, nl = self.mu_low, self.n_low
        Kuu_l = eta_l * _batched_gram(self.sqd_uu, inv_l)[0]
        Kuu_l[:ml, ml:] *= rho
        Kuu_l[ml:, :ml] *= rho
        Kuu_l[ml:, ml:] *= rho**2
        Kuf_l = eta_l * _batched_gram(self.sqd_uf, inv_l)[0]
        Kuf_l[:ml, nl:] *= rho
        Kuf_l[ml:, :nl] *= rho
        Kuf_l[ml:, nl:] *= rho**2
        E_h_uu = _batched_gram(self.sqd_uu_hh, inv_h)[0]
        E_h_uf = _batched_gram(self.sqd_uf_hh, inv_h)[0]
        Kuu = Kuu_l.copy()
        Kuu[ml:, ml:] += eta_h * E_h_uu
        Kuf = Kuf_l.copy()
        Kuf[ml:, nl:] += eta_h * E_h_uf
        kff = np.full(self.n, eta_l)
        kff[nl:] = rho**2 * eta_l + eta_h
        return {
            "Kuu": Kuu, "Kuf": Kuf, "kff": kff,
            "Kuu_l": Kuu_l, "Kuf_l": Kuf_l,
            "E_h_uu": E_h_uu, "E_h_uf": E_h_uf,
        }

    def logp_grad(self, x):
        p = self.n_hyper()
        phi = x[:p]
        if np.any(np.abs(phi[:-1]) > _PHI_BOUND) or abs(phi[-1]) > 1e3:
            return _REJECT
        z_u = x[p : p + self.mu]
        z_f = x[p + self.mu :]
        theta = self.constrain_hyper(phi)
        eta_l, ls_l, eta_h, ls_h, rho = self._split_theta(theta)
        ml, nl = self.mu_low, self.n_low
        n_hu = self.mu - ml
        G = self._grams(theta)
        Kuu, Kuf, kff = G["Kuu"], G["Kuf"], G["kff"]
        jitter = JITTER_START * float(np.mean(np.diag(Kuu)))
        Kuu_j = Kuu + jitter * np.eye(self.mu)
        try:
            L_u = np.linalg.cholesky(Kuu_j)
        except np.linalg.LinAlgError:
            return _REJECT
        B = solve_triangular(L_u, Kuf, lower=True)
        lam = kff - np.einsum("ij,ij->j", B, B) + self.sigma**2
        if np.any(lam <= 0):
            return _REJECT
        slam = np.sqrt(lam)
        f = B.T @ z_u + slam * z_f
        g = log_likelihood_grad(f, self.y)
        lp_prior, grad_phi = self._prior_lp_grad(phi, theta)
        lp = (
            lp_prior
            - 0.5 * z_u @ z_u - self.mu * _HALF_LOG_2PI
            - 0.5 * z_f @ z_f - self.n * _HALF_LOG_2PI
            + log_likelihood(f, self.y)
        )
        grad_zu = -z_u + B @ g
        grad_zf = -z_f + slam * g
        lam_bar = g * z_f / (2.0 * slam)
        Bbar = np.outer(z_u, g)
        Bbar -= (2.0 * lam_bar) * B
        Kuf_bar = solve_triangular(L_u, Bbar, trans=1, lower=True)
        Mmat = _phi_half_diag(Bbar @ B.T)
        A = solve_triangular(L_u, Mmat, trans=1, lower=True)
        Kuu_bar = -solve_triangular(L_u, A.T, trans=1, lower=True).T
        Kuu_bar = 0.5 * (Kuu_bar + Kuu_bar.T)
        tr_uubar = np.trace(Kuu_bar)
        # d(mean diag of Kuu)/d(param) feeds the jitter term
        djit_eta_l = JITTER_START * (
            (ml * eta_l + n_hu * rho**2 * eta_l) / self.mu
        )
        djit_eta_h = JITTER_START * (n_hu * eta_h / self.mu)
        djit_rho = JITTER_START * (n_hu * 2.0 * rho * eta_l / self.mu)
        lam_bar_high = float(np.sum(lam_bar[nl:]))
        # log(eta_L)
        grad_phi[0] += (
            np.vdot(Kuu_bar, G["Kuu_l"]) + np.vdot(Kuf_bar, G["Kuf_l"])
            + eta_l * (np.sum(lam_bar[:nl]) + rho**2 * lam_bar_high)
            + tr_uubar * djit_eta_l
        )
        m = self.m_ls
        Kb_uu_l = Kuu_bar * G["Kuu_l"]
        Kb_uf_l = Kuf_bar * G["Kuf_l"]
        for i in range(m):
            grad_phi[1 + i] += (
                np.vdot(Kb_uu_l, self.sqd_uu[i])
                + np.vdot(Kb_uf_l, self.sqd_uf[i])
            ) / ls_l[i] ** 2
        # log(eta_H)
        EH_uu = eta_h * G["E_h_uu"]
        EH_uf = eta_h * G["E_h_uf"]
        Kb_uu_h = Kuu_bar[ml:, ml:]
        Kb_uf_h = Kuf_bar[ml:, nl:]
        grad_phi[1 + m] += (
            np.vdot(Kb_uu_h, EH_uu) + np.vdot(Kb_uf_h, EH_uf)
            + eta_h * lam_bar_high
            + tr_uubar * djit_eta_h
        )
        KbEH_uu = Kb_uu_h * EH_uu
        KbEH_uf = Kb_uf_h * EH_uf
        for i in range(m):
            grad_phi[2 + m + i] += (
                np.vdot(KbEH_uu, self.sqd_uu_hh[i])
                + np.vdot(KbEH_uf, self.sqd_uf_hh[i])
            ) / ls_h[i] ** 2
        # rho, block by block: cross blocks are linear in rho, high-high
        # blocks quadratic, and Kuu_bar is symmetric (so LH counts twice)
        d_rho = 0.0
        if rho != 0.0:
            d_rho += (
                2.0 * np.vdot(Kuu_bar[:ml, ml:], G["Kuu_l"][:ml, ml:])
                + np.vdot(Kuf_bar[:ml, nl:], G["Kuf_l"][:ml, nl:])
                + np.vdot(Kuf_bar[ml:, :nl], G["Kuf_l"][ml:, :nl])
            ) / rho + 2.0 / rho * (
                np.vdot(Kuu_bar[ml:, ml:], G["Kuu_l"][ml:, ml:])
                + np.vdot(Kuf_bar[ml:, nl:], G["Kuf_l"][ml:, nl:])
            )
        else:
            inv_l = (1.0 / ls_l**2)[None, :]
            eL_uu = _batched_gram(self.sqd_uu, inv_l)[0]
            eL_uf = _batched_gram(self.sqd_uf, inv_l)[0]
            d_rho += eta_l * (
                2.0 * np.vdot(Kuu_bar[:ml, ml:], eL_uu[:ml, ml:])
                + np.vdot(Kuf_bar[:ml, nl:], eL_uf[:ml, nl:])
                + np.vdot(Kuf_bar[ml:, :nl], eL_uf[ml:, :nl])
            )
        d_rho += 2.0 * rho * eta_l * lam_bar_high
        d_rho += tr_uubar * djit_rho
        grad_phi[-1] += d_rho
        return lp, np.concatenate([grad_phi, grad_zu, grad_zf])

    # -- prediction (high-fidelity target) ----------------------------------

    def predict_f_draws(self, positions, query_X, **_):
        positions = np.atleast_2d(positions)
        query_X = np.atleast_2d(np.asarray(query_X, dtype=float))
        p = self.n_hyper()
        S, Q = positions.shape[0], query_X.shape[0]
        means = np.full((S, Q), np.nan)
        variances = np.full((S, Q), np.nan)
        failed = np.zeros(S, dtype=bool)
        per_feat = self.m_ls > 1
        sqd_us = sq_distances(self.inducing.X_u, query_X, per_feat)
        sqd_us_h = np.ascontiguousarray(sqd_us[:, self.mu_low :, :])
        ml = self.mu_low
        for s in range(S):
            theta = self.constrain_hyper(positions[s, :p])
            eta_l, ls_l, eta_h, ls_h, rho = self._split_theta(theta)
            z_u = positions[s, p : p + self.mu]
            z_f = positions[s, p + self.mu :]
            G = self._grams(theta)
            try:
                L_u, _ = chol_with_jitter(G["Kuu"])
            except CholeskyError:
                failed[s] = True
                continue
            B = solve_triangular(L_u, G["Kuf"], lower=True)
            lam = G["kff"] - np.einsum("ij,ij->j", B, B) + self.sigma**2
            if np.any(lam <= 0):
                failed[s] = True
                continue
            f = B.T @ z_u + np.sqrt(lam) * z_f
            inv_l = (1.0 / ls_l**2)[None, :]
            inv_h = (1.0 / ls_h**2)[None, :]
            K_us = (rho * eta_l) * _batched_gram(sqd_us, inv_l)[0]
            K_us[ml:] *= rho
            K_us[ml:] += eta_h * _batched_gram(sqd_us_h, inv_h)[0]
            B_star = solve_triangular(L_u, K_us, lower=True)
            C = np.eye(self.mu) + (B / lam) @ B.T
            try:
                L_c = np.linalg.cholesky(C)
            except np.linalg.LinAlgError:
                failed[s] = True
                continue
            beta = solve_triangular(L_c, B @ (f / lam), lower=True)
            W = solve_triangular(L_c, B_star, lower=True)
            means[s] = W.T @ beta
            kss = rho**2 * eta_l + eta_h
            variances[s] = (
                kss
                - np.einsum("ij,ij->j", B_star, B_star)
                + np.einsum("ij,ij->j", W, W)
            )
        np.maximum(variances, 0.0, out=variances)
        return means, variances, failed


def build_model(dataset: LabeledDataset, kind: str, config: KernelConfig,
                inducing: InducingSet | None = None,
                sigma: float = DEFAULT_NUGGET):
    """Construct the inference model for a classifier kind."""
    if kind == SF:
        if dataset.n_low and dataset.n_high:
            raise ConfigError(
                "single-fidelity model expects a single-level dataset "
                "(use .high_only() to drop the low block)"
            )
        return SingleFidelityGP(dataset.inputs, dataset.labels, config)
    if kind == MF:
        return MultiFidelityGP(dataset, config)
    if kind == SPARSE_MF:
        if inducing is None:
            raise ConfigError("sparse-mf requires an inducing set")
        return SparseMultiFidelityGP(dataset, inducing, config, sigma)
    raise ConfigError(f"unknown classifier kind {kind!r}")
