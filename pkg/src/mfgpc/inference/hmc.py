"""Hamiltonian Monte Carlo with dual-averaging step-size adaptation.

Plain HMC with jittered trajectory lengths and an identity mass matrix;
warmup adapts the step size toward the target acceptance probability and is
discarded. Chains run concurrently as independent workers over the immutable
model and are merged by chain index, so results do not depend on scheduling.

The target only needs three things: ``dim``, ``logp_grad(x) -> (lp, grad)``
(returning -inf for rejected states), and ``initial_position(rng)``; models
optionally add ``report``/``report_names``/``latent_names`` for the trace.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, SamplerFailure
from ..parallel import single_threaded_blas
from .trace import PosteriorTrace

DIVERGENCE_THRESHOLD = 1000.0
MAX_CONSECUTIVE_DIVERGENCES = 100

# dual averaging constants
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass(frozen=True)
class SamplerConfig:
    """Chain counts, adaptation settings, and the seed."""

    n_chains: int = 2
    n_warmup: int = 1000
    n_samples: int = 1000
    target_accept: float = 0.95
    max_leapfrog_depth: int = 10
    seed: int = 0
    trajectory_length: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("target_accept must lie in (0, 1)")
        for name in ("n_chains", "n_warmup", "n_samples", "max_leapfrog_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.trajectory_length <= 0:
            raise ConfigError("trajectory_length must be positive")


def log_posterior(state, model):
    """Value and gradient of the unnormalized log posterior."""
    return model.logp_grad(np.asarray(state, dtype=float))


def leapfrog(x, r, grad, step, n_steps, logp_grad, inv_mass=None):
    """Velocity-Verlet integration of Hamilton's equations for -logp.

    inv_mass is the diagonal inverse mass (metric); identity when None.
    """
    x = x.copy()
    r = r + 0.5 * step * grad
    velocity = (lambda p: p) if inv_mass is None else (lambda p: inv_mass * p)
    lp = -np.inf
    for i in range(n_steps):
        x = x + step * velocity(r)
        lp, grad = logp_grad(x)
        if not np.isfinite(lp):
            return x, r, lp, grad
        r = r + (step if i < n_steps - 1 else 0.5 * step) * grad
    return x, r, lp, grad


def _kinetic(r, inv_mass):
    return 0.5 * float(r @ (inv_mass * r))


def _draw_momentum(rng, inv_mass):
    return rng.standard_normal(inv_mass.shape[0]) / np.sqrt(inv_mass)


def find_reasonable_step_size(x, lp, grad, logp_grad, rng, inv_mass):
    """Doubling/halving heuristic for the initial step size."""
    step = 1.0
    r = _draw_momentum(rng, inv_mass)
    h0 = lp - _kinetic(r, inv_mass)
    _, r1, lp1, _ = leapfrog(x, r, grad, step, 1, logp_grad, inv_mass)
    log_ratio = (lp1 - _kinetic(r1, inv_mass)) - h0 if np.isfinite(lp1) \
        else -np.inf
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    for _ in range(100):
        step *= 2.0**direction
        if not 1e-10 < step < 1e3:
            step = min(max(step, 1e-10), 1e3)
            break
        _, r1, lp1, _ = leapfrog(x, r, grad, step, 1, logp_grad, inv_mass)
        log_ratio = (lp1 - _kinetic(r1, inv_mass)) - h0 if np.isfinite(lp1) \
            else -np.inf
        if direction * log_ratio <= direction * math.log(0.5):
            break
    return step


def _hmc_transition(x, lp, grad, step, n_steps, logp_grad, rng, inv_mass):
    """One proposal; returns the next state, accept-prob, divergence flag."""
    r0 = _draw_momentum(rng, inv_mass)
    h0 = -lp + _kinetic(r0, inv_mass)
    x1, r1, lp1, grad1 = leapfrog(x, r0, grad, step, n_steps, logp_grad,
                                  inv_mass)
    if np.isfinite(lp1):
        delta_h = (-lp1 + _kinetic(r1, inv_mass)) - h0
    else:
        delta_h = np.inf
    divergent = not np.isfinite(delta_h) or delta_h > DIVERGENCE_THRESHOLD
    alpha = 0.0 if divergent else min(1.0, math.exp(-max(delta_h, -700.0)))
    if not divergent and rng.uniform() < alpha:
        return x1, lp1, grad1, alpha, divergent
    return x, lp, grad, alpha, divergent


def _n_steps(step, trajectory_length, rng, max_depth):
    jitter = rng.uniform(0.5, 1.5)
    return int(max(1, min(round(jitter * trajectory_length / step),
                          2**max_depth)))


class _DualAveraging:
    """Step-size adaptation toward the target acceptance probability."""

    def __init__(self, step0, target):
        self.mu = math.log(10.0 * step0)
        self.target = target
        self.h_bar = 0.0
        self.log_step_bar = math.log(step0)
        self.m = 0
        self.step = step0

    def update(self, alpha):
        self.m += 1
        eta = 1.0 / (self.m + _DA_T0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - alpha)
        log_step = self.mu - math.sqrt(self.m) / _DA_GAMMA * self.h_bar
        w = self.m**-_DA_KAPPA
        self.log_step_bar = w * log_step + (1.0 - w) * self.log_step_bar
        self.step = math.exp(log_step)

    def adapted_step(self):
        return math.exp(self.log_step_bar)


def _mass_windows(n_warmup):
    """(start, end] iteration spans whose draws feed the mass estimate."""
    if n_warmup < 150:
        return []
    fast_start, fast_end = 75, 50
    windows = []
    lo = fast_start
    size = 25
    while True:
        hi = lo + size
        if hi + fast_end >= n_warmup or size * 2 + hi + fast_end >= n_warmup:
            windows.append((lo, n_warmup - fast_end))
            break
        windows.append((lo, hi))
        lo = hi
        size *= 2
    return windows


def _run_chain(model, config: SamplerConfig, seed_seq, chain_index):
    rng = np.random.default_rng(seed_seq)
    x = model.initial_position(rng)
    lp, grad = model.logp_grad(x)
    if not np.isfinite(lp):
        raise SamplerFailure(
            f"log posterior not finite at the chain {chain_index} "
            f"initial position"
        )
    inv_mass = np.ones(model.dim)
    step = find_reasonable_step_size(x, lp, grad, model.logp_grad, rng,
                                     inv_mass)
    da = _DualAveraging(step, config.target_accept)
    windows = _mass_windows(config.n_warmup)
    window_idx = 0
    window_draws = []
    consecutive_div = 0
    warmup_div = 0
    for m in range(1, config.n_warmup + 1):
        n_steps = _n_steps(da.step, config.trajectory_length, rng,
                           config.max_leapfrog_depth)
        x, lp, grad, alpha, divergent = _hmc_transition(
            x, lp, grad, da.step, n_steps, model.logp_grad, rng, inv_mass
        )
        if divergent:
            warmup_div += 1
            consecutive_div += 1
            if consecutive_div >= MAX_CONSECUTIVE_DIVERGENCES:
                raise SamplerFailure(
                    f"{consecutive_div} consecutive divergences during warmup",
                    diagnostics={
                        "chain": chain_index,
                        "step_size": da.step,
                        "warmup_iteration": m,
                        "log_posterior": lp,
                    },
                )
        else:
            consecutive_div = 0
        da.update(alpha)
        if window_idx < len(windows):
            lo, hi = windows[window_idx]
            if lo < m <= hi:
                window_draws.append(x.copy())
            if m == hi:
                draws = np.asarray(window_draws)
                n = draws.shape[0]
                if n >= 10:
                    var = draws.var(axis=0, ddof=1)
                    # Stan-style shrinkage toward unit scale
                    inv_mass = (n / (n + 5.0)) * var + (5.0 / (n + 5.0))
                    inv_mass = np.maximum(inv_mass, 1e-8)
                    step = find_reasonable_step_size(
                        x, lp, grad, model.logp_grad, rng, inv_mass
                    )
                    da = _DualAveraging(step, config.target_accept)
                window_draws = []
                window_idx += 1
    step = da.adapted_step() if config.n_warmup else da.step
    positions = np.empty((config.n_samples, model.dim))
    accepts = np.empty(config.n_samples)
    sampling_div = 0
    for s in range(config.n_samples):
        n_steps = _n_steps(step, config.trajectory_length, rng,
                           config.max_leapfrog_depth)
        x, lp, grad, alpha, divergent = _hmc_transition(
            x, lp, grad, step, n_steps, model.logp_grad, rng, inv_mass
        )
        sampling_div += divergent
        positions[s] = x
        accepts[s] = alpha
    return positions, accepts, step, warmup_div, sampling_div


def hmc_sample(model, config: SamplerConfig) -> PosteriorTrace:
    """Run all chains and assemble the post-warmup trace."""
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    with single_threaded_blas(), ThreadPoolExecutor(
        max_workers=config.n_chains
    ) as pool:
        futures = [
            pool.submit(_run_chain, model, config, seeds[c], c)
            for c in range(config.n_chains)
        ]
        results = [f.result() for f in futures]
    positions = np.stack([r[0] for r in results])
    accepts = np.stack([r[1] for r in results])
    report_names = tuple(getattr(model, "report_names", ()))
    if report_names:
        flat = positions.reshape(-1, model.dim)
        reported = np.stack([model.report(x) for x in flat]).reshape(
            config.n_chains, config.n_samples, len(report_names)
        )
    else:
        report_names = tuple(f"x[{i}]" for i in range(model.dim))
        reported = positions.copy()
    return PosteriorTrace(
        positions=positions,
        reported=reported,
        report_names=report_names,
        latent_names=tuple(getattr(model, "latent_names", ())),
        accept_rates=np.array([float(a.mean()) for a in accepts]),
        step_sizes=np.array([r[2] for r in results]),
        divergences_warmup=np.array([r[3] for r in results]),
        divergences_sampling=np.array([r[4] for r in results]),
        target_accept=config.target_accept,
    )
