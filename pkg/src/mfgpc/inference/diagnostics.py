"""Convergence diagnostics: split-R-hat and effective sample size."""

from __future__ import annotations

import numpy as np


def _split_chains(x: np.ndarray) -> np.ndarray:
    """Split each chain in half; drops one draw per chain if odd."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, n : 2 * n]], axis=0)


def split_rhat(x: np.ndarray) -> float:
    """Potential scale reduction factor over split chains.

    x has shape (n_chains, n_draws). Returns 1.0 for constant chains.
    """
    seq = _split_chains(x)
    m, n = seq.shape
    if n < 2:
        return np.nan
    means = seq.mean(axis=1)
    w = float(np.mean(seq.var(axis=1, ddof=1)))
    b_over_n = float(np.var(means, ddof=1))
    if w <= 1e-300:
        return 1.0 if b_over_n <= 1e-300 else np.inf
    var_plus = (n - 1) / n * w + b_over_n
    return float(np.sqrt(var_plus / w))


def _autocovariance(seq: np.ndarray) -> np.ndarray:
    """Biased autocovariance estimates by lag via FFT."""
    n = seq.shape[0]
    centered = seq - seq.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    fft = np.fft.rfft(centered, size)
    acov = np.fft.irfft(fft * np.conjugate(fft), size)[:n].real
    return acov / n


def effective_sample_size(x: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone positive sequence."""
    seq = _split_chains(x)
    m, n = seq.shape
    if n < 4:
        return np.nan
    acov = np.stack([_autocovariance(s) for s in seq])
    chain_var = acov[:, 0] * n / (n - 1)
    w = float(np.mean(chain_var))
    means = seq.mean(axis=1)
    var_plus = (n - 1) / n * w + float(np.var(means, ddof=1))
    if var_plus <= 1e-300:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums must stay positive and non-increasing
    max_pairs = (n - 1) // 2
    tau = 0.0
    prev_pair = np.inf
    for k in range(max_pairs):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        tau += pair
    tau = max(2.0 * tau - 1.0, 1e-12)
    return float(min(m * n / tau, m * n))
