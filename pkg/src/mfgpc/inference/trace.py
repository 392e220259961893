"""Posterior trace container and its CSV round-trip.

The exported file is long-format (chain, draw, parameter, value) covering
the constrained hyperparameters and the whitened latents, printed with 17
significant digits so the round-trip is lossless.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DatasetParseError
from .diagnostics import effective_sample_size, split_rhat




@dataclass(frozen=True)
class PosteriorTrace:
    """Post-warmup draws across chains plus sampler statistics."""

    positions: np.ndarray  # (n_chains, n_samples, dim), unconstrained
    reported: np.ndarray  # (n_chains, n_samples, n_reported), constrained
    report_names: tuple
    latent_names: tuple = ()
    accept_rates: np.ndarray = field(default_factory=lambda: np.array([]))
    step_sizes: np.ndarray = field(default_factory=lambda: np.array([]))
    divergences_warmup: np.ndarray = field(default_factory=lambda: np.array([]))
    divergences_sampling: np.ndarray = field(default_factory=lambda: np.array([]))
    target_accept: float = np.nan

    def __post_init__(self):
        if self.positions.ndim != 3 or self.reported.ndim != 3:
            raise ConfigError("trace arrays must be (chains, draws, params)")
        if self.reported.shape[2] != len(self.report_names):
            raise ConfigError("reported width != number of report names")

    @property
    def n_chains(self) -> int:
        return self.positions.shape[0]

    @property
    def n_samples(self) -> int:
        return self.positions.shape[1]

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.n_samples

    def flat_positions(self) -> np.ndarray:
        return self.positions.reshape(-1, self.positions.shape[2])

    def parameter_names(self) -> tuple:
        return tuple(self.report_names) + tuple(self.latent_names)

    def record_matrix(self) -> np.ndarray:
        """(chains, draws, reported + latents) in export order."""
        n_latent = len(self.latent_names)
        if n_latent == 0:
            return self.reported
        latents = self.positions[:, :, self.positions.shape[2] - n_latent :]
        return np.concatenate([self.reported, latents], axis=2)

    def split_rhat(self) -> dict:
        return {
            name: split_rhat(self.reported[:, :, j])
            for j, name in enumerate(self.report_names)
        }

    def effective_sample_size(self) -> dict:
        return {
            name: effective_sample_size(self.reported[:, :, j])
            for j, name in enumerate(self.report_names)
        }

    def diagnostics(self) -> dict:
        return {
            "split_rhat": self.split_rhat(),
            "ess": self.effective_sample_size(),
            "accept_rates": self.accept_rates.tolist(),
            "target_accept": self.target_accept,
            "step_sizes": self.step_sizes.tolist(),
            "divergences_warmup": self.divergences_warmup.tolist(),
            "divergences_sampling": self.divergences_sampling.tolist(),
        }


def export_trace(trace: PosteriorTrace, path) -> None:
    """Write (chain, draw, parameter, value) rows for every parameter."""
    names = trace.parameter_names()
    records = trace.record_matrix()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "draw", "parameter", "value"])
        for c in range(trace.n_chains):
            for s in range(trace.n_samples):
                row = records[c, s]
                for j, name in enumerate(names):
                    writer.writerow([c, s, name, repr(float(row[j]))])


def load_trace(path) -> tuple:
    """Read an exported trace back as (names, values[(chains, draws, params)]).

    Parameter order follows first appearance; chains and draws must be dense.
    """
    cells = {}
    names = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["chain", "draw", "parameter", "value"]:
            raise DatasetParseError("bad trace header", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DatasetParseError("expected 4 fields", line=lineno)
            try:
                c, s, value = int(row[0]), int(row[1]), float(row[3])
            except ValueError as exc:
                raise DatasetParseError(str(exc), line=lineno)
            name = row[2]
            if name not in cells:
                cells[name] = {}
                names.append(name)
            cells[name][(c, s)] = value
    if not names:
        raise DatasetParseError("trace file holds no draws", line=2)
    keys = cells[names[0]].keys()
    n_chains = max(k[0] for k in keys) + 1
    n_samples = max(k[1] for k in keys) + 1
    values = np.empty((n_chains, n_samples, len(names)))
    for j, name in enumerate(names):
        series = cells[name]
        if len(series) != n_chains * n_samples:
            raise DatasetParseError(
                f"parameter {name} has {len(series)} cells, "
                f"expected {n_chains * n_samples}"
            )
        for (c, s), v in series.items():
            values[c, s, j] = v
    return names, values
