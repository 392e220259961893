"""Labeled multi-fidelity datasets, standardization, and space-filling designs.

Datasets keep all low-fidelity rows before all high-fidelity rows; the block
ordering is what the joint covariance assembly relies on. Files are plain CSV
(``x1,...,xD,y,fidelity``) so runs can be inspected and diffed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DatasetParseError,
    DatasetSchemaError,
    EmptyDesignError,
    ImbalanceError,
)

LOW = "L"
HIGH = "H"




@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box of physical parameter ranges."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ConfigError("domain bounds must be equal-length vectors")
        if not np.all(lower < upper):
            raise ConfigError("domain requires lower[i] < upper[i] for all i")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)


@dataclass(frozen=True)
class Standardizer:
    """Affine per-feature map ``x -> (x - mean) / scale`` and its inverse."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        if mean.shape != scale.shape or mean.ndim != 1:
            raise ConfigError("mean and scale must be equal-length vectors")
        if not np.all(scale > 0):
            raise ConfigError("scale entries must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def from_domain(cls, domain: BoxDomain) -> "Standardizer":
        """Map the box onto the unit cube: deterministic, data-independent."""
        return cls(mean=domain.lower, scale=domain.upper - domain.lower)

    @classmethod
    def from_data(cls, X) -> "Standardizer":
        """Z-score by per-feature sample statistics.

        This is the map the experiment pipelines use: the lengthscale priors
        then act on data-unit scales, which matters for boundary-hugging
        designs whose spread is much narrower than the domain. Constant
        features fall back to unit scale.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        std = X.std(axis=0)
        return cls(mean=X.mean(axis=0),
                   scale=np.where(std > 1e-12, std, 1.0))

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def invert(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) * self.scale + self.mean


@dataclass(frozen=True)
class LabeledDataset:
    """Inputs, binary labels, and fidelity tags with low-before-high ordering."""

    inputs: np.ndarray
    labels: np.ndarray
    fidelity: np.ndarray = field(default=None)

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        labels = np.atleast_1d(np.asarray(self.labels))
        if inputs.size == 0:
            inputs = inputs.reshape(0, inputs.shape[1] if inputs.ndim == 2 else 0)
        if self.fidelity is None:
            fidelity = np.full(labels.shape[0], HIGH, dtype="U1")
        else:
            fidelity = np.atleast_1d(np.asarray(self.fidelity, dtype="U1"))
        if not (inputs.shape[0] == labels.shape[0] == fidelity.shape[0]):
            raise ConfigError(
                f"row mismatch: {inputs.shape[0]} inputs, "
                f"{labels.shape[0]} labels, {fidelity.shape[0]} fidelity tags"
            )
        if labels.size and not np.all(np.isin(labels, (0, 1))):
            raise DatasetSchemaError("labels must be exactly 0 or 1")
        labels = labels.astype(np.int64)
        if fidelity.size and not np.all(np.isin(fidelity, (LOW, HIGH))):
            raise DatasetSchemaError(f"fidelity tags must be '{LOW}' or '{HIGH}'")
        is_high = fidelity == HIGH
        if np.any(is_high[:-1] & ~is_high[1:]):
            raise ConfigError("all low-fidelity rows must precede high-fidelity rows")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        fidelity.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "fidelity", fidelity)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_low(self) -> int:
        return int(np.sum(self.fidelity == LOW))

    @property
    def n_high(self) -> int:
        return int(np.sum(self.fidelity == HIGH))

    @property
    def inputs_low(self) -> np.ndarray:
        return self.inputs[: self.n_low]

    @property
    def inputs_high(self) -> np.ndarray:
        return self.inputs[self.n_low :]

    @property
    def labels_low(self) -> np.ndarray:
        return self.labels[: self.n_low]

    @property
    def labels_high(self) -> np.ndarray:
        return self.labels[self.n_low :]

    def append_high(self, x, y: int) -> "LabeledDataset":
        """Return a new dataset with one extra high-fidelity row."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return LabeledDataset(
            inputs=np.vstack([self.inputs, x]) if self.n else x,
            labels=np.append(self.labels, int(y)),
            fidelity=np.append(self.fidelity, HIGH),
        )

    def high_only(self) -> "LabeledDataset":
        return LabeledDataset(self.inputs_high, self.labels_high,
                              np.full(self.n_high, HIGH, dtype="U1"))


def concat_levels(low: LabeledDataset, high: LabeledDataset) -> LabeledDataset:
    """Stack a low-fidelity block on top of a high-fidelity block."""
    if low.n_high or high.n_low:
        raise ConfigError("concat_levels expects a pure-low and a pure-high dataset")
    if low.n == 0:
        return high
    return LabeledDataset(
        inputs=np.vstack([low.inputs, high.inputs]),
        labels=np.concatenate([low.labels, high.labels]),
        fidelity=np.concatenate([low.fidelity, high.fidelity]),
    )


def latin_hypercube(domain: BoxDomain, n: int, seed: int) -> np.ndarray:
    """Latin hypercube design over the box: one point per stratum per column.

    Each column gets an independent random permutation of the n strata and a
    uniform jitter inside each stratum, so the stratification property is
    exact by construction and the design is deterministic in the seed.
    """
    if n == 0:
        raise EmptyDesignError("cannot build an empty design (n=0)")
    if n < 0:
        raise ConfigError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    d = domain.dim
    unit = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n)
        unit[:, j] = (strata + rng.uniform(0.0, 1.0, size=n)) / n
    return domain.lower + unit * (domain.upper - domain.lower)


def balanced_seed_selection(low_fid_pool: LabeledDataset, n_high: int,
                            seed: int) -> np.ndarray:
    """Draw ``n_high`` pool inputs, exactly half from each low-fidelity class.

    Sampling is without replacement; the result is the input matrix only (the
    rows still need high-fidelity labels).
    """
    if n_high % 2 != 0:
        raise ConfigError(f"n_high must be even, got {n_high}")
    half = n_high // 2
    rng = np.random.default_rng(seed)
    rows = []
    for cls in (0, 1):
        idx = np.flatnonzero(low_fid_pool.labels == cls)
        if idx.size < half:
            raise ImbalanceError(
                f"pool has only {idx.size} points with label {cls}, "
                f"need {half}",
                deficient_class=cls,
            )
        rows.append(low_fid_pool.inputs[rng.choice(idx, size=half, replace=False)])
    return np.vstack(rows)


def save_dataset(dataset: LabeledDataset, path) -> None:
    """Write the CSV form: header ``x1,...,xD,y,fidelity``."""
    d = dataset.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(d)] + ["y", "fidelity"])
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.inputs[i]]
            writer.writerow(row + [str(int(dataset.labels[i])), dataset.fidelity[i]])


def load_dataset(path) -> LabeledDataset:
    """Read a dataset CSV; malformed rows raise with their line number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError("empty file, expected a header row", line=1)
        if len(header) < 3 or header[-2:] != ["y", "fidelity"]:
            raise DatasetParseError(
                "header must be x1,...,xD,y,fidelity", line=1
            )
        d = len(header) - 2
        inputs, labels, fidelity = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise DatasetParseError(
                    f"expected {d + 2} fields, found {len(row)}", line=lineno
                )
            try:
                inputs.append([float(v) for v in row[:d]])
            except ValueError as exc:
                raise DatasetParseError(f"bad numeric value: {exc}", line=lineno)
            if row[d] not in ("0", "1"):
                raise DatasetSchemaError(
                    f"label must be 0 or 1, found {row[d]!r}", line=lineno
                )
            labels.append(int(row[d]))
            if row[d + 1] not in (LOW, HIGH):
                raise DatasetSchemaError(
                    f"fidelity must be '{LOW}' or '{HIGH}', found {row[d + 1]!r}",
                    line=lineno,
                )
            fidelity.append(row[d + 1])
    return LabeledDataset(
        inputs=np.asarray(inputs, dtype=float).reshape(len(labels), d),
        labels=np.asarray(labels, dtype=np.int64),
        fidelity=np.asarray(fidelity, dtype="U1"),
    )
