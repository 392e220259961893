"""Acquisition rule |mu| / sigma and the sequential retrain-acquire loop.

The score is smallest where the latent mean sits near the decision boundary
or the posterior variance is large, balancing exploitation against
exploration. Campaigns live in physical units, only ever append
high-fidelity rows, and retrain the classifier from scratch each iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import train_classifier
from .data import BoxDomain, LabeledDataset, latin_hypercube
from .errors import AcquisitionError, CampaignError, ConfigError
from .inference import KernelConfig, SamplerConfig, predict_class_probability

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class AcquisitionScore:
    """Score of one candidate: |mu_hat| / sigma_hat (sigma floored)."""

    index: int
    mu_hat: float
    sigma_hat: float
    score: float


@dataclass(frozen=True)
class PoolSpec:
    """Candidate pool policy: a fresh LHS per iteration or a fixed grid."""

    kind: str = "lhs"  # "lhs" | "grid"
    size: int = 500
    grid_shape: tuple = ()

    def __post_init__(self):
        if self.kind not in ("lhs", "grid"):
            raise ConfigError(f"pool kind must be 'lhs' or 'grid', got {self.kind}")
        if self.kind == "lhs" and self.size < 1:
            raise ConfigError("pool size must be >= 1")
        if self.kind == "grid" and not self.grid_shape:
            raise ConfigError("grid pools need a grid_shape")


@dataclass(frozen=True)
class CampaignConfig:
    """Active-learning loop settings over a physical domain."""

    domain: BoxDomain
    n_initial_high: int
    n_iterations: int
    pool: PoolSpec = field(default_factory=PoolSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    m_low_inducing: int = 30
    sparse_sigma: float = 0.1
    standardize: str = "data"
    seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 0:
            raise ConfigError("n_iterations must be >= 0")


@dataclass(frozen=True)
class CampaignRecord:
    """One acquisition: the point, its label, and the fit that chose it."""

    iteration: int
    x: np.ndarray
    y: int
    score: float
    test_error: float
    wall_time: float


@dataclass
class CampaignLog:
    """Initial-fit metrics plus one record per acquisition."""

    initial_test_error: float
    records: list
    dataset: LabeledDataset
    final_classifier: object = None

    @property
    def test_error_path(self):
        errs = [self.initial_test_error] + [r.test_error for r in self.records]
        return np.asarray(errs, dtype=float)

    def n_high_path(self, n_initial: int):
        return n_initial + np.arange(len(self.records) + 1)


def select_next(trace, model, candidates):
    """Index of the lowest |mu|/sigma candidate, plus the full score list.

    Candidates must already live in the model's (standardized) input space.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise ConfigError("candidate set is empty")
    summary = predict_class_probability(trace, model, candidates)
    sigma = np.maximum(np.sqrt(summary.f_var), SIGMA_FLOOR)
    scores = np.abs(summary.f_mean) / sigma
    if not np.any(np.isfinite(scores)):
        raise AcquisitionError("no candidate has a finite acquisition score")
    best = int(np.nanargmin(np.where(np.isfinite(scores), scores, np.inf)))
    score_list = [
        AcquisitionScore(index=i, mu_hat=float(summary.f_mean[i]),
                         sigma_hat=float(sigma[i]), score=float(scores[i]))
        for i in range(candidates.shape[0])
    ]
    return best, score_list


def _make_pool(config: CampaignConfig, rng, acquired):
    if config.pool.kind == "lhs":
        return latin_hypercube(config.domain, config.pool.size,
                               seed=int(rng.integers(2**31)))
    axes = [
        np.linspace(lo, hi, k)
        for lo, hi, k in zip(config.domain.lower, config.domain.upper,
                             config.pool.grid_shape)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    pool = np.column_stack([m.ravel() for m in mesh])
    if acquired:
        taken = np.array(sorted(acquired))
        keep = ~np.any(
            np.all(np.isclose(pool[:, None, :], taken[None, :, :],
                              rtol=0.0, atol=1e-12), axis=2),
            axis=1,
        )
        pool = pool[keep]
    return pool


def _fit(config: CampaignConfig, classifier_kind, dataset, iteration):
    sampler = replace(config.sampler,
                      seed=config.sampler.seed + 7919 * iteration)
    return train_classifier(
        dataset, classifier_kind,
        kernel=config.kernel, sampler=sampler,
        m_low_inducing=config.m_low_inducing, sigma=config.sparse_sigma,
        standardize=config.standardize, domain=config.domain,
        inducing_seed=config.seed + 31 * iteration,
    )


def _test_error(clf, test_set):
    if test_set is None:
        return np.nan
    X_test, y_test = test_set
    predicted = clf.predict_labels(X_test)
    return float(np.mean(predicted != np.asarray(y_test)))


def run_campaign(config: CampaignConfig, classifier_kind: str, oracle,
                 initial: LabeledDataset, test_set=None,
                 keep_final=False) -> CampaignLog:
    """Loop train -> select -> label -> append on the high-fidelity level.

    ``oracle`` maps one physical input row to a binary label; failures halt
    the campaign with the partial log attached. ``test_set`` is an optional
    (X, y) pair scored after every fit.
    """
    rng = np.random.default_rng(config.seed)
    dataset = initial
    acquired = set()
    clf = _fit(config, classifier_kind, dataset, 0)
    log = CampaignLog(
        initial_test_error=_test_error(clf, test_set),
        records=[],
        dataset=dataset,
    )
    for it in range(1, config.n_iterations + 1):
        t0 = time.perf_counter()
        pool = _make_pool(config, rng, acquired)
        if pool.shape[0] == 0:
            raise CampaignError("candidate pool exhausted", partial_log=log)
        best, scores = select_next(
            clf.trace, clf.model, clf.standardizer.apply(pool)
        )
        x_new = pool[best]
        try:
            y_new = int(oracle(x_new))
        except Exception as exc:
            raise CampaignError(
                f"oracle failed at iteration {it}: {exc}", partial_log=log
            ) from exc
        acquired.add(tuple(x_new))
        dataset = dataset.append_high(x_new, y_new)
        clf = _fit(config, classifier_kind, dataset, it)
        log.records.append(
            CampaignRecord(
                iteration=it,
                x=x_new.copy(),
                y=y_new,
                score=scores[best].score,
                test_error=_test_error(clf, test_set),
                wall_time=time.perf_counter() - t0,
            )
        )
        log.dataset = dataset
    if keep_final:
        log.final_classifier = clf
    return log


def save_campaign_log(log: CampaignLog, path, n_initial: int) -> None:
    """CSV: iteration, x..., y, score, test_error, wall_time.

    Iteration 0 carries the initial fit (no acquisition fields).
    """
    import csv

    dim = log.dataset.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "n_high"]
            + [f"x{j + 1}" for j in range(dim)]
            + ["y", "score", "test_error", "wall_time"]
        )
        writer.writerow([0, n_initial] + [""] * dim
                        + ["", "", repr(float(log.initial_test_error)), ""])
        for rec in log.records:
            writer.writerow(
                [rec.iteration, n_initial + rec.iteration]
                + [repr(float(v)) for v in rec.x]
                + [rec.y, repr(float(rec.score)),
                   repr(float(rec.test_error)), "%.6g" % rec.wall_time]
            )
