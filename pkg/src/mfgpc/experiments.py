"""Experiment protocols behind the benchmark surface.

Four experiment ids:

  synthetic-sweep  fixed-size training sets N_H in {10..50}, repeated fits
  synthetic-al     active learning 10 -> 34 on the sine oracles
  cardiac-2d       (s2, b) study: 1-D cable low level, 2-D patch high level
  cardiac-3d       (a, b, s2) study with the sparse classifier and the
                   vulnerability-window integral

Each run writes CSV tables plus a JSON manifest holding the full config,
its hash, the derived seeds, and per-repeat completion status. Metric CSVs
never contain wall times, so a rerun from the manifest reproduces them
bit-identically; timings live in campaign logs only.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .active import CampaignConfig, PoolSpec, run_campaign, save_campaign_log
from .cardiac import (
    ApParams,
    GridConfig,
    StimulusProtocol,
    run_1d,
    run_2d,
    vulnerability_window,
)
from .classifier import train_classifier
from .data import (
    LOW,
    BoxDomain,
    LabeledDataset,
    balanced_seed_selection,
    concat_levels,
    latin_hypercube,
)
from .errors import ConfigError
from .inference import MF, SF, SPARSE_MF, KernelConfig, SamplerConfig
from .inference.trace import export_trace
from .metrics import compute_metrics
from .parallel import single_threaded_blas
from .synthetic import UNIT_SQUARE, label_high, label_low, make_low_fidelity_design

log = logging.getLogger("mfgpc.experiments")

EXPERIMENTS = ("synthetic-sweep", "synthetic-al", "cardiac-2d", "cardiac-3d")

CARDIAC_2D_DOMAIN = BoxDomain(lower=[120.0, 0.035], upper=[150.0, 0.06])
CARDIAC_3D_DOMAIN = BoxDomain(lower=[0.1, 0.035, 105.0],
                              upper=[0.2, 0.06, 160.0])
CARDIAC_A_DEFAULT = 0.15


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run; unset fields fall back to per-experiment defaults."""

    experiment: str
    out_dir: str
    repeats: int | None = None
    seed_base: int = 0
    classifiers: tuple | None = None
    sizes: tuple = (10, 20, 30, 40, 50)
    n_initial_high: int | None = None
    n_iterations: int | None = None
    test_size: int | None = None
    pool_size: int = 500
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    n_lengthscales: int | None = None
    m_low_inducing: int | None = None
    workers: int = 0
    export_traces: str = "last"  # none | last | all
    paper_scale: bool = False
    grid_dx: float | None = None
    n_low_active: int = 84
    low_pool: int = 1000
    n_low_zeros: int = 400
    window_grid: int = 21
    window_t_step: float = 0.5
    target_error: float = 0.10

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.export_traces not in ("none", "last", "all"):
            raise ConfigError("export_traces must be none|last|all")
        if self.repeats is not None and self.repeats < 1:
            raise ConfigError("repeats must be >= 1")

    # -- resolved values -----------------------------------------------------

    def resolved(self) -> "ExperimentConfig":
        exp = self.experiment
        changes = {}
        if self.repeats is None:
            changes["repeats"] = (
                30 if self.paper_scale else 10
            ) if exp.startswith("synthetic") else 1
        if self.classifiers is None:
            changes["classifiers"] = {
                "synthetic-sweep": (SF, MF, SPARSE_MF),
                "synthetic-al": (SF, MF),
                "cardiac-2d": (SF, MF),
                "cardiac-3d": (SPARSE_MF,),
            }[exp]
        if self.n_initial_high is None:
            changes["n_initial_high"] = 30 if exp == "cardiac-3d" else 10
        if self.n_iterations is None:
            changes["n_iterations"] = {
                "synthetic-sweep": 0,
                "synthetic-al": 24,
                "cardiac-2d": 40,
                "cardiac-3d": 100,
            }[exp]
        if self.test_size is None:
            changes["test_size"] = (
                1000 if exp.startswith("synthetic") or self.paper_scale
                else 200 if exp == "cardiac-2d" else 0
            )
        if self.n_lengthscales is None:
            changes["n_lengthscales"] = 1 if exp.startswith("synthetic") else (
                2 if exp == "cardiac-2d" else 3
            )
        if self.m_low_inducing is None:
            changes["m_low_inducing"] = 50 if exp == "cardiac-3d" else 30
        if self.grid_dx is None:
            changes["grid_dx"] = 0.25 if self.paper_scale else 0.5
        if self.workers == 0:
            changes["workers"] = min(os.cpu_count() or 1,
                                     changes.get("repeats", self.repeats) or 1)
        return replace(self, **changes)

    def repeat_seed(self, r: int) -> int:
        return self.seed_base + 7919 * r


def config_to_dict(config: ExperimentConfig) -> dict:
    d = dataclasses.asdict(config)
    d["sampler"] = dataclasses.asdict(config.sampler)
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    d["sampler"] = SamplerConfig(**d["sampler"])
    for key in ("classifiers", "sizes"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return ExperimentConfig(**d)


def config_hash(config: ExperimentConfig) -> str:
    d = config_to_dict(config)
    d.pop("out_dir", None)
    d.pop("workers", None)  # parallelism must not affect results
    blob = json.dumps(d, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_csv(path, header, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


METRIC_HEADER = [
    "classifier", "n_high", "repeat", "seed", "error", "accuracy",
    "precision", "recall", "f1", "tp", "fp", "tn", "fn", "flags",
]


def _metric_row(kind, n_high, repeat, seed, y_pred, y_true):
    rep = compute_metrics(y_pred, y_true)
    error = float(np.mean(np.asarray(y_pred) != np.asarray(y_true)))
    return [
        kind, n_high, repeat, seed, _fmt(error), _fmt(rep.accuracy),
        _fmt(rep.precision), _fmt(rep.recall), _fmt(rep.f1),
        rep.tp, rep.fp, rep.tn, rep.fn,
        ";".join(rep.zero_division_flags),
    ]


def samples_to_target_error(n_high_path, errors, target: float):
    """First n_high at which the error is <= target, else None (censored)."""
    errors = np.asarray(errors, dtype=float)
    below = np.flatnonzero(errors <= target)
    if below.size == 0:
        return None
    return int(np.asarray(n_high_path)[below[0]])


# -- synthetic data assembly --------------------------------------------------


def synthetic_datasets(seed: int, n_high: int, test_size: int):
    """Shared low design, balanced high seed set, and an LHS test set."""
    low = make_low_fidelity_design(seed)
    pool_X = latin_hypercube(UNIT_SQUARE, 500, seed=seed + 1000)
    pool = LabeledDataset(pool_X, label_low(pool_X),
                          np.full(pool_X.shape[0], LOW, "U1"))
    X_high = balanced_seed_selection(pool, n_high, seed=seed + 2000)
    high = LabeledDataset(X_high, label_high(X_high))
    test_X = latin_hypercube(UNIT_SQUARE, test_size, seed=seed + 3000)
    return low, high, (test_X, label_high(test_X))


def _sweep_repeat(payload):
    config, repeat = payload
    seed = config.repeat_seed(repeat)
    kernel = KernelConfig(config.n_lengthscales)
    rows = []
    traces = {}
    with single_threaded_blas():
        for n_high in config.sizes:
            low, high, (test_X, test_y) = synthetic_datasets(
                seed + 17 * n_high, n_high, config.test_size
            )
            dataset = concat_levels(low, high)
            for kind in config.classifiers:
                clf = train_classifier(
                    dataset, kind, kernel=kernel,
                    sampler=replace(config.sampler, seed=seed + 13 * n_high),
                    m_low_inducing=config.m_low_inducing,
                    inducing_seed=seed,
                )
                y_pred = clf.predict_labels(test_X)
                rows.append(_metric_row(kind, n_high, repeat, seed, y_pred,
                                        test_y))
                if config.export_traces == "all" or (
                    config.export_traces == "last"
                    and n_high == max(config.sizes)
                ):
                    traces[f"trace_{kind}_nh{n_high}_rep{repeat}.csv"] = \
                        clf.trace
    return rows, traces


def _al_repeat(payload):
    config, repeat = payload
    seed = config.repeat_seed(repeat)
    kernel = KernelConfig(config.n_lengthscales)
    low, high, test_set = synthetic_datasets(
        seed, config.n_initial_high, config.test_size
    )
    rows = []
    summary = []
    logs = {}
    with single_threaded_blas():
        for kind in config.classifiers:
            initial = high if kind == SF else concat_levels(low, high)
            campaign = CampaignConfig(
                domain=UNIT_SQUARE,
                n_initial_high=config.n_initial_high,
                n_iterations=config.n_iterations,
                pool=PoolSpec(kind="lhs", size=config.pool_size),
                sampler=replace(config.sampler, seed=seed),
                kernel=kernel,
                m_low_inducing=config.m_low_inducing,
                seed=seed,
            )
            clog = run_campaign(campaign, kind, label_high, initial,
                                test_set=test_set)
            path = clog.test_error_path
            n_path = clog.n_high_path(config.n_initial_high)
            for i, (n_h, err) in enumerate(zip(n_path, path)):
                rows.append([kind, repeat, i, int(n_h), _fmt(err)])
            reached = samples_to_target_error(n_path, path,
                                              config.target_error)
            summary.append([kind, repeat,
                            "" if reached is None else reached,
                            int(reached is None)])
            logs[f"campaign_{kind}_rep{repeat}.csv"] = (
                clog, config.n_initial_high
            )
    return rows, summary, logs


# -- cardiac assembly ---------------------------------------------------------


def _cardiac_grid(config) -> GridConfig:
    return GridConfig(dx=config.grid_dx)


def oracle_1d_factory(grid: GridConfig, a_fixed: float | None):
    """(s2, b) -> label for the 2-D study; (a, b, s2) -> label for 3-D."""
    if a_fixed is not None:
        def oracle(x):
            return run_1d(ApParams(a=a_fixed, b=float(x[1])),
                          StimulusProtocol(s2_time=float(x[0])), grid).label
    else:
        def oracle(x):
            return run_1d(ApParams(a=float(x[0]), b=float(x[1])),
                          StimulusProtocol(s2_time=float(x[2])), grid).label
    return oracle


def oracle_2d_factory(grid: GridConfig, a_fixed: float | None):
    if a_fixed is not None:
        def oracle(x):
            return run_2d(ApParams(a=a_fixed, b=float(x[1])),
                          StimulusProtocol(s2_time=float(x[0])), grid).label
    else:
        def oracle(x):
            return run_2d(ApParams(a=float(x[0]), b=float(x[1])),
                          StimulusProtocol(s2_time=float(x[2])), grid).label
    return oracle


def _label_rows(payload):
    oracle_name, grid, a_fixed, rows = payload
    factory = oracle_1d_factory if oracle_name == "1d" else oracle_2d_factory
    oracle = factory(grid, a_fixed)
    with single_threaded_blas():
        return [int(oracle(x)) for x in rows]


def _parallel_labels(config, executor, oracle_name, grid, a_fixed, X):
    workers = max(1, config.workers)
    if executor is None or workers == 1 or X.shape[0] < 4:
        return np.asarray(_label_rows((oracle_name, grid, a_fixed, X)))
    chunks = np.array_split(X, workers * 2)
    futures = [
        executor.submit(_label_rows, (oracle_name, grid, a_fixed, chunk))
        for chunk in chunks if chunk.shape[0]
    ]
    out = []
    for fut in futures:
        out.extend(fut.result())
    return np.asarray(out)


def _run_cardiac_2d(config, out: Path, executor):
    grid = _cardiac_grid(config)
    seed = config.repeat_seed(0)
    kernel = KernelConfig(config.n_lengthscales)
    oracle_low = oracle_1d_factory(grid, CARDIAC_A_DEFAULT)
    oracle_high = oracle_2d_factory(grid, CARDIAC_A_DEFAULT)

    # stage 1: grow the low-fidelity set with active learning on the cable
    log.info("cardiac-2d: low-fidelity campaign to N_L=%d", config.n_low_active)
    X0 = latin_hypercube(CARDIAC_2D_DOMAIN, config.n_initial_high, seed=seed)
    y0 = np.array([oracle_low(x) for x in X0])
    low_campaign = CampaignConfig(
        domain=CARDIAC_2D_DOMAIN,
        n_initial_high=config.n_initial_high,
        n_iterations=config.n_low_active - config.n_initial_high,
        pool=PoolSpec(kind="grid", grid_shape=(33, 33)),
        sampler=replace(config.sampler, seed=seed),
        kernel=kernel,
        seed=seed,
    )
    low_log = run_campaign(low_campaign, SF, oracle_low,
                           LabeledDataset(X0, y0))
    save_campaign_log(low_log, out / "campaign_low.csv",
                      config.n_initial_high)
    low_ds = LabeledDataset(
        low_log.dataset.inputs, low_log.dataset.labels,
        np.full(low_log.dataset.n, LOW, "U1"),
    )

    # stage 2: the expensive test set, shared by every classifier
    log.info("cardiac-2d: labeling %d-point 2-D test set", config.test_size)
    test_X = latin_hypercube(CARDIAC_2D_DOMAIN, config.test_size,
                             seed=seed + 3000)
    test_y = _parallel_labels(config, executor, "2d", grid, CARDIAC_A_DEFAULT,
                              test_X)
    _write_csv(
        out / "test_set.csv", ["s2_time", "b", "label"],
        [[_fmt(x[0]), _fmt(x[1]), int(y)] for x, y in zip(test_X, test_y)],
    )

    # stage 3: balanced high-fidelity seed shared by all classifiers
    X_high = balanced_seed_selection(low_ds, config.n_initial_high,
                                     seed=seed + 2000)
    y_high = _parallel_labels(config, executor, "2d", grid,
                              CARDIAC_A_DEFAULT, X_high)
    high = LabeledDataset(X_high, y_high)

    metric_rows, trajectory_rows = [], []
    for kind in config.classifiers:
        log.info("cardiac-2d: %s campaign to N_H=%d", kind,
                 config.n_initial_high + config.n_iterations)
        initial = high if kind == SF else concat_levels(low_ds, high)
        campaign = CampaignConfig(
            domain=CARDIAC_2D_DOMAIN,
            n_initial_high=config.n_initial_high,
            n_iterations=config.n_iterations,
            pool=PoolSpec(kind="lhs", size=config.pool_size),
            sampler=replace(config.sampler, seed=seed),
            kernel=kernel,
            m_low_inducing=config.m_low_inducing,
            seed=seed,
        )
        clog = run_campaign(campaign, kind, oracle_high, initial,
                            test_set=(test_X, test_y), keep_final=True)
        save_campaign_log(clog, out / f"campaign_{kind}.csv",
                          config.n_initial_high)
        n_path = clog.n_high_path(config.n_initial_high)
        for i, (n_h, err) in enumerate(zip(n_path, clog.test_error_path)):
            trajectory_rows.append([kind, 0, i, int(n_h), _fmt(err)])
        # metrics at the initial and final sample counts
        first_clf = train_classifier(
            initial, kind, kernel=kernel,
            sampler=replace(config.sampler, seed=seed),
            m_low_inducing=config.m_low_inducing, inducing_seed=seed,
        )
        metric_rows.append(_metric_row(
            kind, config.n_initial_high, 0, seed,
            first_clf.predict_labels(test_X), test_y,
        ))
        final_clf = clog.final_classifier
        metric_rows.append(_metric_row(
            kind, int(n_path[-1]), 0, seed,
            final_clf.predict_labels(test_X), test_y,
        ))
        if config.export_traces != "none":
            export_trace(final_clf.trace, out / f"trace_{kind}.csv")
    _write_csv(out / "metrics.csv", METRIC_HEADER, metric_rows)
    _write_csv(out / "trajectories.csv",
               ["classifier", "repeat", "iteration", "n_high", "test_error"],
               trajectory_rows)
    return {"n_low": int(low_ds.n)}


def _run_cardiac_3d(config, out: Path, executor):
    grid = _cardiac_grid(config)
    seed = config.repeat_seed(0)
    kernel = KernelConfig(config.n_lengthscales)
    oracle_low = oracle_1d_factory(grid, None)
    oracle_high = oracle_2d_factory(grid, None)

    log.info("cardiac-3d: 1-D sweep of %d LHS points", config.low_pool)
    sweep_X = latin_hypercube(CARDIAC_3D_DOMAIN, config.low_pool, seed=seed)
    sweep_y = _parallel_labels(config, executor, "1d", grid, None, sweep_X)
    _write_csv(out / "low_sweep.csv", ["a", "b", "s2_time", "label"],
               [[_fmt(x[0]), _fmt(x[1]), _fmt(x[2]), int(y)]
                for x, y in zip(sweep_X, sweep_y)])

    ones = np.flatnonzero(sweep_y == 1)
    zeros = np.flatnonzero(sweep_y == 0)
    rng = np.random.default_rng(seed + 11)
    n_zeros = min(config.n_low_zeros, zeros.size)
    keep = np.concatenate([ones, rng.choice(zeros, size=n_zeros,
                                            replace=False)])
    keep.sort()
    low_ds = LabeledDataset(sweep_X[keep], sweep_y[keep],
                            np.full(keep.size, LOW, "U1"))
    flags = {
        "n_low_positive": int(ones.size),
        "n_low_zero": int(n_zeros),
        "quoted_counts_matched": bool(ones.size >= 109 and n_zeros == 400),
    }

    X_high = balanced_seed_selection(low_ds, config.n_initial_high,
                                     seed=seed + 2000)
    y_high = _parallel_labels(config, executor, "2d", grid, None, X_high)
    initial = concat_levels(low_ds, LabeledDataset(X_high, y_high))

    log.info("cardiac-3d: sparse campaign for %d iterations",
             config.n_iterations)
    campaign = CampaignConfig(
        domain=CARDIAC_3D_DOMAIN,
        n_initial_high=X_high.shape[0],
        n_iterations=config.n_iterations,
        pool=PoolSpec(kind="lhs", size=config.pool_size),
        sampler=replace(config.sampler, seed=seed),
        kernel=kernel,
        m_low_inducing=config.m_low_inducing,
        seed=seed,
    )
    clog = run_campaign(campaign, SPARSE_MF, oracle_high, initial,
                        keep_final=True)
    save_campaign_log(clog, out / "campaign_sparse-mf.csv",
                      X_high.shape[0])
    clf = clog.final_classifier
    if config.export_traces != "none":
        export_trace(clf.trace, out / "trace_sparse-mf.csv")

    a_values = np.linspace(CARDIAC_3D_DOMAIN.lower[0],
                           CARDIAC_3D_DOMAIN.upper[0], config.window_grid)
    b_values = np.linspace(CARDIAC_3D_DOMAIN.lower[1],
                           CARDIAC_3D_DOMAIN.upper[1], config.window_grid)
    window = vulnerability_window(
        lambda pts: clf.predict(pts).prob_mean,
        a_values, b_values,
        CARDIAC_3D_DOMAIN.lower[2], CARDIAC_3D_DOMAIN.upper[2],
        t_step=config.window_t_step,
    )
    rows = []
    for i, a in enumerate(a_values):
        for j, b in enumerate(b_values):
            rows.append([_fmt(a), _fmt(b), _fmt(window[i, j])])
    _write_csv(out / "vulnerability_window.csv",
               ["a", "b", "window_ms"], rows)
    return flags


# -- the experiment front door ------------------------------------------------


def run_experiment(config: ExperimentConfig) -> Path:
    """Run one experiment; returns the output directory."""
    config = config.resolved()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "experiment": config.experiment,
        "package_version": __version__,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "seeds": [config.repeat_seed(r) for r in range(config.repeats)],
        "completed_repeats": [],
        "incomplete_repeats": [],
        "flags": {},
    }
    executor = None
    try:
        if config.workers > 1:
            executor = ProcessPoolExecutor(max_workers=config.workers)
        if config.experiment == "synthetic-sweep":
            _dispatch_synthetic(config, out, executor, manifest,
                                _sweep_repeat, _collect_sweep)
        elif config.experiment == "synthetic-al":
            _dispatch_synthetic(config, out, executor, manifest,
                                _al_repeat, _collect_al)
        elif config.experiment == "cardiac-2d":
            manifest["flags"] = _run_cardiac_2d(config, out, executor)
            manifest["completed_repeats"] = [0]
        else:
            manifest["flags"] = _run_cardiac_3d(config, out, executor)
            manifest["completed_repeats"] = [0]
    finally:
        if executor is not None:
            executor.shutdown()
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return out


def _dispatch_synthetic(config, out, executor, manifest, worker, collector):
    payloads = [(config, r) for r in range(config.repeats)]
    results = {}
    if executor is not None:
        futures = {r: executor.submit(worker, payloads[r])
                   for r in range(config.repeats)}
        for r, fut in futures.items():
            try:
                results[r] = fut.result()
                manifest["completed_repeats"].append(r)
            except Exception as exc:  # partial completion is a real outcome
                log.error("repeat %d failed: %s", r, exc)
                manifest["incomplete_repeats"].append(r)
    else:
        for r in range(config.repeats):
            try:
                results[r] = worker(payloads[r])
                manifest["completed_repeats"].append(r)
            except Exception as exc:
                log.error("repeat %d failed: %s", r, exc)
                manifest["incomplete_repeats"].append(r)
    collector(config, out, results)


def _collect_sweep(config, out, results):
    rows = []
    for r in sorted(results):
        rows.extend(results[r][0])
    rows.sort(key=lambda row: (row[0], int(row[1]), int(row[2])))
    _write_csv(out / "metrics.csv", METRIC_HEADER, rows)
    for r in sorted(results):
        for name, trace in results[r][1].items():
            export_trace(trace, out / name)


def _collect_al(config, out, results):
    trajectory_rows, summary_rows = [], []
    for r in sorted(results):
        rows, summary, logs = results[r]
        trajectory_rows.extend(rows)
        summary_rows.extend(summary)
        for name, (clog, n_init) in logs.items():
            save_campaign_log(clog, out / name, n_init)
    trajectory_rows.sort(key=lambda row: (row[0], int(row[1]), int(row[2])))
    summary_rows.sort(key=lambda row: (row[0], int(row[1])))
    _write_csv(out / "trajectories.csv",
               ["classifier", "repeat", "iteration", "n_high", "test_error"],
               trajectory_rows)
    _write_csv(out / "samples_to_target.csv",
               ["classifier", "repeat", "n_high_at_target", "censored"],
               summary_rows)


def rerun_from_manifest(manifest_path, out_dir) -> Path:
    """Re-execute an experiment exactly as its manifest pins it."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    config = config_from_dict(manifest["config"])
    config = replace(config, out_dir=str(out_dir))
    if config_hash(config) != manifest["config_hash"]:
        raise ConfigError("manifest config hash mismatch; file corrupted?")
    return run_experiment(config)
