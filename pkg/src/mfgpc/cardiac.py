"""Monodomain Aliev-Panfilov solver with explicit finite differences.

Two-variable excitable-tissue kinetics on a 1-D cable (cheap level) and a
2-D square patch (expensive level), driven by an S1/S2 stimulus protocol:

    dV/dt = D lap(V) + (1/tau) * (-k V (V - a)(V - 1) - V r)
    dr/dt = (1/tau) * (eps0 + mu1 r / (mu2 + V)) * (-r - k V (V - b - 1))

The kinetics are dimensionless; tau converts one model time unit to
milliseconds so the protocol can be stated in ms. The labels:

  1-D: 1 iff, after the second stimulus, an activation front reaches the
       left-quarter probe but not the right-quarter probe (retrograde-only
       propagation, the substrate of a spiral).
  2-D: 1 iff any node activates in a 10 ms window starting 300 ms after the
       second stimulus (self-sustained re-entry).

Activation means an upward crossing of V = 0.5 with dV/dt > 0.01/ms; the
thresholds reject numerical noise. Boundaries are no-flux everywhere.
"""

from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, SimulationBlowupError

# activation detection thresholds
ACTIVATION_LEVEL = 0.5
ACTIVATION_RATE = 0.01  # 1/ms

# model time unit in ms; calibrated so the ms-valued stimulus protocol lands
# inside the studied stimulus-time intervals (the kinetics are dimensionless,
# and only this constant positions the vulnerability window on the ms axis)
DEFAULT_TIME_SCALE = 1.2

BLOWUP_CHECK_STRIDE = 200


@dataclass(frozen=True)
class ApParams:
    """Aliev-Panfilov kinetics: a controls excitability, b recovery."""

    a: float = 0.15
    b: float = 0.05
    k: float = 8.0
    eps0: float = 0.002
    mu1: float = 0.2
    mu2: float = 0.3

    def __post_init__(self):
        for name in ("a", "b", "k", "eps0", "mu1", "mu2"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class GridConfig:
    """Discretization and physical constants shared by both levels."""

    dx: float = 0.25  # mm
    dt: float = 0.01  # ms
    length: float = 50.0  # mm per axis
    diffusivity: float = 0.1  # mm^2/ms
    time_scale: float = DEFAULT_TIME_SCALE  # ms per model time unit
    safety: float = 0.9

    def __post_init__(self):
        if min(self.dx, self.dt, self.length, self.diffusivity,
               self.time_scale) <= 0:
            raise ConfigError("grid constants must be positive")
        limit = self.dx**2 / (4.0 * self.diffusivity) * self.safety
        if self.dt > limit:
            raise ConfigError(
                f"explicit stability violated: dt={self.dt} > {limit:.6g}"
            )

    @property
    def n_nodes(self) -> int:
        return int(round(self.length / self.dx)) + 1


@dataclass(frozen=True)
class StimulusProtocol:
    """S1 planar wave at t=0 plus a timed S2 in the tissue center."""

    s2_time: float  # ms, the study parameter
    s1_duration: float = 1.0  # ms
    s1_width: float = 2.0  # mm from the left boundary
    s2_duration: float = 5.0  # ms
    s2_width: float = 2.0  # mm

    def __post_init__(self):
        if self.s2_time < 0:
            raise ConfigError("s2_time must be nonnegative")


@dataclass(frozen=True)
class SimResult:
    """Label plus the activation record backing it."""

    label: int
    left_quarter_activated: bool | None = None
    right_quarter_activated: bool | None = None
    late_activation: bool | None = None
    wall_time: float = 0.0
    snapshots: np.ndarray | None = None
    snapshot_times: np.ndarray | None = None


@dataclass(frozen=True)
class SimJob:
    """One cardiac simulation request."""

    a: float
    b: float
    s2_time: float
    fidelity: str  # "L" (1-D cable) or "H" (2-D patch)
    grid: GridConfig = field(default_factory=GridConfig)

    def run(self) -> SimResult:
        params = ApParams(a=self.a, b=self.b)
        if self.fidelity == "L":
            return run_1d(params, StimulusProtocol(self.s2_time), self.grid)
        if self.fidelity == "H":
            return run_2d(params, StimulusProtocol(self.s2_time), self.grid)
        raise ConfigError(f"fidelity must be 'L' or 'H', got {self.fidelity}")


def _reaction(V, r, p: ApParams, inv_tau: float):
    """Kinetics right-hand sides, already scaled to 1/ms."""
    dV = (-p.k * V * (V - p.a) * (V - 1.0) - V * r) * inv_tau
    dr = (p.eps0 + p.mu1 * r / (p.mu2 + V)) * (-r - p.k * V * (V - p.b - 1.0)) \
        * inv_tau
    return dV, dr


def _laplacian_1d(V, dx2):
    lap = np.empty_like(V)
    lap[1:-1] = V[:-2] + V[2:] - 2.0 * V[1:-1]
    lap[0] = 2.0 * (V[1] - V[0])  # no-flux mirror
    lap[-1] = 2.0 * (V[-2] - V[-1])
    lap /= dx2
    return lap


def _laplacian_2d(V, dx2):
    lap = np.empty_like(V)
    lap[1:-1, 1:-1] = (
        V[:-2, 1:-1] + V[2:, 1:-1] + V[1:-1, :-2] + V[1:-1, 2:]
        - 4.0 * V[1:-1, 1:-1]
    )
    # no-flux edges: mirrored neighbor counts twice
    lap[0, 1:-1] = 2.0 * V[1, 1:-1] + V[0, :-2] + V[0, 2:] - 4.0 * V[0, 1:-1]
    lap[-1, 1:-1] = (
        2.0 * V[-2, 1:-1] + V[-1, :-2] + V[-1, 2:] - 4.0 * V[-1, 1:-1]
    )
    lap[1:-1, 0] = 2.0 * V[1:-1, 1] + V[:-2, 0] + V[2:, 0] - 4.0 * V[1:-1, 0]
    lap[1:-1, -1] = (
        2.0 * V[1:-1, -2] + V[:-2, -1] + V[2:, -1] - 4.0 * V[1:-1, -1]
    )
    lap[0, 0] = 2.0 * (V[1, 0] + V[0, 1]) - 4.0 * V[0, 0]
    lap[0, -1] = 2.0 * (V[1, -1] + V[0, -2]) - 4.0 * V[0, -1]
    lap[-1, 0] = 2.0 * (V[-2, 0] + V[-1, 1]) - 4.0 * V[-1, 0]
    lap[-1, -1] = 2.0 * (V[-2, -1] + V[-1, -2]) - 4.0 * V[-1, -1]
    lap /= dx2
    return lap


def step(V, r, params: ApParams, grid: GridConfig):
    """One explicit Euler step; returns the new (V, r)."""
    inv_tau = 1.0 / grid.time_scale
    dV_r, dr = _reaction(V, r, params, inv_tau)
    lap = _laplacian_1d(V, grid.dx**2) if V.ndim == 1 else _laplacian_2d(
        V, grid.dx**2
    )
    V_new = V + grid.dt * (grid.diffusivity * lap + dV_r)
    r_new = r + grid.dt * dr
    return V_new, r_new


def _check_state(V, step_index):
    if not np.all(np.isfinite(V)) or np.max(np.abs(V)) > 50.0:
        raise SimulationBlowupError("non-finite or runaway voltage",
                                    step=step_index)


def simulate_cell(v0: float, r0: float, params: ApParams, t_end: float,
                  grid: GridConfig = GridConfig()):
    """Zero-dimensional kinetics trajectory (diffusion off); for validation."""
    n = int(round(t_end / grid.dt))
    V = np.empty(n + 1)
    R = np.empty(n + 1)
    V[0], R[0] = v0, r0
    inv_tau = 1.0 / grid.time_scale
    v, r = float(v0), float(r0)
    for i in range(1, n + 1):
        dv, dr = _reaction(v, r, params, inv_tau)
        v += grid.dt * dv
        r += grid.dt * dr
        V[i], R[i] = v, r
    return np.arange(n + 1) * grid.dt, V, R


class _ActivationTracker:
    """Upward 0.5-crossings with dV/dt above threshold, per node."""

    def __init__(self, shape, dt):
        self.prev = np.zeros(shape)
        self.rate_min = ACTIVATION_RATE * dt
        self.level = ACTIVATION_LEVEL

    def update(self, V) -> np.ndarray:
        fired = (
            (self.prev < self.level)
            & (V >= self.level)
            & ((V - self.prev) > self.rate_min)
        )
        self.prev = V.copy()
        return fired


def run_1d(params: ApParams, protocol: StimulusProtocol,
           grid: GridConfig = GridConfig(), post_s2_time: float = 250.0,
           snapshot_stride: int = 0) -> SimResult:
    """S1/S2 on the cable; probes at the quarter points."""
    t_start = time.perf_counter()
    n = grid.n_nodes
    x = np.arange(n) * grid.dx
    V = np.zeros(n)
    r = np.zeros(n)
    s1_mask = x <= protocol.s1_width
    center = grid.length / 2.0
    s2_mask = np.abs(x - center) <= protocol.s2_width / 2.0
    probe_left = int(round(n / 4))
    probe_right = int(round(3 * n / 4))
    t_end = protocol.s2_time + protocol.s2_duration + post_s2_time
    n_steps = int(round(t_end / grid.dt))
    tracker = _ActivationTracker(n, grid.dt)
    left_hit = right_hit = False
    snapshots, snap_times = [], []
    s2_on = protocol.s2_time
    s2_off = protocol.s2_time + protocol.s2_duration
    for i in range(n_steps):
        t = i * grid.dt
        if t < protocol.s1_duration:
            V[s1_mask] = 1.0
        if s2_on <= t < s2_off:
            V[s2_mask] = 1.0
        V, r = step(V, r, params, grid)
        if i % BLOWUP_CHECK_STRIDE == 0:
            _check_state(V, i)
        fired = tracker.update(V)
        if t > s2_on:
            left_hit = left_hit or bool(fired[probe_left])
            right_hit = right_hit or bool(fired[probe_right])
        if snapshot_stride and i % snapshot_stride == 0:
            snapshots.append(V.copy())
            snap_times.append(t)
    label = int(left_hit and not right_hit)
    return SimResult(
        label=label,
        left_quarter_activated=left_hit,
        right_quarter_activated=right_hit,
        wall_time=time.perf_counter() - t_start,
        snapshots=np.asarray(snapshots) if snapshots else None,
        snapshot_times=np.asarray(snap_times) if snapshots else None,
    )


def run_2d(params: ApParams, protocol: StimulusProtocol,
           grid: GridConfig = GridConfig(), late_window: float = 10.0,
           late_delay: float = 300.0, snapshot_stride: int = 0) -> SimResult:
    """S1 planar wave plus an S2 stripe through the bottom half.

    The second stimulus excites the central 2 mm (in x) of the bottom half
    of the patch. The stripe's free end at mid-tissue is what lets the
    retrograde wave curl into a rotor; a compact 2 mm square is absorbed by
    electrotonic loading and never nucleates a wave.
    """
    t_start = time.perf_counter()
    n = grid.n_nodes
    coord = np.arange(n) * grid.dx
    V = np.zeros((n, n))
    r = np.zeros((n, n))
    s1_cols = coord <= protocol.s1_width
    half = protocol.s2_width / 2.0
    cx = grid.length / 2.0
    s2_cols = np.abs(coord - cx) <= half
    s2_rows = coord <= grid.length / 2.0
    s2_mask = np.ix_(s2_rows, s2_cols)
    window_lo = protocol.s2_time + late_delay
    window_hi = window_lo + late_window
    n_steps = int(round(window_hi / grid.dt))
    tracker = _ActivationTracker((n, n), grid.dt)
    late_hit = False
    snapshots, snap_times = [], []
    s2_on = protocol.s2_time
    s2_off = protocol.s2_time + protocol.s2_duration
    for i in range(n_steps):
        t = i * grid.dt
        if t < protocol.s1_duration:
            V[:, s1_cols] = 1.0
        if s2_on <= t < s2_off:
            V[s2_mask] = 1.0
        V, r = step(V, r, params, grid)
        if i % BLOWUP_CHECK_STRIDE == 0:
            _check_state(V, i)
        if t >= window_lo:
            fired = tracker.update(V)
            late_hit = late_hit or bool(fired.any())
        elif t >= window_lo - 1.0:
            tracker.update(V)  # settle prev right before the window
        if snapshot_stride and i % snapshot_stride == 0:
            snapshots.append(V.astype(np.float32))
            snap_times.append(t)
    return SimResult(
        label=int(late_hit),
        late_activation=late_hit,
        wall_time=time.perf_counter() - t_start,
        snapshots=np.asarray(snapshots) if snapshots else None,
        snapshot_times=np.asarray(snap_times) if snapshots else None,
    )


def run_1d_label(s2_time: float, params: ApParams,
                 grid: GridConfig = GridConfig()) -> int:
    return run_1d(params, StimulusProtocol(s2_time=s2_time), grid).label


def run_2d_label(s2_time: float, params: ApParams,
                 grid: GridConfig = GridConfig()) -> int:
    return run_2d(params, StimulusProtocol(s2_time=s2_time), grid).label


def vulnerability_window(predict_probability, a_values, b_values,
                         t_lo: float, t_hi: float,
                         t_step: float = 0.5) -> np.ndarray:
    """Integrate predicted spiral probability over the stimulus-time axis.

    predict_probability maps a (Q, 3) matrix of (a, b, s2_time) rows to
    probabilities. Rectangle rule on the left-endpoint grid t_lo + k*t_step,
    so a constant 1 over [t_lo, t_hi) integrates to exactly t_hi - t_lo.
    """
    a_values = np.atleast_1d(np.asarray(a_values, dtype=float))
    b_values = np.atleast_1d(np.asarray(b_values, dtype=float))
    n_t = int(round((t_hi - t_lo) / t_step))
    times = t_lo + t_step * np.arange(n_t)
    window = np.empty((a_values.shape[0], b_values.shape[0]))
    for i, a in enumerate(a_values):
        for j, b in enumerate(b_values):
            pts = np.column_stack(
                [np.full(n_t, a), np.full(n_t, b), times]
            )
            probs = np.asarray(predict_probability(pts), dtype=float)
            window[i, j] = float(probs.sum() * t_step)
    return window


# -- persistence ------------------------------------------------------------

SIM_CSV_HEADER = ["a", "b", "s2_time", "fidelity", "label", "wall_time"]


def save_sim_results(rows, path) -> None:
    """rows: iterable of (SimJob, SimResult) pairs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SIM_CSV_HEADER)
        for job, result in rows:
            writer.writerow([
                repr(float(job.a)), repr(float(job.b)),
                repr(float(job.s2_time)), job.fidelity, result.label,
                "%.6g" % result.wall_time,
            ])


def write_snapshots(result: SimResult, path, grid: GridConfig,
                    stride: int) -> None:
    """Flat binary frames with a small text header for external tools."""
    if result.snapshots is None:
        raise ConfigError("simulation was run without snapshots")
    frames = result.snapshots.astype(np.float32)
    shape = frames.shape
    ny = shape[1]
    nx = shape[2] if frames.ndim == 3 else 1
    header = (
        f"nx {nx}\nny {ny}\ndx {grid.dx}\ndt {grid.dt}\n"
        f"frame_stride {stride}\nframes {shape[0]}\n"
    )
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header.encode())
        fh.write(frames.tobytes())
