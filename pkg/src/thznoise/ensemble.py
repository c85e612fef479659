"""Single coupled experiments and seeded ensembles of them.

Experiment ``i`` of an ensemble draws its random numbers from a Philox
stream keyed by ``(seed, i)``, so any experiment can be rerun in isolation
and the ensemble result does not depend on how work is scheduled.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

from .electrostatics import (
    DEFAULT_LINEAR_THRESHOLD,
    SurfaceGeometry,
    cached_flux_table,
)
from .errors import SimulationError, WindowTooShortError
from .measurement import (
    CurrentTrace,
    MeasurementWindow,
    boxcar,
    displacement_current,
    fit_sigma_w,
    samples_per_window,
)
from .probe import (
    ProbeConfig,
    TrajectoryWriter,
    conditional_potential_on_grid,
    init_probe,
    step_probe,
)
from .quantum import Grid1D, WavePacketState, advance_trajectory, init_gaussian_packet, step_tdse

log = logging.getLogger(__name__)

DEFAULT_FREQUENCIES = (5e14, 2.5e14, 2e14, 1e14, 5e13)


@dataclass(frozen=True)
class QuantumConfig:
    x_min: float = 0.0
    x_max: float = 400e-9
    n_points: int = 2048
    x0: float = 150e-9
    sigma: float = 10e-9
    k0: float = 5e8
    mass: float = constants.m_e
    charge: float = -constants.e
    deterministic: bool = False

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("quantum.mass must be > 0")
        if not self.sigma > 0:
            raise ValueError("quantum.sigma must be > 0")

    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.x_min, self.x_max, self.n_points)

    def initial_state(self, rng) -> WavePacketState:
        return init_gaussian_packet(self.grid, self.x0, self.sigma, self.k0, self.mass,
                                    self.charge, seed=rng, deterministic=self.deterministic)


def default_surface() -> SurfaceGeometry:
    return SurfaceGeometry(x_A=450e-9, L_y=40e-6, L_z=40e-6)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = ""
    plots: bool = True
    flux_table_csv: bool = False
    trajectory_stride: int = 0

    def __post_init__(self):
        if self.trajectory_stride < 0:
            raise ValueError("output.trajectory_stride must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    quantum: QuantumConfig = field(default_factory=QuantumConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    surface: SurfaceGeometry = field(default_factory=default_surface)
    total_time: float = 4e-14
    record_stride: int = 1
    seed: int = 2015
    frequencies: tuple = DEFAULT_FREQUENCIES
    n_experiments: int = 2000
    histogram_bins: int = 64
    flux_table_resolution: int = 64
    linear_threshold: float = DEFAULT_LINEAR_THRESHOLD
    threads: int = 1
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("ensemble.threads must be >= 1")
        if self.record_stride < 1:
            raise ValueError("ensemble.record_stride must be >= 1")
        if not self.total_time > 0 or self.n_steps < 10:
            raise ValueError("ensemble.total_time must cover at least 10 time steps")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("ensemble.seed must be an unsigned 64-bit integer")
        if any(not f > 0 for f in self.frequencies):
            raise ValueError("ensemble.frequencies must be > 0")
        if self.n_experiments < 1:
            raise ValueError("ensemble.n_experiments must be >= 1")
        if self.histogram_bins < 1:
            raise ValueError("ensemble.histogram_bins must be >= 1")

    @property
    def dt(self) -> float:
        return self.probe.dt

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.probe.dt))

    @property
    def sample_spacing(self) -> float:
        return self.dt * self.record_stride


def experiment_streams(seed: int, index: int):
    """Independent generators for the packet and the probe of experiment ``index``."""
    packet = np.random.SeedSequence(seed, spawn_key=(index, 0))
    probe = np.random.SeedSequence(seed, spawn_key=(index, 1))
    return (np.random.Generator(np.random.Philox(packet)),
            np.random.Generator(np.random.Philox(probe)))


class ExperimentError(SimulationError):
    def __init__(self, index, step, t, cause):
        self.index, self.step, self.t, self.cause = index, step, t, cause
        super().__init__(f"experiment {index} aborted at step {step} (t={t:.4g} s): "
                         f"{type(cause).__name__}: {cause}")


def flux_table_for(cfg: ExperimentConfig):
    lo, hi = cfg.probe.box
    return cached_flux_table(cfg.surface, cfg.probe.charge, tuple(lo), tuple(hi),
                             cfg.flux_table_resolution)


def run_experiment(cfg: ExperimentConfig, index: int = 0,
                   trajectory: TrajectoryWriter | None = None,
                   return_states: bool = False):
    """One coupled quantum/probe evolution; returns the recorded :class:`CurrentTrace`.

    Each step computes the conditional potential from the current probe,
    advances the wave function and the Bohmian position, moves the probe
    electrons under the new ``X1`` and records the current every
    ``record_stride`` steps.  ``return_states=True`` also returns the list of
    ``(state, probe)`` pairs at the recorded steps.
    """
    packet_rng, probe_rng = experiment_streams(cfg.seed, index)
    state = cfg.quantum.initial_state(packet_rng)
    probe = init_probe(cfg.probe, probe_rng)
    table = flux_table_for(cfg)
    grid = cfg.quantum.grid
    q_sys = cfg.quantum.charge
    dt = cfg.dt
    n_rec = cfg.n_steps // cfg.record_stride
    cols = np.empty((4, n_rec))
    states = []
    rec = 0
    step = 0
    try:
        for step in range(cfg.n_steps):
            pot = conditional_potential_on_grid(probe, grid, cfg.probe, q_sys)
            psi_prev = state.psi
            state = step_tdse(state, pot, dt)
            state = advance_trajectory(state, dt, previous_psi=psi_prev)
            probe = step_probe(probe, state.X1, cfg.probe, q_sys)
            if trajectory is not None:
                trajectory.write(probe)
            if (step + 1) % cfg.record_stride == 0:
                sample = displacement_current(state, probe, cfg.surface, cfg.probe.charge,
                                              table, cfg.linear_threshold)
                cols[:, rec] = sample
                rec += 1
                if return_states:
                    states.append((state, probe))
    except (SimulationError, ValueError) as exc:
        raise ExperimentError(index, step, state.t, exc) from exc
    trace = CurrentTrace(*cols)
    return (trace, states) if return_states else trace


def check_frequencies(cfg: ExperimentConfig, frequencies):
    frequencies = tuple(float(f) for f in frequencies)
    if list(frequencies) != sorted(frequencies, reverse=True):
        raise ValueError("frequencies must be sorted in descending order")
    for f in frequencies:
        if 1.0 / f < 2.0 * cfg.sample_spacing:
            raise WindowTooShortError(
                f"window 1/f = {1.0 / f:.3g} s shorter than two samples at {f:.3g} Hz"
            )
    return frequencies


@dataclass
class ExperimentSummary:
    index: int
    ok: bool
    error: str = ""
    mean_total: float = float("nan")
    mean_system: float = float("nan")
    windowed: dict = field(default_factory=dict)


def summarize_trace(trace: CurrentTrace, spacing: float, frequencies, index: int = 0):
    windowed = {}
    for f in frequencies:
        n = samples_per_window(spacing, MeasurementWindow(f))
        windowed[f] = boxcar(trace.i_total, n)
    return ExperimentSummary(index=index, ok=True, mean_total=float(np.mean(trace.i_total)),
                             mean_system=float(np.mean(trace.i_system)), windowed=windowed)


def _run_one(args) -> ExperimentSummary:
    cfg, index, frequencies = args
    try:
        trace = run_experiment(cfg, index)
    except ExperimentError as exc:
        log.warning("%s", exc)
        return ExperimentSummary(index=index, ok=False, error=str(exc))
    return summarize_trace(trace, cfg.sample_spacing, frequencies, index)


@dataclass
class EnsembleStats:
    n_experiments: int
    statuses: list
    histogram: tuple
    mean_measured: float
    mean_system_only: float
    sigma_w: dict
    sample_sigma: float
    means_total: np.ndarray
    means_system: np.ndarray
    windowed: dict
    histograms: dict

    @property
    def n_failed(self) -> int:
        return sum(1 for s in self.statuses if not s["ok"])


def _histogram(values, bins: int, edges=None):
    values = np.asarray(values, dtype=float)
    if edges is None:
        lo, hi = (float(values.min()), float(values.max())) if len(values) else (0.0, 1.0)
        if lo == hi:
            pad = abs(lo) * 1e-6 if lo else 1e-30
            lo, hi = lo - pad, hi + pad
        edges = np.linspace(lo, hi, bins + 1)
    counts, edges = np.histogram(values, bins=edges)
    return edges, counts


def aggregate(summaries, frequencies, bins: int) -> EnsembleStats:
    """Deterministic reduction of per-experiment summaries in index order."""
    summaries = sorted(summaries, key=lambda s: s.index)
    good = [s for s in summaries if s.ok]
    statuses = [{"index": s.index, "ok": s.ok, "error": s.error} for s in summaries]
    if not good:
        raise SimulationError("every experiment in the ensemble failed")
    means_total = np.array([s.mean_total for s in good])
    means_system = np.array([s.mean_system for s in good])
    windowed = {f: np.concatenate([s.windowed[f] for s in good]) for f in frequencies}
    sigma_w = {}
    for f in frequencies:
        sigma_w[f] = fit_sigma_w(windowed[f]) if len(windowed[f]) >= 100 else float("nan")
    main = windowed[frequencies[0]]
    histogram = _histogram(main, bins)
    all_values = np.concatenate([windowed[f] for f in frequencies])
    shared = _histogram(all_values, bins)[0]
    histograms = {f: _histogram(windowed[f], bins, shared) for f in frequencies}
    sample_sigma = float(np.std(means_total, ddof=1)) if len(good) > 1 else 0.0
    return EnsembleStats(
        n_experiments=len(good), statuses=statuses, histogram=histogram,
        mean_measured=float(np.mean(means_total)), mean_system_only=float(np.mean(means_system)),
        sigma_w=sigma_w, sample_sigma=sample_sigma, means_total=means_total,
        means_system=means_system, windowed=windowed, histograms=histograms,
    )


def run_ensemble(cfg: ExperimentConfig, n: int | None = None, threads: int = 1,
                 frequencies=None) -> EnsembleStats:
    """Run ``n`` independent experiments and aggregate their windowed currents."""
    n = cfg.n_experiments if n is None else n
    if n < 1:
        raise ValueError("ensemble needs at least one experiment")
    frequencies = check_frequencies(cfg, cfg.frequencies if frequencies is None else frequencies)
    jobs = [(cfg, i, frequencies) for i in range(n)]
    threads = max(1, min(threads, n))
    if threads == 1:
        summaries = [_run_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            summaries = list(pool.map(_run_one, jobs, chunksize=max(1, n // (4 * threads))))
    return aggregate(summaries, frequencies, cfg.histogram_bins)


def sigma_w_from_traces(traces, spacing: float, frequencies) -> dict:
    """Width of the pooled windowed-current distribution per frequency."""
    out = {}
    for f in frequencies:
        n = samples_per_window(spacing, MeasurementWindow(f))
        values = np.concatenate([boxcar(CurrentTrace.from_samples(t).i_total, n) for t in traces])
        out[f] = fit_sigma_w(values)
    return out


def sigma_w_vs_frequency(cfg: ExperimentConfig, n: int, frequencies, threads: int = 1) -> dict:
    frequencies = check_frequencies(cfg, frequencies)
    stats = run_ensemble(cfg, n, threads=threads, frequencies=frequencies)
    return {f: stats.sigma_w[f] for f in frequencies}


def frozen(cfg: ExperimentConfig) -> ExperimentConfig:
    return replace(cfg, probe=replace(cfg.probe, frozen=True))
