"""Measured displacement current, frequency windowing and the Gaussian Kraus model."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .electrostatics import (
    DEFAULT_LINEAR_THRESHOLD,
    FluxRegimeReport,
    FluxTable,
    SurfaceGeometry,
    grad_flux,
    linear_slope,
)
from .errors import InsufficientDataError, RegimeViolationError, VanishingNormError, \
    WindowTooShortError
from .probe import ProbeState
from .quantum import HBAR, WavePacketState, bohmian_velocity


class CurrentSample(NamedTuple):
    t: float
    i_total: float
    i_system: float
    i_noise: float


@dataclass
class CurrentTrace(Sequence):
    """Column store of current samples; indexing yields :class:`CurrentSample`."""

    t: np.ndarray
    i_total: np.ndarray
    i_system: np.ndarray
    i_noise: np.ndarray

    @classmethod
    def from_samples(cls, samples) -> "CurrentTrace":
        if isinstance(samples, CurrentTrace):
            return samples
        cols = np.array([tuple(s) for s in samples], dtype=float).reshape(-1, 4)
        return cls(*(cols[:, i].copy() for i in range(4)))

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return CurrentTrace(self.t[i], self.i_total[i], self.i_system[i], self.i_noise[i])
        return CurrentSample(float(self.t[i]), float(self.i_total[i]), float(self.i_system[i]),
                             float(self.i_noise[i]))


@dataclass(frozen=True)
class MeasurementWindow:
    frequency: float

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError("frequency must be > 0")

    @property
    def T(self) -> float:
        return 1.0 / self.frequency


def system_current(state: WavePacketState, geom: SurfaceGeometry, velocity=None,
                   threshold: float = DEFAULT_LINEAR_THRESHOLD) -> float:
    report = FluxRegimeReport.evaluate(state.X1, geom, threshold)
    if not report.in_linear_regime:
        raise RegimeViolationError(
            f"device electron at X1={state.X1:.4g} m left the linear flux regime "
            f"(xi^2={report.xi ** 2:.3g})"
        )
    if velocity is None:
        velocity = bohmian_velocity(state)
    return geom.epsilon * linear_slope(geom, state.charge) * velocity


def noise_current(probe: ProbeState, geom: SurfaceGeometry, charge: float,
                  table: FluxTable | None = None) -> float:
    if probe.n == 0:
        return 0.0
    grad = table.gradient(probe.positions) if table is not None else \
        grad_flux(probe.positions, geom, charge)
    return geom.epsilon * float(np.sum(grad * probe.velocities))


def displacement_current(state: WavePacketState, probe: ProbeState, geom: SurfaceGeometry,
                         probe_charge: float, table: FluxTable | None = None,
                         threshold: float = DEFAULT_LINEAR_THRESHOLD) -> CurrentSample:
    """Current through the sensing surface split into device signal and probe noise.

    The device term uses the linear-regime slope times the Bohmian velocity;
    the probe term sums ``eps grad(Phi) . v`` over the probe electrons, using
    the interpolation table when one is given.
    """
    i_system = system_current(state, geom, threshold=threshold)
    i_noise = noise_current(probe, geom, probe_charge, table)
    return CurrentSample(state.t, i_system + i_noise, i_system, i_noise)


def samples_per_window(sample_spacing: float, window: MeasurementWindow) -> int:
    n = int(round(window.T / sample_spacing))
    if n < 2:
        raise WindowTooShortError(
            f"window T={window.T:.3g} s spans fewer than 2 samples of {sample_spacing:.3g} s"
        )
    return n


def boxcar(values, n: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    m = len(values) // n
    return values[: m * n].reshape(m, n).mean(axis=1)


def windowed_current(samples, window: MeasurementWindow) -> np.ndarray:
    """Non-overlapping boxcar averages of ``i_total``; a trailing partial window is dropped.

    The number of samples per window is ``round(T / sample spacing)``.
    """
    trace = CurrentTrace.from_samples(samples)
    if len(trace) < 2:
        raise WindowTooShortError("need at least two samples to window")
    spacing = float(trace.t[1] - trace.t[0])
    steps = np.diff(trace.t)
    if not np.allclose(steps, spacing, rtol=1e-9, atol=0.0):
        raise ValueError("samples are not uniformly spaced in time")
    return boxcar(trace.i_total, samples_per_window(spacing, window))


class WeakOutcome(NamedTuple):
    state: WavePacketState
    weight: float


def gaussian_weak_operator(state: WavePacketState, p_w: float, sigma_w: float) -> WeakOutcome:
    """Apply the Gaussian momentum Kraus operator centred on ``p_w``.

    The window ``exp(-(p - p_w)^2 / (2 sigma_w^2))`` multiplies the discrete
    Fourier amplitudes; the returned weight is the squared norm before
    renormalization, i.e. the relative probability of outcome ``p_w``.
    """
    if not sigma_w > 0:
        raise ValueError("sigma_w must be > 0")
    p = HBAR * state.grid.k
    phi = np.fft.fft(state.psi)
    phi = phi * np.exp(-((p - p_w) ** 2) / (2.0 * sigma_w ** 2))
    psi = np.fft.ifft(phi)
    weight = float(np.sum(np.abs(psi) ** 2) * state.grid.dx / state.norm())
    if weight < 1e-12:
        raise VanishingNormError(f"outcome weight {weight:.3g} below 1e-12")
    psi = psi / np.sqrt(np.sum(np.abs(psi) ** 2) * state.grid.dx)
    return WeakOutcome(replace(state, psi=psi), weight)


def fit_sigma_w(values) -> float:
    """Sample standard deviation of windowed currents (moment estimator)."""
    values = np.asarray(values, dtype=float).ravel()
    if len(values) < 100:
        raise InsufficientDataError(f"need >= 100 values, got {len(values)}")
    if np.all(values == values[0]):
        return 0.0
    return float(np.std(values, ddof=1))
