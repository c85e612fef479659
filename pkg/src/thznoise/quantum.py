"""Conditional wave function of the device electron and its Bohmian trajectory.

The wave function lives on a uniform 1D grid with hard walls (``psi = 0`` at
both ends).  Time stepping is Strang-split: half a potential phase, a
Crank-Nicolson kinetic step (one tridiagonal solve), then the other half of
the potential phase.  Every factor is unitary, so the discrete norm is kept
to rounding error for any step size, and a constant potential only rotates
the global phase by exactly ``-V dt / hbar``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants
from scipy.linalg import solve_banded

from .errors import (
    GridMismatchError,
    NodeRegionError,
    NonFinitePotentialError,
    PacketError,
    TrajectoryOutOfGridError,
)

HBAR = constants.hbar
DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("grid requires x_max > x_min")
        if self.n_points < 3:
            raise ValueError("grid requires n_points >= 3")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def k(self) -> np.ndarray:
        """Angular wave numbers of the discrete Fourier modes, FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)


@dataclass(frozen=True)
class WavePacketState:
    grid: Grid1D
    psi: np.ndarray
    mass: float
    charge: float
    t: float = 0.0
    X1: float = 0.0

    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.dx)

    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def centroid(self) -> float:
        rho = self.density()
        return float(np.sum(self.grid.x * rho) / np.sum(rho))


@dataclass(frozen=True)
class ConditionalPotential:
    grid: Grid1D
    v: np.ndarray
    t: float = 0.0


def gaussian_amplitude(x, x0, sigma, k0):
    return np.exp(-((x - x0) ** 2) / (4.0 * sigma * sigma) + 1j * k0 * x)


def sample_positions(grid: Grid1D, psi: np.ndarray, size, rng: np.random.Generator):
    """Draw positions from ``|psi|^2`` by inverting the piecewise-linear CDF."""
    rho = np.abs(psi) ** 2
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]))])
    cdf /= cdf[-1]
    u = rng.random(size)
    return np.interp(u, cdf, grid.x)


def density_cdf(grid: Grid1D, psi: np.ndarray):
    """Trapezoidal CDF of ``|psi|^2`` as a callable on positions."""
    rho = np.abs(psi) ** 2
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]))])
    cdf /= cdf[-1]
    xs = grid.x
    return lambda x: np.interp(x, xs, cdf)


def init_gaussian_packet(grid: Grid1D, x0: float, sigma: float, k0: float, mass: float,
                         charge: float, seed=None, deterministic: bool = False,
                         tail_tolerance: float = 1e-6) -> WavePacketState:
    """Normalized Gaussian packet; ``X1`` drawn from ``|psi|^2`` unless deterministic."""
    if not sigma > 2.0 * grid.dx:
        raise PacketError(f"packet too narrow: sigma={sigma:.3g} m <= 2 dx={2 * grid.dx:.3g} m")
    edge = min(x0 - grid.x_min, grid.x_max - x0)
    if edge <= 0 or np.exp(-(edge ** 2) / (2.0 * sigma ** 2)) >= tail_tolerance:
        raise PacketError(f"packet touches the boundary: x0={x0:.4g} m, sigma={sigma:.3g} m")
    psi = gaussian_amplitude(grid.x, x0, sigma, k0)
    psi[0] = psi[-1] = 0.0
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)
    if deterministic:
        X1 = float(x0)
    else:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        X1 = float(sample_positions(grid, psi, None, rng))
    return WavePacketState(grid=grid, psi=psi, mass=mass, charge=charge, t=0.0, X1=X1)


@functools.lru_cache(maxsize=16)
def _kinetic_operator(grid: Grid1D, mass: float, dt: float):
    """Banded forms of ``1 +/- i dt H_K / (2 hbar)`` on the interior points."""
    n = grid.n_points - 2
    r = 1j * HBAR * dt / (4.0 * mass * grid.dx ** 2)
    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-1] = -r
    return ab, r


def step_tdse(state: WavePacketState, pot: ConditionalPotential, dt: float) -> WavePacketState:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if pot.grid != state.grid:
        raise GridMismatchError("potential and wave function live on different grids")
    v = np.asarray(pot.v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NonFinitePotentialError("conditional potential has non-finite values")
    half_phase = np.exp(-0.5j * dt / HBAR * v)
    psi = state.psi * half_phase
    ab, r = _kinetic_operator(state.grid, state.mass, dt)
    inner = psi[1:-1]
    rhs = (1.0 - 2.0 * r) * inner
    rhs[1:] += r * inner[:-1]
    rhs[:-1] += r * inner[1:]
    out = np.zeros_like(psi)
    out[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
    out *= half_phase
    return replace(state, psi=out, t=state.t + dt)


def _node_derivative(psi, i, dx):
    """Central difference at node ``i``; one-sided at the grid ends."""
    last = len(psi) - 1
    lo = np.maximum(i - 1, 0)
    hi = np.minimum(i + 1, last)
    return (psi[hi] - psi[lo]) / ((hi - lo) * dx)


def _interp_psi(grid: Grid1D, psi: np.ndarray, x):
    u = (np.asarray(x, dtype=float) - grid.x_min) / grid.dx
    i = np.clip(np.floor(u).astype(np.intp), 0, grid.n_points - 2)
    w = u - i
    val = (1.0 - w) * psi[i] + w * psi[i + 1]
    der = (1.0 - w) * _node_derivative(psi, i, grid.dx) + w * _node_derivative(psi, i + 1, grid.dx)
    return val, der


def velocity_field(grid: Grid1D, psi: np.ndarray, mass: float, x,
                   floor: float = DENSITY_FLOOR):
    """``(hbar/m) Im(psi'/psi)`` at ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=float)
    if np.any((x < grid.x_min) | (x > grid.x_max)):
        raise TrajectoryOutOfGridError("velocity requested outside the grid")
    val, der = _interp_psi(grid, psi, x)
    rho = np.abs(val) ** 2
    if np.any(rho <= floor * np.max(np.abs(psi) ** 2)):
        raise NodeRegionError("density below the node floor; Bohmian velocity undefined")
    v = HBAR / mass * np.imag(der / val)
    return v if v.ndim else float(v)


def bohmian_velocity(state: WavePacketState, x=None, floor: float = DENSITY_FLOOR):
    """Bohmian velocity at ``x`` (defaults to the particle position ``X1``)."""
    if x is None:
        x = state.X1
    return velocity_field(state.grid, state.psi, state.mass, x, floor)


def advance_positions(grid: Grid1D, psi_start: np.ndarray, psi_end: np.ndarray, mass: float,
                      X, dt: float, floor: float = DENSITY_FLOOR):
    """Explicit midpoint step of ``dX/dt = v(X, t)`` for one or many positions.

    The half-step velocity uses the average of the wave functions at both
    ends of the step.
    """
    v0 = velocity_field(grid, psi_start, mass, X, floor)
    X_half = np.asarray(X) + 0.5 * dt * np.asarray(v0)
    if np.any((X_half < grid.x_min) | (X_half > grid.x_max)):
        raise TrajectoryOutOfGridError("trajectory left the grid")
    psi_mid = 0.5 * (psi_start + psi_end)
    v_half = velocity_field(grid, psi_mid, mass, X_half, floor)
    X_new = np.asarray(X) + dt * np.asarray(v_half)
    if np.any((X_new < grid.x_min) | (X_new > grid.x_max)):
        raise TrajectoryOutOfGridError("trajectory left the grid")
    return X_new


def advance_trajectory(state: WavePacketState, dt: float, previous_psi=None,
                       floor: float = DENSITY_FLOOR) -> WavePacketState:
    """Move ``X1`` across the step that ended at ``state``.

    ``previous_psi`` is the wave function at the start of the step; without
    it the current wave function is used for both midpoint evaluations.
    """
    start = state.psi if previous_psi is None else previous_psi
    X_new = advance_positions(state.grid, start, state.psi, state.mass, state.X1, dt, floor)
    return replace(state, X1=float(X_new))


def momentum_density(state: WavePacketState):
    """Wave numbers (sorted) and normalized discrete momentum probabilities."""
    phi = np.fft.fft(state.psi)
    prob = np.abs(phi) ** 2
    prob /= prob.sum()
    k = state.grid.k
    order = np.argsort(k)
    return k[order], prob[order]
