"""Built-in oracle suite run by ``thznoise validate``.

Each check compares a production routine against an independent route
(closed form against quadrature, exact decay law against the integrator,
and so on) and reports the largest error it observed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import constants

from .electrostatics import (
    SurfaceGeometry,
    flux_exact,
    flux_exact_derivative,
    flux_linearized,
    flux_numeric,
    flux_offaxis,
)
from .measurement import MeasurementWindow, boxcar, samples_per_window
from .probe import ProbeConfig, ProbeState, conservative_forces, init_probe, step_probe
from .quantum import ConditionalPotential, Grid1D, init_gaussian_packet, step_tdse

Q = -constants.e


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error <= self.tolerance)


def _rel(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.abs(np.asarray(b))))


def check_flux_quadrature() -> float:
    geom = SurfaceGeometry(x_A=0.0, L_y=50e-9, L_z=50e-9)
    return _rel(flux_numeric([-5e-9, 0.0, 0.0], geom, Q, n_quad=512),
                flux_exact(-5e-9, geom, Q))


def check_flux_linearized() -> float:
    geom = SurfaceGeometry(x_A=0.0, L_y=1e-6, L_z=1e-6)
    xi = np.linspace(1e-3, 0.0999, 50)
    X = -xi * np.sqrt(0.5 * geom.area)
    return _rel(flux_linearized(X, geom, Q, threshold=0.01), flux_exact(X, geom, Q))


def check_gauss_half_flux() -> float:
    geom = SurfaceGeometry(x_A=0.0, L_y=1e-6, L_z=1e-6)
    limit = Q / (2.0 * geom.epsilon)
    return _rel(flux_exact(-1e-9 * np.sqrt(geom.area), geom, Q), limit)


def check_flux_offaxis() -> float:
    geom = SurfaceGeometry(x_A=0.0, L_y=60e-9, L_z=40e-9)
    points = [[-10e-9, 5e-9, -3e-9], [-25e-9, 40e-9, 10e-9], [15e-9, -20e-9, 25e-9]]
    return max(_rel(flux_numeric(p, geom, Q, n_quad=1024), flux_offaxis(p, geom, Q))
               for p in points)


def check_flux_derivative() -> float:
    geom = SurfaceGeometry(x_A=0.0, L_y=1e-6, L_z=1e-6)
    X = np.array([-5e-9, -50e-9, -300e-9])
    h = 1e-3 * np.abs(X)
    fd = (flux_exact(X + h, geom, Q) - flux_exact(X - h, geom, Q)) / (2.0 * h)
    return _rel(fd, flux_exact_derivative(X, geom, Q))


def check_unitarity(n_steps: int = 1000) -> float:
    grid = Grid1D(0.0, 200e-9, 1024)
    state = init_gaussian_packet(grid, 100e-9, 8e-9, 5e8, constants.m_e, Q, deterministic=True)
    rng = np.random.default_rng(7)
    v = 0.05 * constants.e * rng.standard_normal(grid.n_points)
    pot = ConditionalPotential(grid, v)
    n0 = state.norm()
    drift = 0.0
    for _ in range(n_steps):
        state = step_tdse(state, pot, 4e-17)
        drift = max(drift, abs(state.norm() - n0) / n0)
    return drift


def check_constant_potential_phase() -> float:
    grid = Grid1D(0.0, 200e-9, 1024)
    state = init_gaussian_packet(grid, 100e-9, 8e-9, 5e8, constants.m_e, Q, deterministic=True)
    dt, c = 4e-17, 0.3 * constants.e
    free = step_tdse(state, ConditionalPotential(grid, np.zeros(grid.n_points)), dt)
    shifted = step_tdse(state, ConditionalPotential(grid, np.full(grid.n_points, c)), dt)
    expected = free.psi * np.exp(-1j * c * dt / constants.hbar)
    return float(np.max(np.abs(shifted.psi - expected)) / np.max(np.abs(free.psi)))


def check_damped_motion(n_steps: int = 1000) -> float:
    cfg = ProbeConfig(n_electrons=1, slab_width=1e-3, slab_area=1e-6, background=False,
                      temperature=0.0)
    lo, hi = cfg.box
    v0 = np.array([[200.0, -100.0, 50.0]])
    probe = ProbeState(positions=(0.5 * (lo + hi))[None, :], velocities=v0.copy())
    err = 0.0
    for _ in range(n_steps):
        probe = step_probe(probe, 0.0, cfg, system_charge=0.0)
        exact = v0 * np.exp(-cfg.gamma * probe.t / cfg.mass)
        err = max(err, _rel(probe.velocities, exact))
    return err


def check_newton_third_law() -> float:
    cfg = ProbeConfig(n_electrons=64, background=False)
    probe = init_probe(cfg, 11)
    forces = conservative_forces(probe, 0.0, 0.0, cfg)
    scale = float(np.max(np.abs(forces)))
    return float(np.max(np.abs(forces.sum(axis=0)))) / scale


def check_window_algebra() -> float:
    spacing = 4e-17
    t = spacing * np.arange(1, 1001)
    values = 3.0 + 2e-3 * t / spacing
    errors = []
    for f in (5e14, 1e14, 5e13):
        n = samples_per_window(spacing, MeasurementWindow(f))
        got = boxcar(values, n)
        m = len(values) // n
        # a linear ramp averages to its value at each window's midpoint
        idx = np.arange(m) * n + 0.5 * (n - 1)
        expected = 3.0 + 2e-3 * (idx + 1.0)
        errors.append(_rel(got, expected))
    return max(errors)


CHECKS: dict[str, tuple[Callable[[], float], float]] = {
    "flux_quadrature": (check_flux_quadrature, 1e-6),
    "flux_linearized": (check_flux_linearized, 2e-3),
    "gauss_half_flux": (check_gauss_half_flux, 1e-8),
    "flux_offaxis": (check_flux_offaxis, 1e-5),
    "flux_derivative": (check_flux_derivative, 1e-6),
    "tdse_unitarity": (check_unitarity, 1e-10),
    "tdse_constant_phase": (check_constant_potential_phase, 1e-10),
    "damped_motion": (check_damped_motion, 1e-2),
    "newton_third_law": (check_newton_third_law, 1e-12),
    "window_algebra": (check_window_algebra, 1e-12),
}


def run_validation(tolerances: dict | None = None, tolerance_scale: float = 1.0):
    """Run every check; ``tolerances`` overrides individual limits."""
    tolerances = tolerances or {}
    unknown = set(tolerances) - set(CHECKS)
    if unknown:
        raise KeyError(f"unknown checks: {sorted(unknown)}")
    results = []
    for name, (func, tol) in CHECKS.items():
        tol = tolerances.get(name, tol) * tolerance_scale
        results.append(CheckResult(name, func(), tol))
    return results


def format_report(results) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:<22s} max error {r.max_error:.3e}  "
                     f"tolerance {r.tolerance:.1e}")
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} checks passed")
    return "\n".join(lines)


__all__ = ["CHECKS", "CheckResult", "format_report", "run_validation"]
