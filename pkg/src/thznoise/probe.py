"""Classical electron gas of the metal probe.

Each probe electron feels the softened Coulomb force of the other probe
electrons, of the device electron (a point charge at ``(X1, y_c, z_c)``), of
an optional uniform neutralizing background filling the slab, and a viscous
drag ``-gamma v`` standing in for phonon scattering.  The quantum potential
of the probe electrons is dropped, so they follow Newton's law.

All pair loops are serial in a fixed order, so results are bit-reproducible
on any machine that runs the same binary.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np
from scipy import constants

from .electrostatics import EPSILON_0, box_field, box_potential
from .errors import ProbeBlowupError
from .quantum import ConditionalPotential, Grid1D

BLOWUP_SPEED = 1e-2 * constants.c


@dataclass(frozen=True)
class ProbeConfig:
    n_electrons: int = 1000
    density: float = 8.43e28
    slab_area: float = 2.5e-17
    slab_width: float = 5e-9
    gamma: float = 3.374e-17
    temperature: float = 300.0
    dt: float = 4e-17
    softening: float = 1e-10
    slab_x0: float = 500e-9
    axis_y: float = 0.0
    axis_z: float = 0.0
    mass: float = constants.m_e
    charge: float = -constants.e
    epsilon: float = EPSILON_0
    background: bool = True
    frozen: bool = False

    def __post_init__(self):
        if self.n_electrons < 0:
            raise ValueError("probe.n_electrons must be >= 0")
        for name in ("density", "slab_area", "slab_width", "dt", "softening", "mass",
                     "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"probe.{name} must be > 0")
        if not self.gamma >= 0:
            raise ValueError("probe.gamma must be >= 0")
        if not self.temperature >= 0:
            raise ValueError("probe.temperature must be >= 0")

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * np.sqrt(self.slab_area)
        lo = np.array([self.slab_x0, self.axis_y - half, self.axis_z - half])
        hi = np.array([self.slab_x0 + self.slab_width, self.axis_y + half, self.axis_z + half])
        return lo, hi

    @property
    def volume(self) -> float:
        return self.slab_area * self.slab_width

    def density_electron_count(self) -> int:
        """Electron count the slab would hold at ``density`` (about 1.05e4 by default)."""
        return int(round(self.density * self.volume))


@dataclass(frozen=True)
class ProbeState:
    positions: np.ndarray
    velocities: np.ndarray
    t: float = 0.0
    # forces at ``positions`` (without drag), cached between velocity-Verlet steps
    forces: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def n(self) -> int:
        return len(self.positions)


def init_probe(cfg: ProbeConfig, seed) -> ProbeState:
    """Uniform positions in the slab and Maxwell-Boltzmann velocities."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = cfg.box
    n = cfg.n_electrons
    positions = lo + (hi - lo) * rng.random((n, 3))
    v_th = np.sqrt(constants.k * cfg.temperature / cfg.mass)
    velocities = v_th * rng.standard_normal((n, 3))
    if cfg.frozen:
        velocities[:] = 0.0
    return ProbeState(positions=positions, velocities=velocities, t=0.0)


def lattice_probe(cfg: ProbeConfig, per_side: int) -> ProbeState:
    """Electrons at rest on a regular cubic lattice centered in the slab."""
    lo, hi = cfg.box
    axes = [lo[i] + (np.arange(per_side) + 0.5) * (hi[i] - lo[i]) / per_side for i in range(3)]
    positions = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return ProbeState(positions=positions, velocities=np.zeros_like(positions))


@numba.njit(cache=True)
def _pair_forces(pos, coupling, soft2):
    n = pos.shape[0]
    out = np.zeros((n, 3))
    for i in range(n):
        xi, yi, zi = pos[i, 0], pos[i, 1], pos[i, 2]
        for j in range(i + 1, n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            dz = zi - pos[j, 2]
            r2 = dx * dx + dy * dy + dz * dz + soft2
            s = coupling / (r2 * np.sqrt(r2))
            fx = s * dx
            fy = s * dy
            fz = s * dz
            out[i, 0] += fx
            out[i, 1] += fy
            out[i, 2] += fz
            out[j, 0] -= fx
            out[j, 1] -= fy
            out[j, 2] -= fz
    return out


@numba.njit(cache=True)
def _pair_energy(pos, coupling, soft2):
    n = pos.shape[0]
    e = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            e += coupling / np.sqrt(dx * dx + dy * dy + dz * dz + soft2)
    return e


@numba.njit(cache=True)
def _grid_potential(xs, pos, axis_y, axis_z, coupling, soft2):
    n_grid = xs.shape[0]
    n = pos.shape[0]
    perp2 = np.empty(n)
    for j in range(n):
        dy = pos[j, 1] - axis_y
        dz = pos[j, 2] - axis_z
        perp2[j] = dy * dy + dz * dz + soft2
    v = np.zeros(n_grid)
    for i in range(n_grid):
        x = xs[i]
        acc = 0.0
        for j in range(n):
            dx = x - pos[j, 0]
            acc += 1.0 / np.sqrt(dx * dx + perp2[j])
        v[i] = coupling * acc
    return v


def _coulomb_k(cfg: ProbeConfig) -> float:
    return 1.0 / (4.0 * np.pi * cfg.epsilon)


def _system_point(X1: float, cfg: ProbeConfig) -> np.ndarray:
    return np.array([X1, cfg.axis_y, cfg.axis_z])


def conservative_forces(probe: ProbeState, X1: float, system_charge: float,
                        cfg: ProbeConfig) -> np.ndarray:
    """Coulomb forces on every probe electron (no drag)."""
    pos = np.ascontiguousarray(probe.positions, dtype=float)
    k = _coulomb_k(cfg)
    soft2 = cfg.softening ** 2
    forces = _pair_forces(pos, k * cfg.charge * cfg.charge, soft2)
    if system_charge != 0.0:
        d = pos - _system_point(X1, cfg)
        r2 = np.sum(d * d, axis=1) + soft2
        forces += (k * cfg.charge * system_charge / (r2 * np.sqrt(r2)))[:, None] * d
    if cfg.background and len(pos):
        lo, hi = cfg.box
        forces += cfg.charge * box_field(pos, lo, hi, -cfg.charge * len(pos), cfg.epsilon)
    return forces


def coulomb_force(k: int, probe: ProbeState, X1: float, system_charge: float,
                  cfg: ProbeConfig) -> np.ndarray:
    """Total force on probe electron ``k``: Coulomb part minus ``gamma v_k``.

    Evaluated directly from the pair sum, independently of the vectorized
    kernel used for stepping.
    """
    pos = np.asarray(probe.positions, dtype=float)
    if not 0 <= k < len(pos):
        raise IndexError(f"electron index {k} out of range for {len(pos)} electrons")
    coupling = _coulomb_k(cfg) * cfg.charge
    soft2 = cfg.softening ** 2
    d = pos[k] - np.delete(pos, k, axis=0)
    r2 = np.sum(d * d, axis=1) + soft2
    force = coupling * cfg.charge * np.sum(d / (r2 * np.sqrt(r2))[:, None], axis=0)
    ds = pos[k] - _system_point(X1, cfg)
    r2s = ds @ ds + soft2
    force = force + coupling * system_charge * ds / (r2s * np.sqrt(r2s))
    if cfg.background:
        lo, hi = cfg.box
        force = force + cfg.charge * box_field(pos[k], lo, hi, -cfg.charge * len(pos),
                                               cfg.epsilon)
    return force - cfg.gamma * np.asarray(probe.velocities[k], dtype=float)


def _reflect(positions, velocities, lo, hi):
    for axis in range(3):
        below = positions[:, axis] < lo[axis]
        positions[below, axis] = 2.0 * lo[axis] - positions[below, axis]
        velocities[below, axis] = -velocities[below, axis]
        above = positions[:, axis] > hi[axis]
        positions[above, axis] = 2.0 * hi[axis] - positions[above, axis]
        velocities[above, axis] = -velocities[above, axis]


def step_probe(probe: ProbeState, X1: float, cfg: ProbeConfig,
               system_charge: float = -constants.e, walls: bool = True) -> ProbeState:
    """Advance all probe electrons by ``cfg.dt``.

    Velocity Verlet for the Coulomb part with the drag applied exactly as
    ``exp(-gamma dt / 2m)`` half-step factors on either side; specular
    reflection at the slab walls.
    """
    dt = cfg.dt
    if cfg.frozen or probe.n == 0:
        return ProbeState(probe.positions, np.zeros_like(probe.velocities), probe.t + dt,
                          probe.forces)
    forces = probe.forces
    if forces is None:
        forces = conservative_forces(probe, X1, system_charge, cfg)
    damp = np.exp(-0.5 * cfg.gamma * dt / cfg.mass)
    v = probe.velocities * damp + (0.5 * dt / cfg.mass) * forces
    x = probe.positions + dt * v
    if walls:
        lo, hi = cfg.box
        _reflect(x, v, lo, hi)
    new = ProbeState(x, v, probe.t + dt)
    forces = conservative_forces(new, X1, system_charge, cfg)
    v = (v + (0.5 * dt / cfg.mass) * forces) * damp
    if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > BLOWUP_SPEED:
        raise ProbeBlowupError(
            f"probe electron speed exceeded {BLOWUP_SPEED:.3g} m/s at t = {new.t:.4g} s"
        )
    return ProbeState(x, v, new.t, forces)


def total_energy(probe: ProbeState, X1: float, system_charge: float, cfg: ProbeConfig) -> float:
    """Kinetic plus electrostatic energy of the probe electrons (J)."""
    pos = np.ascontiguousarray(probe.positions, dtype=float)
    k = _coulomb_k(cfg)
    soft2 = cfg.softening ** 2
    energy = 0.5 * cfg.mass * float(np.sum(probe.velocities ** 2))
    energy += _pair_energy(pos, k * cfg.charge * cfg.charge, soft2)
    if system_charge != 0.0:
        d = pos - _system_point(X1, cfg)
        energy += float(np.sum(k * cfg.charge * system_charge /
                               np.sqrt(np.sum(d * d, axis=1) + soft2)))
    if cfg.background and len(pos):
        lo, hi = cfg.box
        energy += cfg.charge * float(np.sum(box_potential(pos, lo, hi, -cfg.charge * len(pos),
                                                          cfg.epsilon)))
    return energy


@numba.njit(cache=True)
def _axial_multipole_kernel(xs, pos, center, soft2, coupling, n_terms):
    n = pos.shape[0]
    moments = np.zeros(n_terms)
    for j in range(n):
        sx = pos[j, 0] - center[0]
        sy = pos[j, 1] - center[1]
        sz = pos[j, 2] - center[2]
        rho = np.sqrt(sx * sx + sy * sy + sz * sz + soft2)
        mu = sx / rho
        p_prev = 1.0
        p_cur = mu
        rho_l = 1.0
        for ell in range(n_terms):
            if ell == 0:
                p_l = 1.0
            elif ell == 1:
                p_l = mu
            else:
                p_next = ((2 * ell - 1) * mu * p_cur - (ell - 1) * p_prev) / ell
                p_prev = p_cur
                p_cur = p_next
                p_l = p_cur
            moments[ell] += rho_l * p_l
            rho_l *= rho
    v = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        dist = xs[i] - center[0]
        inv_r = 1.0 / abs(dist)
        sign = 1.0 if dist > 0 else -1.0
        # Horner evaluation of sum_l moment_l (sign / r)^l, then times 1/r
        t = sign * inv_r
        acc = 0.0
        for ell in range(n_terms - 1, -1, -1):
            acc = acc * t + moments[ell]
        v[i] = coupling * acc * inv_r
    return v


def _axial_multipole(xs, pos, center, soft2, coupling, ratio):
    """Exact Legendre expansion of the softened kernel for axis points far from the slab.

    ``1/sqrt(|r - s|^2 + a^2)`` equals the Coulomb generating function with
    ``|s|`` replaced by ``rho = sqrt(|s|^2 + a^2)``, so the series converges
    geometrically in ``rho_max / r_min``.
    """
    n_terms = int(np.ceil(np.log(1e-17) / np.log(ratio))) + 1
    return _axial_multipole_kernel(xs, pos, center, soft2, coupling, n_terms)


def conditional_potential_on_grid(probe: ProbeState, grid: Grid1D, cfg: ProbeConfig,
                                  system_charge: float = -constants.e,
                                  method: str = "auto") -> ConditionalPotential:
    """Potential energy the probe imposes on the device electron along the axis.

    ``method="direct"`` sums every electron at every grid point;
    ``"multipole"`` uses the axial Legendre series about the slab center,
    which ``"auto"`` selects when the grid is far enough away for the series
    to reach double precision within a few tens of terms.
    """
    xs = grid.x
    if probe.n == 0 or system_charge == 0.0:
        return ConditionalPotential(grid, np.zeros(grid.n_points), probe.t)
    pos = np.ascontiguousarray(probe.positions, dtype=float)
    coupling = _coulomb_k(cfg) * cfg.charge * system_charge
    soft2 = cfg.softening ** 2
    lo, hi = cfg.box
    center = np.array([0.5 * (lo[0] + hi[0]), cfg.axis_y, cfg.axis_z])
    rho_max = np.sqrt(np.max(np.sum((pos - center) ** 2, axis=1)) + soft2)
    ratio = rho_max / np.min(np.abs(xs - center[0]))
    if method == "auto":
        method = "multipole" if ratio < 0.25 else "direct"
    if method == "multipole":
        if ratio >= 0.5:
            raise ValueError("grid too close to the slab for the multipole expansion")
        v = _axial_multipole(xs, pos, center, soft2, coupling, ratio)
    elif method == "direct":
        v = _grid_potential(xs, pos, cfg.axis_y, cfg.axis_z, coupling, soft2)
    else:
        raise ValueError(f"unknown method {method!r}")
    if cfg.background:
        v = v + system_charge * _background_on_axis(grid, cfg, probe.n)
    return ConditionalPotential(grid, v, probe.t)


@functools.lru_cache(maxsize=8)
def _background_on_axis_cached(grid: Grid1D, cfg: ProbeConfig, n: int) -> np.ndarray:
    xs = grid.x
    lo, hi = cfg.box
    pts = np.column_stack([xs, np.full_like(xs, cfg.axis_y), np.full_like(xs, cfg.axis_z)])
    out = box_potential(pts, lo, hi, -cfg.charge * n, cfg.epsilon)
    out.setflags(write=False)
    return out


def _background_on_axis(grid: Grid1D, cfg: ProbeConfig, n: int) -> np.ndarray:
    return _background_on_axis_cached(grid, replace(cfg, frozen=False), n)


class TrajectoryWriter:
    """CSV dump of probe trajectories (``t, electron id, x, y, z, vx, vy, vz``)."""

    header = ["t_s", "electron", "x_m", "y_m", "z_m", "vx_m_s", "vy_m_s", "vz_m_s"]

    def __init__(self, path, stride: int = 1):
        if stride < 1:
            raise ValueError("trajectory stride must be >= 1")
        self.path = Path(path)
        self.stride = stride
        self._count = 0
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.header)

    def write(self, probe: ProbeState):
        if self._count % self.stride == 0:
            for i, (p, v) in enumerate(zip(probe.positions, probe.velocities)):
                self._writer.writerow([f"{probe.t:.16e}", i, *(f"{c:.16e}" for c in p),
                                       *(f"{c:.16e}" for c in v)])
        self._count += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def with_frozen(cfg: ProbeConfig) -> ProbeConfig:
    return replace(cfg, frozen=True)
