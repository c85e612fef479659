"""Electric flux of point charges through the sensing surface.

The sensing surface is the plane ``x = x_A`` restricted to the rectangle
``|y - y_c| <= L_y/2, |z - z_c| <= L_z/2``; the device axis is the line
``y = y_c, z = z_c``.  Flux is counted along ``+x``, so a positive charge
left of the plane (``X < x_A``) gives positive flux.

Three independent routes to the flux are provided:

* :func:`flux_exact` -- closed arctan form for a charge on the axis,
* :func:`flux_offaxis` -- closed solid-angle form for any position,
* :func:`flux_numeric` -- composite midpoint quadrature of ``E . n``.

:func:`flux_linearized` is the first-order large-surface form whose slope
:func:`linear_slope` converts the device electron velocity into current.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import constants

from .errors import RegimeViolationError, TooCloseToPlaneError

EPSILON_0 = constants.epsilon_0
DEFAULT_LINEAR_THRESHOLD = 0.01


@dataclass(frozen=True)
class SurfaceGeometry:
    x_A: float
    L_y: float
    L_z: float
    epsilon: float = EPSILON_0
    y_c: float = 0.0
    z_c: float = 0.0

    def __post_init__(self):
        for name in ("L_y", "L_z", "epsilon"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"surface.{name} must be > 0, got {value!r}")

    @property
    def area(self) -> float:
        return self.L_y * self.L_z

    @property
    def is_square(self) -> bool:
        return self.L_y == self.L_z

    def min_distance(self) -> float:
        """Closest approach to the plane allowed for quadrature and gradients."""
        return 1e-3 * np.sqrt(self.area)


@dataclass(frozen=True)
class FluxRegimeReport:
    chi: float
    xi: float
    in_linear_regime: bool

    @classmethod
    def evaluate(cls, X, geom: SurfaceGeometry, threshold=DEFAULT_LINEAR_THRESHOLD):
        chi = geom.x_A - X
        xi2 = 2.0 * chi * chi / geom.area
        return cls(chi=chi, xi=float(np.sqrt(xi2)), in_linear_regime=bool(xi2 < threshold))


def _require_square(geom: SurfaceGeometry):
    if not geom.is_square:
        raise ValueError(
            f"closed-form flux needs a square surface, got L_y={geom.L_y}, L_z={geom.L_z}"
        )


def flux_exact(X, geom: SurfaceGeometry, charge: float):
    """Flux of a charge on the device axis at ``x = X`` through a square surface.

    ``X == x_A`` returns the one-sided limit ``q / (2 eps)`` approached from
    the left of the plane.
    """
    _require_square(geom)
    X = np.asarray(X, dtype=float)
    S = geom.area
    chi = geom.x_A - X
    with np.errstate(divide="ignore"):
        arg = S / (4.0 * chi * np.sqrt(chi * chi + 0.5 * S))
    phi = np.where(chi == 0.0, np.pi / 2, np.arctan(arg))
    out = charge / (np.pi * geom.epsilon) * phi
    return out if out.ndim else float(out)


def flux_exact_derivative(X, geom: SurfaceGeometry, charge: float):
    """Analytic ``dPhi/dX`` of :func:`flux_exact`."""
    _require_square(geom)
    X = np.asarray(X, dtype=float)
    xi2 = 2.0 * (geom.x_A - X) ** 2 / geom.area
    out = (
        charge
        / (np.pi * geom.epsilon)
        * 2.0
        * np.sqrt(2.0 / geom.area)
        / (np.sqrt(1.0 + xi2) * (1.0 + 2.0 * xi2))
    )
    return out if out.ndim else float(out)


def linear_slope(geom: SurfaceGeometry, charge: float) -> float:
    """Slope ``dPhi/dX`` of the linearized flux (units V)."""
    return charge / (np.pi * geom.epsilon) * 2.0 * np.sqrt(2.0 / geom.area)


def flux_linearized(X, geom: SurfaceGeometry, charge: float,
                    threshold: float = DEFAULT_LINEAR_THRESHOLD):
    _require_square(geom)
    X = np.asarray(X, dtype=float)
    chi = geom.x_A - X
    xi2 = 2.0 * chi * chi / geom.area
    if np.any(xi2 >= threshold):
        raise RegimeViolationError(
            f"xi^2 = {np.max(xi2):.3g} is not below the linear-regime threshold {threshold}"
        )
    out = charge / (np.pi * geom.epsilon) * (np.pi / 2) - linear_slope(geom, charge) * chi
    return out if out.ndim else float(out)


def _corner_sum(a0, a1, b0, b1, d):
    """Signed solid-angle sum for a rectangle given corner offsets from the foot point."""
    total = 0.0
    for a, sa in ((a1, 1.0), (a0, -1.0)):
        for b, sb in ((b1, 1.0), (b0, -1.0)):
            r = np.sqrt(a * a + b * b + d * d)
            total = total + sa * sb * np.arctan(a * b / (d * r))
    return total


def flux_offaxis(pos, geom: SurfaceGeometry, charge: float):
    """Closed-form flux for charges at arbitrary positions.

    ``pos`` has shape ``(3,)`` or ``(N, 3)``.  The rectangle is split at the
    foot of the perpendicular into four corner rectangles, each of which has
    the solid angle ``arctan(a b / (d R))``.
    """
    pos = np.asarray(pos, dtype=float)
    X, Y, Z = pos[..., 0], pos[..., 1], pos[..., 2]
    d = geom.x_A - X
    if np.any(d == 0.0):
        raise TooCloseToPlaneError("charge lies on the surface plane")
    a0 = geom.y_c - 0.5 * geom.L_y - Y
    a1 = geom.y_c + 0.5 * geom.L_y - Y
    b0 = geom.z_c - 0.5 * geom.L_z - Z
    b1 = geom.z_c + 0.5 * geom.L_z - Z
    out = charge / (4.0 * np.pi * geom.epsilon) * _corner_sum(a0, a1, b0, b1, d)
    return out if np.ndim(out) else float(out)


def _check_distance(pos, geom: SurfaceGeometry):
    d = np.abs(geom.x_A - np.asarray(pos, dtype=float)[..., 0])
    if np.any(d < geom.min_distance()):
        raise TooCloseToPlaneError(
            f"charge within {geom.min_distance():.3g} m of the surface plane"
        )


@functools.lru_cache(maxsize=8)
def _leggauss(n):
    return np.polynomial.legendre.leggauss(n)


def _sinh_nodes(lo, hi, center, scale, n):
    """Gauss-Legendre nodes and weights for ``[lo, hi]`` after ``y = center + scale sinh(u)``.

    The map spreads the nodes over the scale of the distance to the plane,
    so the peaked Coulomb integrand becomes smooth in ``u``.
    """
    u, w = _leggauss(n)
    u0, u1 = np.arcsinh((lo - center) / scale), np.arcsinh((hi - center) / scale)
    u = 0.5 * (u1 - u0) * u + 0.5 * (u1 + u0)
    w = 0.5 * (u1 - u0) * w
    return center + scale * np.sinh(u), w * scale * np.cosh(u)


def flux_numeric(pos, geom: SurfaceGeometry, charge: float, n_quad: int = 512) -> float:
    """Tensor-product quadrature of the normal Coulomb field over the surface.

    ``n_quad`` Gauss-Legendre nodes per side in sinh-stretched coordinates
    centred on the foot point of the charge.
    """
    if n_quad < 16:
        raise ValueError("n_quad must be >= 16")
    pos = np.asarray(pos, dtype=float)
    _check_distance(pos, geom)
    X, Y, Z = pos
    dx = geom.x_A - X
    d = abs(dx)
    ys, wy = _sinh_nodes(geom.y_c - 0.5 * geom.L_y, geom.y_c + 0.5 * geom.L_y, Y, d, n_quad)
    zs, wz = _sinh_nodes(geom.z_c - 0.5 * geom.L_z, geom.z_c + 0.5 * geom.L_z, Z, d, n_quad)
    r2 = dx * dx + ((ys - Y) ** 2)[:, None] + ((zs - Z) ** 2)[None, :]
    integral = wy @ (dx / (r2 * np.sqrt(r2))) @ wz
    return float(charge / (4.0 * np.pi * geom.epsilon) * integral)


def _fd_step(pos, geom: SurfaceGeometry):
    d = np.abs(geom.x_A - pos[..., 0])
    return 1e-3 * np.minimum(np.sqrt(geom.area), d)


def grad_flux(pos, geom: SurfaceGeometry, charge: float, method: str = "closed",
              n_quad: int = 512):
    """Gradient of the flux with respect to the charge position.

    ``method="closed"`` takes central differences of :func:`flux_offaxis`
    (vectorized over ``(N, 3)`` input); ``"numeric"`` differences
    :func:`flux_numeric` for a single position; ``"axis"`` returns the analytic
    derivative of :func:`flux_exact` and requires an on-axis position.
    """
    pos = np.asarray(pos, dtype=float)
    _check_distance(pos, geom)
    if charge == 0.0:
        return np.zeros_like(pos)
    if method == "axis":
        if pos.ndim != 1 or pos[1] != geom.y_c or pos[2] != geom.z_c:
            raise ValueError("method='axis' requires a single on-axis position")
        return np.array([flux_exact_derivative(pos[0], geom, charge), 0.0, 0.0])
    h = _fd_step(pos, geom)
    if method == "closed":
        grad = np.empty_like(pos)
        for axis in range(3):
            step = np.zeros_like(pos)
            step[..., axis] = h
            grad[..., axis] = (
                flux_offaxis(pos + step, geom, charge) - flux_offaxis(pos - step, geom, charge)
            ) / (2.0 * h)
        return grad
    if method == "numeric":
        if pos.ndim != 1:
            raise ValueError("method='numeric' takes a single position")
        grad = np.empty(3)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            grad[axis] = (
                flux_numeric(pos + step, geom, charge, n_quad)
                - flux_numeric(pos - step, geom, charge, n_quad)
            ) / (2.0 * h)
        return grad
    raise ValueError(f"unknown method {method!r}")


class FluxTable:
    """Trilinear lookup of flux and flux gradient over a rectangular box.

    Built once from :func:`flux_offaxis` / :func:`grad_flux` and read-only
    afterwards; positions outside the box are clamped to its faces.
    """

    def __init__(self, geom: SurfaceGeometry, charge: float, lo, hi, resolution: int = 64):
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        self.geom = geom
        self.charge = charge
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.resolution = resolution
        self.axes = [np.linspace(self.lo[i], self.hi[i], resolution) for i in range(3)]
        self.spacing = (self.hi - self.lo) / (resolution - 1)
        mesh = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, 3)
        shape = (resolution,) * 3
        self.phi = flux_offaxis(mesh, geom, charge).reshape(shape)
        self.grad = grad_flux(mesh, geom, charge).reshape(shape + (3,))

    def gradient(self, pos) -> np.ndarray:
        pos = np.ascontiguousarray(np.atleast_2d(pos), dtype=float)
        return _trilinear(self.grad, pos, self.lo, self.spacing)

    def flux(self, pos) -> np.ndarray:
        pos = np.ascontiguousarray(np.atleast_2d(pos), dtype=float)
        return _trilinear(self.phi[..., None], pos, self.lo, self.spacing)[:, 0]

    def to_csv(self, path) -> Path:
        path = Path(path)
        mesh = np.meshgrid(*self.axes, indexing="ij")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x_m", "y_m", "z_m", "flux_V_m"])
            for x, y, z, p in zip(mesh[0].ravel(), mesh[1].ravel(), mesh[2].ravel(),
                                  self.phi.ravel()):
                writer.writerow([f"{x:.16e}", f"{y:.16e}", f"{z:.16e}", f"{p:.16e}"])
        return path


@numba.njit(cache=True)
def _trilinear(values, pos, lo, spacing):
    res = values.shape[0]
    ncomp = values.shape[3]
    out = np.zeros((pos.shape[0], ncomp))
    for p in range(pos.shape[0]):
        idx = np.empty(3, dtype=np.int64)
        frac = np.empty(3)
        for a in range(3):
            u = (pos[p, a] - lo[a]) / spacing[a]
            u = min(max(u, 0.0), res - 1.0)
            i = min(int(np.floor(u)), res - 2)
            idx[a] = i
            frac[a] = u - i
        for dx in range(2):
            wx = frac[0] if dx else 1.0 - frac[0]
            for dy in range(2):
                wy = frac[1] if dy else 1.0 - frac[1]
                for dz in range(2):
                    wz = frac[2] if dz else 1.0 - frac[2]
                    w = wx * wy * wz
                    for c in range(ncomp):
                        out[p, c] += w * values[idx[0] + dx, idx[1] + dy, idx[2] + dz, c]
    return out


@functools.lru_cache(maxsize=8)
def cached_flux_table(geom: SurfaceGeometry, charge: float, lo: tuple, hi: tuple,
                      resolution: int) -> FluxTable:
    return FluxTable(geom, charge, lo, hi, resolution)


# -- uniformly charged box ----------------------------------------------------

def _box_primitive(u, v, w):
    r = np.sqrt(u * u + v * v + w * w)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            u * v * np.log(w + r)
            + v * w * np.log(u + r)
            + w * u * np.log(v + r)
            - 0.5 * u * u * np.arctan(v * w / (u * r))
            - 0.5 * v * v * np.arctan(w * u / (v * r))
            - 0.5 * w * w * np.arctan(u * v / (w * r))
        )
    return np.nan_to_num(out, nan=0.0)


def _box_sum(func, pos, lo, hi):
    pos = np.asarray(pos, dtype=float)
    total = 0.0
    for cx, sx in ((hi[0], 1.0), (lo[0], -1.0)):
        for cy, sy in ((hi[1], 1.0), (lo[1], -1.0)):
            for cz, sz in ((hi[2], 1.0), (lo[2], -1.0)):
                total = total + sx * sy * sz * func(cx - pos[..., 0], cy - pos[..., 1],
                                                    cz - pos[..., 2])
    return total


def box_potential(pos, lo, hi, total_charge: float, epsilon: float = EPSILON_0):
    """Electrostatic potential of a uniformly charged rectangular box."""
    volume = np.prod(np.asarray(hi) - np.asarray(lo))
    rho = total_charge / volume
    return rho / (4.0 * np.pi * epsilon) * _box_sum(_box_primitive, pos, lo, hi)


@numba.njit(cache=True)
def _primitive_du(u, v, w):
    r = np.sqrt(u * u + v * v + w * w)
    out = 0.0
    if v != 0.0:
        out += v * np.log(w + r)
    if w != 0.0:
        out += w * np.log(v + r)
    if u != 0.0:
        out -= u * np.arctan(v * w / (u * r))
    return out


@numba.njit(cache=True)
def _box_field_kernel(pos, lo, hi, pref):
    n = pos.shape[0]
    out = np.zeros((n, 3))
    for i in range(n):
        ex = 0.0
        ey = 0.0
        ez = 0.0
        for a in range(2):
            u = (hi[0] if a == 0 else lo[0]) - pos[i, 0]
            for b in range(2):
                v = (hi[1] if b == 0 else lo[1]) - pos[i, 1]
                for c in range(2):
                    w = (hi[2] if c == 0 else lo[2]) - pos[i, 2]
                    sign = 1.0 if (a + b + c) % 2 == 0 else -1.0
                    # the primitive is cyclic in (u, v, w): one partial serves all axes
                    ex += sign * _primitive_du(u, v, w)
                    ey += sign * _primitive_du(v, w, u)
                    ez += sign * _primitive_du(w, u, v)
        out[i, 0] = pref * ex
        out[i, 1] = pref * ey
        out[i, 2] = pref * ez
    return out


def box_field(pos, lo, hi, total_charge: float, epsilon: float = EPSILON_0) -> np.ndarray:
    """Electric field of a uniformly charged rectangular box, shape like ``pos``."""
    pos = np.asarray(pos, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pref = total_charge / np.prod(hi - lo) / (4.0 * np.pi * epsilon)
    flat = np.ascontiguousarray(pos.reshape(-1, 3))
    return _box_field_kernel(flat, lo, hi, pref).reshape(pos.shape)
