from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import constants, stats

from thznoise.errors import (
    GridMismatchError,
    NodeRegionError,
    NonFinitePotentialError,
    PacketError,
    TrajectoryOutOfGridError,
)
from thznoise.quantum import (
    HBAR,
    ConditionalPotential,
    Grid1D,
    advance_positions,
    advance_trajectory,
    bohmian_velocity,
    density_cdf,
    init_gaussian_packet,
    momentum_density,
    sample_positions,
    step_tdse,
    velocity_field,
)

M = constants.m_e
Q = -constants.e
GRID = Grid1D(0.0, 400e-9, 2048)


def packet(x0=150e-9, sigma=10e-9, k0=5e8, grid=GRID, **kw):
    return init_gaussian_packet(grid, x0, sigma, k0, M, Q, deterministic=True, **kw)


def zero(grid=GRID):
    return ConditionalPotential(grid, np.zeros(grid.n_points))


def free_density(x, t, x0, sigma, k0):
    """|psi|^2 of a freely spreading Gaussian."""
    v = HBAR * k0 / M
    s_t = sigma * np.sqrt(1 + (HBAR * t / (2 * M * sigma ** 2)) ** 2)
    return np.exp(-(x - x0 - v * t) ** 2 / (2 * s_t ** 2)) / np.sqrt(2 * np.pi * s_t ** 2)


def test_initial_packet_is_normalized_and_centred():
    s = packet()
    assert s.norm() == pytest.approx(1.0, abs=1e-14)
    assert s.centroid() == pytest.approx(150e-9, rel=1e-9)
    assert s.X1 == 150e-9
    assert s.psi[0] == 0 and s.psi[-1] == 0


def test_packet_validation():
    with pytest.raises(PacketError):
        packet(sigma=1.5 * GRID.dx)
    with pytest.raises(PacketError):
        packet(x0=20e-9)


def test_sampled_x1_follows_density():
    rng = np.random.default_rng(5)
    s = packet()
    xs = sample_positions(GRID, s.psi, 20000, rng)
    assert stats.kstest(xs, density_cdf(GRID, s.psi)).statistic < 0.015
    seeded = init_gaussian_packet(GRID, 150e-9, 10e-9, 5e8, M, Q, seed=np.random.default_rng(1))
    again = init_gaussian_packet(GRID, 150e-9, 10e-9, 5e8, M, Q, seed=np.random.default_rng(1))
    assert seeded.X1 == again.X1


def test_norm_is_conserved_with_rough_potential():
    rng = np.random.default_rng(2)
    pot = ConditionalPotential(GRID, 0.2 * constants.e * rng.standard_normal(GRID.n_points))
    s = packet()
    for _ in range(3000):
        s = step_tdse(s, pot, 4e-17)
    assert abs(s.norm() - 1.0) < 1e-10


@settings(max_examples=20, deadline=None)
@given(amp=st.floats(0.0, 1.0), dt=st.floats(1e-18, 1e-15), kx=st.floats(0.0, 1e9))
def test_unitarity_property(amp, dt, kx):
    grid = Grid1D(0.0, 200e-9, 512)
    s = packet(x0=100e-9, grid=grid)
    v = amp * constants.e * np.cos(kx * grid.x)
    for _ in range(5):
        s = step_tdse(s, ConditionalPotential(grid, v), dt)
    assert s.norm() == pytest.approx(1.0, abs=1e-12)


def test_constant_potential_only_shifts_phase():
    s = packet()
    dt, c = 4e-17, 0.7 * constants.e
    free = step_tdse(s, zero(), dt)
    shifted = step_tdse(s, ConditionalPotential(GRID, np.full(GRID.n_points, c)), dt)
    assert np.allclose(shifted.psi, free.psi * np.exp(-1j * c * dt / HBAR), atol=1e-8)


def test_free_packet_moves_at_group_velocity_and_spreads():
    grid = Grid1D(0.0, 400e-9, 4096)
    s = packet(x0=100e-9, sigma=8e-9, k0=5e8, grid=grid)
    dt, n = 4e-17, 5000
    for _ in range(n):
        s = step_tdse(s, zero(grid), dt)
    t = n * dt
    v = (s.centroid() - 100e-9) / t
    assert v == pytest.approx(HBAR * 5e8 / M, rel=5e-3)
    exact = free_density(grid.x, t, 100e-9, 8e-9, 5e8)
    assert np.sum(np.abs(s.density() - exact)) * grid.dx < 5e-3


def test_plane_wave_velocity():
    k = 3e8
    psi = np.exp(1j * k * GRID.x)
    s = packet()
    s = replace(s, psi=psi, X1=200e-9)
    assert bohmian_velocity(s) == pytest.approx(HBAR * k / M, rel=1e-3)


def test_real_wave_function_has_zero_velocity():
    s = packet(k0=0.0)
    assert bohmian_velocity(s) == pytest.approx(0.0, abs=1e-9)


def test_bohmian_trajectory_follows_exact_free_solution():
    # X(t) = x_c(t) + (X0 - x0) sigma(t) / sigma0 for a free Gaussian
    grid = Grid1D(0.0, 400e-9, 4096)
    x0, sigma, k0 = 100e-9, 4e-9, 5e8
    s = packet(x0=x0, sigma=sigma, k0=k0, grid=grid)
    X0 = x0 + 1.3 * sigma
    s = replace(s, X1=X0)
    dt, n = 4e-17, 3000
    for _ in range(n):
        prev = s.psi
        s = step_tdse(s, zero(grid), dt)
        s = advance_trajectory(s, dt, previous_psi=prev)
    t = n * dt
    s_t = sigma * np.sqrt(1 + (HBAR * t / (2 * M * sigma ** 2)) ** 2)
    expected = x0 + HBAR * k0 / M * t + (X0 - x0) * s_t / sigma
    assert s.X1 == pytest.approx(expected, abs=2e-3 * (s_t))


def test_equivariance_of_trajectory_ensemble():
    grid = Grid1D(0.0, 300e-9, 2048)
    s = packet(x0=120e-9, sigma=4e-9, k0=2e8, grid=grid)
    rng = np.random.default_rng(9)
    X = sample_positions(grid, s.psi, 4000, rng)
    pot = ConditionalPotential(grid, 0.01 * constants.e * (grid.x / 300e-9))
    dt = 5e-17
    for _ in range(1500):
        prev = s.psi
        s = step_tdse(s, pot, dt)
        X = advance_positions(grid, prev, s.psi, M, X, dt)
    assert stats.kstest(X, density_cdf(grid, s.psi)).statistic < 0.05


def test_momentum_density_peaks_at_k0():
    k, p = momentum_density(packet(k0=5e8))
    assert p.sum() == pytest.approx(1.0)
    assert k[np.argmax(p)] == pytest.approx(5e8, rel=0.01)


def test_step_errors():
    s = packet()
    with pytest.raises(GridMismatchError):
        step_tdse(s, zero(Grid1D(0.0, 400e-9, 1024)), 1e-17)
    bad = np.zeros(GRID.n_points)
    bad[10] = np.nan
    with pytest.raises(NonFinitePotentialError):
        step_tdse(s, ConditionalPotential(GRID, bad), 1e-17)
    with pytest.raises(ValueError):
        step_tdse(s, zero(), 0.0)


def test_node_and_grid_errors():
    s = packet()
    with pytest.raises(NodeRegionError):
        bohmian_velocity(replace(s, X1=390e-9))
    with pytest.raises(TrajectoryOutOfGridError):
        bohmian_velocity(replace(s, X1=500e-9))
    with pytest.raises(TrajectoryOutOfGridError):
        advance_positions(GRID, s.psi, s.psi, M, np.array([150e-9]), 1e-9)


def test_packet_centre_velocity_and_galilean_boost():
    for k0 in (0.0, 5e8):
        s = packet(k0=k0)
        assert bohmian_velocity(s) == pytest.approx(HBAR * k0 / M, rel=5e-3, abs=1e-6)
    # the central difference carries the lattice dispersion sin(k dx)/dx, so
    # boosts are checked at k dx below about 0.08
    for base, dk in ((0.0, 4e8), (1e8, 3e8)):
        v0 = bohmian_velocity(packet(k0=base))
        v1 = bohmian_velocity(packet(k0=base + dk))
        assert v1 - v0 == pytest.approx(HBAR * dk / M, rel=5e-3)


def test_real_packet_has_zero_velocity_field():
    s = packet(k0=0.0)
    xs = np.linspace(120e-9, 180e-9, 50)
    assert np.all(velocity_field(GRID, s.psi, M, xs) == 0.0)


def test_plane_wave_trajectory_step():
    k, dt = 3e8, 4e-17
    s = replace(packet(), psi=np.exp(1j * k * GRID.x), X1=200e-9)
    moved = advance_trajectory(s, dt)
    assert moved.X1 - s.X1 == pytest.approx(HBAR * k / M * dt, rel=1e-3)
    still = advance_trajectory(packet(k0=0.0), dt)
    assert still.X1 == 150e-9


def test_boundary_packet_rejected():
    with pytest.raises(PacketError):
        packet(x0=GRID.x_min)


@settings(max_examples=25, deadline=None)
@given(x0=st.floats(100e-9, 300e-9), sigma=st.floats(2e-9, 15e-9), k0=st.floats(-1e9, 1e9))
def test_any_valid_packet_is_normalized(x0, sigma, k0):
    s = packet(x0=x0, sigma=sigma, k0=k0)
    assert s.norm() == pytest.approx(1.0, abs=1e-10)
