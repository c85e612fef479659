"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The ensemble criteria (6 and 7) share one desk-scale run of 2000
experiments with 250 probe electrons and 500 steps each.
"""

from dataclasses import replace

import numpy as np
import pytest
from scipy import constants, stats

from thznoise.cli import cmd_ensemble, cmd_single, sha256
from thznoise.electrostatics import (
    SurfaceGeometry,
    flux_exact,
    flux_linearized,
    flux_numeric,
    flux_offaxis,
)
from thznoise.ensemble import ExperimentConfig, frozen, run_experiment
from thznoise.measurement import gaussian_weak_operator
from thznoise.probe import (
    ProbeConfig,
    ProbeState,
    conditional_potential_on_grid,
    conservative_forces,
    init_probe,
    step_probe,
    total_energy,
)
from thznoise.quantum import (
    HBAR,
    ConditionalPotential,
    Grid1D,
    advance_positions,
    bohmian_velocity,
    density_cdf,
    init_gaussian_packet,
    momentum_density,
    sample_positions,
    step_tdse,
)

Q = -constants.e
M = constants.m_e

ENSEMBLE_CFG = ExperimentConfig(probe=ProbeConfig(n_electrons=250), total_time=2e-14,
                                n_experiments=2000)


def test_criterion_01_flux_chain(record_criterion):
    geom = SurfaceGeometry(x_A=450e-9, L_y=40e-6, L_z=40e-6)
    xi2 = np.concatenate([np.geomspace(1e-5, 1e-3, 20), np.linspace(1e-3, 0.0099, 30)])
    X = geom.x_A - np.sqrt(xi2 * geom.area / 2)
    exact = flux_exact(X, geom, Q)
    lin_err = np.max(np.abs(flux_linearized(X, geom, Q) - exact) / np.abs(exact))
    quad_geoms = [geom, SurfaceGeometry(x_A=0.0, L_y=50e-9, L_z=50e-9)]
    quad_err = 0.0
    for g in quad_geoms:
        for x2 in (1e-5, 1e-3, 0.005, 0.0099):
            Xq = g.x_A - np.sqrt(x2 * g.area / 2)
            e = flux_exact(Xq, g, Q)
            quad_err = max(quad_err, abs(flux_numeric([Xq, 0, 0], g, Q, n_quad=512) - e) / abs(e))
    ok = lin_err < 2e-3 and quad_err < 1e-6
    record_criterion(1, ok, f"flux chain: linearized rel err {lin_err:.3e} (< 2e-3), "
                            f"quadrature rel err {quad_err:.3e} (< 1e-6)")
    assert ok


def test_criterion_02_half_flux_limit(record_criterion):
    geom = SurfaceGeometry(x_A=0.0, L_y=1e-6, L_z=1e-6)
    limit = Q / (2 * geom.epsilon)
    chis = np.geomspace(1e-9, 1e-12, 4) * np.sqrt(geom.area)
    errs = np.abs(flux_exact(-chis, geom, Q) - limit) / abs(limit)
    ok = errs[-1] < 1e-8 and np.all(np.diff(errs) < 0)
    record_criterion(2, ok, f"half-flux limit: rel err {errs[-1]:.3e} at chi = 1e-12 sqrt(S) "
                            f"(< 1e-8), monotone approach")
    assert ok


def test_criterion_03_quantum_solver(record_criterion):
    # norm drift with a realistic probe potential over 1e4 steps
    cfg = ExperimentConfig()
    grid = cfg.quantum.grid
    state = init_gaussian_packet(grid, 150e-9, 10e-9, 5e8, M, Q, deterministic=True)
    pot = conditional_potential_on_grid(init_probe(cfg.probe, 1), grid, cfg.probe)
    for _ in range(10_000):
        state = step_tdse(state, pot, cfg.dt)
    drift = abs(state.norm() - 1.0)

    # free packet centroid velocity
    free = init_gaussian_packet(grid, 100e-9, 10e-9, 5e8, M, Q, deterministic=True)
    zero = ConditionalPotential(grid, np.zeros(grid.n_points))
    n = 4000
    for _ in range(n):
        free = step_tdse(free, zero, cfg.dt)
    v = (free.centroid() - 100e-9) / (n * cfg.dt)
    v_err = abs(v / (HBAR * 5e8 / M) - 1)

    # equivariance of 1e4 trajectories in a tilted potential
    g2 = Grid1D(0.0, 300e-9, 2048)
    s = init_gaussian_packet(g2, 120e-9, 4e-9, 2e8, M, Q, deterministic=True)
    X = sample_positions(g2, s.psi, 10_000, np.random.default_rng(17))
    tilt = ConditionalPotential(g2, 0.01 * constants.e * g2.x / 300e-9)
    for _ in range(1500):
        prev = s.psi
        s = step_tdse(s, tilt, 5e-17)
        X = advance_positions(g2, prev, s.psi, M, X, 5e-17)
    ks = stats.kstest(X, density_cdf(g2, s.psi)).statistic

    ok = drift < 1e-8 and v_err < 5e-3 and ks < 0.05
    record_criterion(3, ok, f"quantum solver: norm drift {drift:.2e} (< 1e-8), centroid "
                            f"velocity err {v_err:.2e} (< 5e-3), KS {ks:.4f} (< 0.05)")
    assert ok


def _total_flux(X1, positions, geom, q_sys, q_probe):
    return flux_exact(X1, geom, q_sys) + sum(flux_offaxis(p, geom, q_probe) for p in positions)


def test_criterion_04_current_identity(record_criterion):
    cfg = ExperimentConfig(total_time=1000 * 4e-17)
    trace, states = run_experiment(cfg, 0, return_states=True)
    geom = cfg.surface
    h = 1e-3 * cfg.dt
    fd = np.empty(len(states))
    for i, (state, probe) in enumerate(states):
        v1 = bohmian_velocity(state)
        plus = _total_flux(state.X1 + v1 * h, probe.positions + probe.velocities * h, geom,
                           cfg.quantum.charge, cfg.probe.charge)
        minus = _total_flux(state.X1 - v1 * h, probe.positions - probe.velocities * h, geom,
                            cfg.quantum.charge, cfg.probe.charge)
        fd[i] = geom.epsilon * (plus - minus) / (2 * h)
    err = np.abs(trace.i_total - fd)
    rel = err / np.abs(fd)
    worst = float(np.max(rel))
    ok = len(states) == 1000 and worst < 1e-2
    record_criterion(4, ok, f"current identity: max pointwise rel err {worst:.3e} (< 1e-2) over "
                            f"{len(states)} recorded steps, median {np.median(rel):.2e}")
    assert ok


def test_criterion_05_trace_structure(record_criterion):
    cfg = ExperimentConfig()
    coupled = run_experiment(cfg, 0)
    ratio = float(np.std(coupled.i_total) / np.std(coupled.i_system))
    still = run_experiment(frozen(cfg), 0)
    same = bool(np.array_equal(still.i_total, still.i_system))
    ok = ratio > 5 and same
    record_criterion(5, ok, f"trace structure: std(i_total)/std(i_system) = {ratio:.3e} (> 5), "
                            f"frozen traces identical: {same}")
    assert ok


@pytest.fixture(scope="module")
def ensemble_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_ensemble")
    _, result = cmd_ensemble(ENSEMBLE_CFG, out, with_frozen_reference=False)
    return result, out


@pytest.mark.slow
def test_criterion_06_weak_mean(record_criterion, ensemble_run):
    result, _ = ensemble_run
    # failed experiments are reported and excluded from the statistics
    n = result.n_experiments + result.n_failed
    diff = abs(result.mean_measured - result.mean_system_only)
    bound = 3 * result.sample_sigma / np.sqrt(2000)
    ok = n == 2000 and diff < bound
    record_criterion(6, ok, f"weak mean: |mean_measured - mean_system| = {diff:.3e} A, "
                            f"bound 3 sigma/sqrt(N) = {bound:.3e} A, N = {n}, "
                            f"failed = {result.n_failed}")
    assert ok


@pytest.mark.slow
def test_criterion_07_frequency_sweep(record_criterion, ensemble_run):
    result, out = ensemble_run
    freqs = sorted(result.sigma_w, reverse=True)
    sig = [result.sigma_w[f] for f in freqs]
    strict = result.sigma_w[5e13] < result.sigma_w[5e14]
    monotone = all(b <= a for a, b in zip(sig, sig[1:]))
    ok = strict and monotone and len(freqs) >= 4 and result.n_experiments >= 500
    sweep = ", ".join(f"{f * 1e-12:g} THz: {s:.3e}" for f, s in zip(freqs, sig))
    record_criterion(7, ok, f"frequency sweep: sigma_w {sweep} A")
    assert (out / "sigma_w.csv").exists() and (out / "fig5.svg").exists()
    assert ok


def test_criterion_08_weak_operator_limits(record_criterion):
    grid = Grid1D(0.0, 400e-9, 2048)
    s = init_gaussian_packet(grid, 150e-9, 10e-9, 5e8, M, Q, deterministic=True)
    sigma_p = HBAR / (2 * 10e-9)
    wide = gaussian_weak_operator(s, HBAR * 5e8, 1e6 * sigma_p)
    l2 = float(np.sqrt(np.sum(np.abs(wide.state.psi - s.psi) ** 2) * grid.dx))

    k = grid.k
    p_w = HBAR * k[np.argmin(np.abs(k - 5.1e8))]
    dp = HBAR * abs(k[1] - k[0])
    narrow = gaussian_weak_operator(s, p_w, 0.05 * dp)
    kk, prob = momentum_density(narrow.state)
    mass_at_pw = float(prob[np.argmin(np.abs(HBAR * kk - p_w))])

    worst = 0.0
    for ratio in (0.3, 1.0, 3.0):
        out = gaussian_weak_operator(s, HBAR * 5e8, ratio * sigma_p)
        kk, prob = momentum_density(out.state)
        mean = np.sum(HBAR * kk * prob)
        spread = np.sqrt(np.sum((HBAR * kk - mean) ** 2 * prob))
        expected = 1 / np.sqrt(1 / sigma_p ** 2 + 2 / (ratio * sigma_p) ** 2)
        worst = max(worst, abs(spread / expected - 1))
    ok = l2 < 1e-6 and mass_at_pw > 1 - 1e-6 and worst < 1e-2
    record_criterion(8, ok, f"weak operator: wide-window L2 {l2:.2e} (< 1e-6), narrow-window "
                            f"mass at p_w {mass_at_pw:.8f}, product rule err {worst:.2e} (< 1e-2)")
    assert ok


def test_criterion_09_probe_physics(record_criterion):
    cfg = ProbeConfig(gamma=0.0)
    probe = init_probe(cfg, 3)
    X1 = 150e-9
    e0 = total_energy(probe, X1, Q, cfg)
    drift = 0.0
    for _ in range(1000):
        probe = step_probe(probe, X1, cfg, walls=False)
        drift = max(drift, abs(total_energy(probe, X1, Q, cfg) - e0) / abs(e0))

    single = ProbeConfig(n_electrons=1, background=False, slab_width=1e-3, slab_area=1e-6)
    lo, hi = single.box
    v0 = np.array([[2e5, -1e5, 5e4]])
    p = ProbeState((0.5 * (lo + hi))[None, :], v0.copy())
    decay = 0.0
    for _ in range(1000):
        p = step_probe(p, 0.0, single, system_charge=0.0)
        exact = v0 * np.exp(-single.gamma * p.t / single.mass)
        decay = max(decay, float(np.max(np.abs(p.velocities - exact) / np.abs(exact))))

    pair_cfg = ProbeConfig(n_electrons=2, background=False)
    pair = conservative_forces(init_probe(pair_cfg, 5), 0.0, 0.0, pair_cfg)
    newton = bool(np.array_equal(pair[0], -pair[1]))
    ok = drift < 5e-3 and decay < 1e-2 and newton
    record_criterion(9, ok, f"probe physics: energy drift {drift:.2e} (< 5e-3), damped decay err "
                            f"{decay:.2e} (< 1e-2), pair forces exactly opposite: {newton}")
    assert ok


def test_criterion_10_determinism(record_criterion, tmp_path):
    cfg = ExperimentConfig(probe=ProbeConfig(n_electrons=100), total_time=1e-14,
                           n_experiments=8, frequencies=(5e14, 2.5e14, 1e14))
    runs = {}
    for name, threads in (("a", 1), ("b", 1), ("c", 2)):
        out = tmp_path / name
        cmd_ensemble(replace(cfg, threads=threads), out)
        cmd_single(cfg, out / "single")
        runs[name] = [sha256(out / f) for f in ("histogram.csv", "sigma_w.csv", "means.csv",
                                                "single/current_trace.csv")]
    ok = runs["a"] == runs["b"] == runs["c"]
    record_criterion(10, ok, "determinism: CSV digests identical across reruns and thread "
                             f"counts 1 and 2: {ok}")
    assert ok
