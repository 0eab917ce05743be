"""Acceptance suite: one test per criterion, at the stated tolerances.

Each test prints the measured numbers so ``pytest -v -s`` doubles as a report.
"""

import filecmp
import time

import numpy as np
import pytest
import scipy.sparse as sp

from lightcone.calculus import commutator_decomposition_residual, dilation_commutator_norm, eig_apply, hs_apply
from lightcone.config import preset
from lightcone.evolve import dense_expm_apply, krylov_step, propagate
from lightcone.fock import (annihilator, bound_check_field_energy, bound_check_numbers, build_fock_basis,
                            ccr_residual, creator, field_operator, second_quantize)
from lightcone.grid import build_photon_grid, position_operator
from lightcone.model import ModelSpec, assemble_transformed, build_system, transform_report
from lightcone.oracle import TensorOracle
from lightcone.pipeline import cmd_run
from lightcone.probe import cone_time_limit, weighted_interaction_decay
from lightcone.symbols import bracket_symbol


def _rand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture(scope="module")
def free_run(tmp_path_factory):
    return cmd_run(preset("free"), tmp_path_factory.mktemp("free"))


@pytest.fixture(scope="module")
def interacting_run(tmp_path_factory):
    return cmd_run(preset("interacting"), tmp_path_factory.mktemp("interacting"))


def test_criterion_1_algebraic_core():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_ccr, worst_oracle = 0.0, 0.0
    for M, n_max in [(4, 3), (3, 4), (6, 2)]:
        basis = build_fock_basis(build_photon_grid(1, M, 0.5) if M % 2 == 0 else M, n_max)
        oracle = TensorOracle(basis)
        assert basis.dim <= 100 and oracle.tdim <= 1000
        f, g = _rand(rng, M), _rand(rng, M)
        t = _rand(rng, M, M)
        t = t + t.conj().T
        worst_ccr = max(worst_ccr, ccr_residual(basis, f, g, sectors=range(n_max)))
        for mine, ref in [(annihilator(basis, f).dense(), oracle.annihilator(f)),
                          (creator(basis, f).dense(), oracle.creator(f)),
                          (second_quantize(basis, t).dense(), oracle.dgamma(t)),
                          (field_operator(basis, f).dense(), oracle.field(f))]:
            worst_oracle = max(worst_oracle, float(np.abs(mine - ref).max()))
        omega = np.linspace(0.3, 2.0, M)
        # both raise on any violation
        bound_check_numbers(basis, f)
        bound_check_field_energy(basis, f, omega)
    elapsed = time.perf_counter() - start
    print(f"\n[1] ccr={worst_ccr:.2e} oracle={worst_oracle:.2e} runtime={elapsed:.1f}s")
    assert worst_ccr < 1e-12
    assert worst_oracle < 1e-12
    assert elapsed < 30


def test_criterion_2_pauli_fierz_consistency():
    start = time.perf_counter()
    grid = build_photon_grid(1, 4, 0.5)
    reports = []
    for n_max in (3, 4, 5):
        spec = ModelSpec(grid, n_x=9, dx=0.5, V0=3.0, sigma=1.0, coupling_scale=0.1, n_max=n_max)
        reports.append(transform_report(build_system(spec), n_eigs=5))
    elapsed = time.perf_counter() - start
    leaks = [r.leak for r in reports]
    print(f"\n[2] unitarity={[f'{r.unitarity:.1e}' for r in reports]} leaks={[f'{x:.4g}' for x in leaks]} "
          f"eig_gaps={[f'{r.eig_gap:.3g}' for r in reports]} runtime={elapsed:.1f}s")
    assert all(r.unitarity < 1e-12 for r in reports)
    assert all(r.eig_gap <= r.leak for r in reports)
    assert elapsed < 300
    assert all(b < a for a, b in zip(leaks, leaks[1:])), f"leak does not decrease with n_max: {leaks}"


def test_criterion_3_propagation_sanity():
    grid = build_photon_grid(1, 8, 0.5)
    spec = ModelSpec(grid, n_x=21, dx=0.5, V0=3.0, sigma=1.0, coupling_scale=0.5, n_max=1)
    system = build_system(spec)
    H = assemble_transformed(system)
    assert H.dim <= 200
    rng = np.random.default_rng(3)
    psi = _rand(rng, H.dim)
    psi /= np.linalg.norm(psi)
    agree = max(float(np.linalg.norm(krylov_step(H, psi, t, 1e-12) - dense_expm_apply(H, psi, t)))
                for t in (0.5, 3.0, -2.0))
    tr = propagate(H, psi, np.linspace(0.0, 64.0, 257), tol=1e-10, keep_every=None)
    print(f"\n[3] krylov-vs-dense={agree:.2e} norm_drift={tr.norm_drift:.2e} energy_drift={tr.energy_drift:.2e}")
    assert agree < 1e-9
    assert tr.norm_drift < 1e-9
    assert tr.energy_drift < 1e-8


def test_criterion_4_lightcone_decay(free_run, interacting_run):
    free = free_run.fits["decay"][0]
    inter = interacting_run.fits["decay"][0]
    print(f"\n[4] free c={free['c']}: slope={free['slope']:.4f} vs -2*gamma_cap={-2 * free['gamma_cap']:.2f}; "
          f"interacting c={inter['c']} gamma={inter['gamma']}: Theil-Sen={inter['theil_sen_slope']:.4f} <= 0.02")
    assert free["c"] == 1.5 and free["gamma_cap"] == pytest.approx(0.1)
    assert free["slope"] <= -2 * free["gamma_cap"]
    assert inter["gamma"] > 0
    assert inter["theil_sen_slope"] <= 0.02


def test_criterion_5_small_momentum_growth(free_run, interacting_run):
    growth = {g["delta"]: g for g in interacting_run.fits["growth"]}
    zero = {g["delta"]: g for g in free_run.fits["growth"]}[0.0]
    print("\n[5] " + ", ".join(f"delta={d}: slope={growth[d]['slope']:.4f} <= {2 * (1 + d) / 5 + 0.1:.3f}"
                               for d in (0.5, 0.9)) + f"; delta=0 free slope={zero['slope']:.2e}")
    for d in (0.5, 0.9):
        assert growth[d]["slope"] <= 2 * (1 + d) / 5 + 0.1
    assert abs(zero["slope"]) <= 0.01


def test_criterion_6_commutator_scaling():
    grid = build_photon_grid(1, 256, 1 / 16)
    G = bracket_symbol(-0.5)
    slack = 0.3
    lines, ok = [], True
    for delta in (0.5, 0.9):
        r52 = (commutator_decomposition_residual(grid, G, 8.0, delta, 1.0).residual_norm
               / commutator_decomposition_residual(grid, G, 4.0, delta, 1.0).residual_norm)
        r51 = dilation_commutator_norm(grid, G, 8.0, delta, 1.0) / dilation_commutator_norm(grid, G, 4.0, delta, 1.0)
        b52, b51 = 2 ** (-delta + slack), 2 ** (-(1 - delta) + slack)
        lines.append(f"delta={delta}: decomposition {r52:.3f}<={b52:.3f}, dilation {r51:.3f}<={b51:.3f}")
        ok &= r52 <= b52 and r51 <= b51
    small = build_photon_grid(1, 8, 0.5)
    A = position_operator(small)
    hs = float(np.abs(hs_apply(A, G).dense() - eig_apply(A, G)).max())
    print("\n[6] " + "; ".join(lines) + f"; hs-vs-eig={hs:.1e}")
    assert hs < 1e-6
    assert ok, "; ".join(lines)


def test_criterion_7_weighted_interaction_decay():
    grid = build_photon_grid(3, 16, 0.5, "vector3d")
    spec = ModelSpec(grid, n_x=7, dx=0.5, coupling_scale=1.0, n_max=1)
    system = build_system(spec)
    c = 1.0
    times = np.geomspace(1.0, cone_time_limit(grid, c), 8)
    q = weighted_interaction_decay(system, "q", 0.4, c, times)
    g = weighted_interaction_decay(system, "g_tilde", 0.6, c, times, beta=0.2)
    print(f"\n[7] q d=0.4: slope={q.slope:.3f}; g_tilde d=0.6 beta=0.2: slope={g.slope:.3f}; tolerance 0.15")
    assert abs(q.slope + 0.4) <= 0.15 and abs(g.slope + 0.6) <= 0.15, (q.slope, g.slope)


def test_criterion_8_exponential_decay_below_threshold(interacting_run):
    from lightcone.io import read_json

    rep = read_json(interacting_run.out / "sigma_hat.json")
    dec = rep["decay"]
    print(f"\n[8] sigma_hat={dec['sigma_hat']:.4f} chi_top={dec['chi_top']:.4f} delta={dec['delta']} "
          f"ratio={dec['weighted_norm_ratio']:.4f} tail_slope={dec['tail_slope']:.4f}")
    assert dec["delta"] ** 2 + dec["chi_top"] < dec["sigma_hat"]
    assert np.isfinite(dec["weighted_norm_ratio"])
    assert dec["tail_slope"] < 0


def test_criterion_9_reproducibility(tmp_path):
    cfg = preset("interacting").with_(io={"thin": 16})
    a = cmd_run(cfg, tmp_path / "a")
    b = cmd_run(cfg, tmp_path / "b")
    assert a.files == b.files
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", a.files + ["manifest.json"],
                                               shallow=False)
    print(f"\n[9] {len(match)} files byte-identical, config hash {cfg.hash[:12]}")
    assert not mismatch and not errors
