import numpy as np
import pytest

from lightcone.grid import build_photon_grid
from lightcone.model import (FROZEN_CONSTANTS, ModelError, ModelSpec, WindowProfile, assemble_hamiltonian,
                             assemble_transformed, build_couplings, build_system, check_coupling_estimates,
                             estimate_ionization_threshold, exponential_decay_report, pauli_fierz_unitary,
                             particle_momentum, spectral_filter, transform_report)


@pytest.fixture(scope="module")
def grid():
    return build_photon_grid(1, 8, 0.5)


@pytest.fixture(scope="module")
def system(grid):
    return build_system(ModelSpec(grid, n_x=9, dx=0.5, V0=3.0, sigma=1.0, coupling_scale=0.5, n_max=2))


def test_spec_validation(grid):
    for kw in ({"n_x": 8}, {"n_x": 1}, {"dx": 0.0}, {"mu": 0.5}, {"n_max": 0}, {"V0": -1.0}, {"K": -1.0}):
        with pytest.raises(ModelError):
            ModelSpec(grid, **kw)
    with pytest.raises(ModelError):
        ModelSpec(build_photon_grid(3, 4, 0.5, "vector3d"), direction=(0, 0, 0))


def test_particle_momentum_is_hermitian_derivative():
    p = particle_momentum(15, 0.4)
    assert np.allclose(p, p.conj().T)
    x = (np.arange(15) - 7) * 0.4
    # lowest Fourier mode is differentiated exactly
    f = np.exp(2j * np.pi * x / (15 * 0.4))
    assert np.allclose(p @ f, (2 * np.pi / (15 * 0.4)) * f)


def test_hamiltonians_hermitian_and_unitary_transform(system):
    H = assemble_hamiltonian(system)
    Ht = assemble_transformed(system)
    assert H.hermiticity_residual() < 1e-13 and Ht.hermiticity_residual() < 1e-13
    U = pauli_fierz_unitary(system).toarray()
    assert np.abs(U @ U.conj().T - np.eye(system.dim)).max() < 1e-12


def test_q_derivative_matches_finite_difference(grid):
    h = 1e-5
    cs = build_couplings(ModelSpec(grid, n_x=3, dx=h, coupling_scale=1.0), check=False)
    fd = (cs.q[2] - cs.q[0]) / (2 * h)
    assert np.allclose(cs.dq[1], fd, rtol=1e-6, atol=1e-9)
    assert np.allclose(cs.g_tilde, cs.g - cs.dq)


def test_transformed_field_part_converges_on_a_fixed_window():
    small = build_photon_grid(1, 4, 0.5)
    reps = [transform_report(build_system(ModelSpec(small, n_x=9, dx=0.5, V0=3.0, coupling_scale=0.1, n_max=n)),
                             n_eigs=3, below=1) for n in (3, 4, 5)]
    assert all(r.unitarity < 1e-12 for r in reps)
    assert all(r.eig_gap <= r.leak for r in reps)
    fields = [r.leak_field for r in reps]
    assert fields[0] < 1e-4 and fields[1] < fields[0] / 10 and fields[2] < fields[1] / 10


def test_coupling_constants_within_frozen_values(system):
    c = system.couplings.constants
    assert all(0 < c[k] <= FROZEN_CONSTANTS[k] for k in FROZEN_CONSTANTS)
    with pytest.raises(ModelError, match="coupling estimate for q violated"):
        check_coupling_estimates(system.spec, system.couplings, {"q": 1e-6, "g_tilde": 1e3, "e": 1e3})


def test_threshold_of_free_particle_is_zero(grid):
    sysm = build_system(ModelSpec(grid, n_x=11, dx=0.5, n_max=1))
    rep = estimate_ionization_threshold(sysm, [0.5, 1.0, 1.5])
    assert rep.ground_energy == pytest.approx(0.0, abs=1e-10)
    assert rep.sigma_hat >= -1e-10
    assert rep.monotone


def test_deep_well_binds_below_threshold(system):
    rep = estimate_ionization_threshold(system, [0.5, 1.0, 1.5])
    assert rep.monotone
    assert rep.ground_energy < 0 < rep.margin
    with pytest.raises(ModelError):
        estimate_ionization_threshold(system, [5.0])


def test_window_profile_shape():
    w = WindowProfile(lo=-1.0, hi=0.0, ramp=0.5)
    E = np.array([-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0])
    v = w(E)
    assert v[0] == 0 and v[1] == 0 and v[-2] == 0 and v[-1] == 0
    assert np.all(v[2:5] == 1.0)
    assert w.support_top == 0.5 and w.support_bottom == -1.5
    assert np.all((w(np.linspace(-2, 1, 301)) >= 0) & (w(np.linspace(-2, 1, 301)) <= 1))


def test_filter_rejects_support_above_threshold(system):
    H = assemble_transformed(system)
    with pytest.raises(ModelError, match="not below threshold"):
        spectral_filter(H, WindowProfile(-5, 0.0, 0.5), sigma_hat=0.4)


def test_chebyshev_filter_matches_eig_and_report(system):
    H = assemble_transformed(system)
    chi = WindowProfile(-6.0, -1.5, 0.5)
    exact = spectral_filter(H, chi, sigma_hat=10.0, method="eig")
    cheb = spectral_filter(H, chi, sigma_hat=10.0, method="chebyshev", degree=400)
    rng = np.random.default_rng(0)
    psi = rng.standard_normal(H.dim) + 0j
    a, b = exact.apply(psi), cheb.apply(psi)
    assert np.linalg.norm(exact.operator.dense(), 2) <= chi.scale + 1e-12
    assert np.linalg.norm(a - b) < 1e-4 * np.linalg.norm(psi)
    with pytest.raises(ModelError):
        spectral_filter(H, chi, sigma_hat=10.0, method="lanczos")
    rep = exponential_decay_report(system, a, delta=0.5, sigma_hat=10.0, chi_top=chi.support_top)
    assert rep.weighted_norm_ratio >= 1.0
    assert rep.admissible
