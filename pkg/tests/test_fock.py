import itertools
from math import comb

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lightcone.budget import BudgetError
from lightcone.fock import (FockError, annihilator, blockwise_annihilator, blockwise_field, bound_check_numbers,
                            build_fock_basis, ccr_residual, creator, dgamma_apply, dgamma_expectation,
                            dgamma_monotonicity, field_operator, fock_dimension, lift_fock, number_operator,
                            one_body_density, sector_band_width, second_quantize)
from lightcone.grid import build_photon_grid
from lightcone.oracle import TensorOracle


def rand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@given(st.integers(1, 6), st.integers(1, 4))
def test_dimension_matches_brute_force_count(M, n_max):
    brute = sum(1 for n in range(n_max + 1) for _ in itertools.combinations_with_replacement(range(M), n))
    assert fock_dimension(M, n_max) == brute == comb(M + n_max, n_max)
    assert build_fock_basis(M, n_max).dim == brute


def test_ordering_and_state_index():
    b = build_fock_basis(3, 2)
    assert b.states[0] == () and b.states[1:4] == [(0,), (1,), (2,)]
    assert b.state_index([1, 0, 1]) == b.states.index((0, 2))
    assert b.occupations(b.state_index([0, 2, 0])).tolist() == [0, 2, 0]
    assert list(b.sector_of[b.sector_slice(2)]) == [2] * 6
    m = b.manifest()
    assert m["dimension"] == 10 and m["n_max"] == 2


def test_n_max_zero_rejected():
    with pytest.raises(FockError, match="n_max"):
        build_fock_basis(4, 0)


def test_budget_env_var(monkeypatch):
    monkeypatch.setenv("LIGHTCONE_BUDGET_MB", "0.001")
    with pytest.raises(BudgetError, match="dimension"):
        build_fock_basis(20, 3)


@pytest.mark.parametrize("M,n_max", [(2, 4), (3, 3), (4, 2)])
def test_operators_match_tensor_oracle(M, n_max):
    rng = np.random.default_rng(M * 10 + n_max)
    b = build_fock_basis(M, n_max)
    o = TensorOracle(b)
    assert o.isometry_defect() < 1e-14
    f = rand(rng, M)
    t = rand(rng, M, M)
    t = t + t.conj().T
    assert np.abs(annihilator(b, f).dense() - o.annihilator(f)).max() < 1e-12
    assert np.abs(creator(b, f).dense() - o.creator(f)).max() < 1e-12
    assert np.abs(second_quantize(b, t).dense() - o.dgamma(t)).max() < 1e-12
    assert np.abs(field_operator(b, f).dense() - o.field(f)).max() < 1e-12


def test_annihilator_is_antilinear():
    b = build_fock_basis(3, 2)
    f = np.array([1.0, 2.0j, -1.0])
    assert np.allclose(annihilator(b, 1j * f).dense(), -1j * annihilator(b, f).dense())


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_ccr_below_top_sector(seed):
    rng = np.random.default_rng(seed)
    b = build_fock_basis(3, 3)
    assert ccr_residual(b, rand(rng, 3), rand(rng, 3), seed=seed) < 1e-12


def test_ccr_fails_on_top_sector():
    b = build_fock_basis(2, 2)
    f = np.array([1.0, 0.0])
    assert ccr_residual(b, f, f, sectors=[2]) > 0.5


def test_number_and_band_widths():
    b = build_fock_basis(3, 3)
    assert np.allclose(second_quantize(b, np.eye(3)).dense(), number_operator(b).dense())
    f = np.ones(3)
    assert sector_band_width(b, field_operator(b, f)) == 1
    assert sector_band_width(b, second_quantize(b, np.eye(3))) == 0
    phi = field_operator(b, f).matrix
    assert sector_band_width(b, phi @ phi) == 2


def test_second_quantize_rejects_non_hermitian():
    b = build_fock_basis(2, 2)
    with pytest.raises(FockError):
        second_quantize(b, np.array([[0, 1], [0, 0]]))
    with pytest.raises(FockError):
        annihilator(b, np.ones(3))


def test_number_bounds_hold_with_exact_top_sector_value():
    b = build_fock_basis(3, 3)
    f = np.array([1.0, 0.5j, -0.25])
    reps = bound_check_numbers(b, f)
    # a(f) maps the top sector down with norm sqrt(n/(n+1)) ||f||
    assert reps[0].measured == pytest.approx(np.sqrt(3 / 4) * np.linalg.norm(f), rel=1e-10)
    assert all(r.measured <= r.bound for r in reps)


def test_dgamma_monotonicity_for_ordered_operators():
    rng = np.random.default_rng(4)
    b = build_fock_basis(3, 3)
    a = np.diag([0.1, 0.5, 1.0])
    c = np.diag([0.2, 0.9, 1.5])
    for lo, hi in dgamma_monotonicity(b, a, c, [np.abs(rand(rng, b.dim)) for _ in range(5)]):
        assert lo <= hi + 1e-12


def test_matrix_free_dgamma_against_assembled():
    rng = np.random.default_rng(5)
    b = build_fock_basis(build_photon_grid(1, 4, 0.5), 3)
    t = rand(rng, 4, 4)
    t = t + t.conj().T
    n_x = 3
    psi = rand(rng, n_x * b.dim)
    full = lift_fock(b, second_quantize(b, t), n_x)
    assert np.allclose(dgamma_apply(b, t, psi, n_x), full @ psi, atol=1e-12)
    exact = np.vdot(psi, full @ psi).real
    assert dgamma_expectation(b, t, psi, n_x) == pytest.approx(exact, rel=1e-12)
    rho = one_body_density(b, psi, n_x)
    assert np.allclose(rho, rho.conj().T)
    assert np.trace(rho).real == pytest.approx(np.vdot(psi, lift_fock(b, number_operator(b), n_x) @ psi).real)


def test_blockwise_field_is_site_diagonal():
    rng = np.random.default_rng(6)
    b = build_fock_basis(2, 2)
    G = rand(rng, 3, 2)
    A = blockwise_annihilator(b, G)
    for x in range(3):
        blk = A[x * b.dim:(x + 1) * b.dim, x * b.dim:(x + 1) * b.dim].toarray()
        assert np.allclose(blk, annihilator(b, G[x]).dense())
    Phi = blockwise_field(b, G)
    assert abs(Phi - Phi.conj().T).max() < 1e-14
    off = Phi.toarray()
    off[: b.dim, : b.dim] = 0
    off[b.dim:2 * b.dim, b.dim:2 * b.dim] = 0
    off[2 * b.dim:, 2 * b.dim:] = 0
    assert np.abs(off).max() == 0
    assert isinstance(A, sp.spmatrix) or sp.issparse(A)
