import numpy as np
import pytest

from lightcone.calculus import (ConvergenceError, commutator_decomposition_residual, dilation_commutator_norm,
                                eig_apply, hs_apply)
from lightcone.grid import GridError, build_photon_grid, position_operator
from lightcone.symbols import bracket_symbol, generic_symbol


@pytest.fixture(scope="module")
def small():
    return build_photon_grid(1, 8, 0.5)


@pytest.mark.parametrize("rho", [-0.5, -1.0, -2.0])
def test_hs_matches_eigendecomposition(small, rho):
    A = position_operator(small)
    G = bracket_symbol(rho)
    assert np.abs(hs_apply(A, G).dense() - eig_apply(A, G)).max() < 1e-6


def test_hs_on_diagonal_matches_closed_form():
    A = np.diag([-3.0, -0.5, 0.0, 1.0, 4.0]).astype(complex)
    out = hs_apply(A, bracket_symbol(-1.0)).dense()
    assert np.allclose(np.diag(out), (1 + np.diag(A).real ** 2) ** -0.5, atol=1e-6)


def test_hs_input_checks(small):
    A = position_operator(small)
    with pytest.raises(ValueError):
        hs_apply(A + np.triu(np.ones_like(A), 1), bracket_symbol(-0.5))
    with pytest.raises(ValueError):
        hs_apply(A, bracket_symbol(0.5))


def test_hs_convergence_guard():
    A = np.diag([-2.0, 0.5, 3.0]).astype(complex)
    hs_apply(A, bracket_symbol(-0.5), tol=1e-5)
    with pytest.raises(ConvergenceError):
        hs_apply(A, bracket_symbol(-0.5), quadrature_depth=0, tol=1e-14)


def test_commutator_routes_agree_for_linear_symbol():
    g = build_photon_grid(1, 32, 0.25)
    G = generic_symbol("s", rho=1)
    r = commutator_decomposition_residual(g, G, 1.0, 0.5, 1.0, check_region=False)
    assert abs(r.residual_norm - r.residual_norm_position_route) < 1e-10 * max(1.0, r.residual_norm)


def test_commutator_region_enforced(small):
    with pytest.raises(GridError):
        commutator_decomposition_residual(small, bracket_symbol(0.5), 1.0, 0.2, 1.0)
    with pytest.raises(GridError):
        dilation_commutator_norm(small, bracket_symbol(-0.5), 1.0, 1.5, 1.0)


def test_dilation_commutator_grows_like_t_to_one_minus_delta():
    # companion to the acceptance check: the expected growth exponent, within a factor 2^0.3
    g = build_photon_grid(1, 256, 1 / 16)
    G = bracket_symbol(-0.5)
    for delta in (0.5, 0.9):
        ratio = dilation_commutator_norm(g, G, 8.0, delta, 1.0) / dilation_commutator_norm(g, G, 4.0, delta, 1.0)
        assert ratio <= 2 ** ((1 - delta) + 0.3)


def test_decomposition_residual_decays_and_routes_agree():
    g = build_photon_grid(1, 128, 1 / 8)
    G = bracket_symbol(-0.5)
    r4 = commutator_decomposition_residual(g, G, 4.0, 0.9, 1.0)
    r8 = commutator_decomposition_residual(g, G, 8.0, 0.9, 1.0)
    assert r8.residual_norm / r4.residual_norm <= 2 ** (-0.9 + 0.3)
    assert abs(r4.residual_norm - r4.residual_norm_position_route) < 1e-10
    assert r4.leading.hermiticity_residual() < 1e-12
