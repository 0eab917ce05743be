import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from lightcone.symbols import (J_beta, J_beta_symbol, bracket_symbol, bump, cutoff_F, generic_symbol,
                               inverse_power_symbol, lightcone_symbol, lowpass_h, plateau_m,
                               symbol_class_constants, transform_phi)


def raw_bump(t):
    return np.exp(-1.0 / ((t - 1.0) * (2.0 - t))) if 1.0 < t < 2.0 else 0.0


MASS = quad(raw_bump, 1.0, 2.0, epsabs=1e-14, epsrel=1e-14)[0]


def test_bump_support_and_unit_mass():
    assert bump(np.array([0.5, 1.0, 2.0, 2.5])).tolist() == [0.0, 0.0, 0.0, 0.0]
    total = quad(lambda t: float(bump(np.array(t))), 1.0, 2.0, epsabs=1e-13)[0]
    assert total == pytest.approx(1.0, abs=1e-10)


@given(st.floats(1.0, 2.0))
def test_cutoff_matches_adaptive_quadrature(s):
    ref = quad(raw_bump, 1.0, s, epsabs=1e-14, epsrel=1e-12)[0] / MASS
    assert float(cutoff_F(np.array(s))) == pytest.approx(ref, abs=1e-10)


def test_cutoff_plateaus_and_monotone():
    s = np.linspace(-1, 4, 2001)
    F = cutoff_F(s)
    assert np.all(F[s <= 1] == 0) and np.all(F[s >= 2] == 1)
    assert np.all(np.diff(F) >= -1e-15)
    assert np.allclose(lowpass_h(s), 1 - F)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_bump_derivatives_match_finite_differences(n):
    s = np.linspace(1.1, 1.9, 41)
    h = 1e-5
    fd = (bump(s + h, n - 1) - bump(s - h, n - 1)) / (2 * h)
    assert np.allclose(bump(s, n), fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


def test_plateau_and_transform_profile():
    r = np.linspace(-1.5, 1.5, 3001)
    m = plateau_m(r)
    assert np.all(m >= 0)
    assert np.allclose(m[np.abs(r) <= 0.5], 1.0)
    assert np.all(m[np.abs(r) >= 1.0] == 0)
    phi = transform_phi(r)
    assert np.allclose(phi[np.abs(r) <= 0.5], r[np.abs(r) <= 0.5])
    assert np.allclose(np.abs(phi[np.abs(r) >= 1.0]), 1.0)
    assert np.all(np.diff(phi) >= -1e-14)
    # phi' = m, against a centred difference of phi itself
    h = 1e-6
    mid = np.linspace(0.55, 0.95, 21)
    assert np.allclose((transform_phi(mid + h) - transform_phi(mid - h)) / (2 * h), plateau_m(mid), atol=1e-7)


@given(st.floats(1.0, 9.0), st.floats(0.0, 0.99))
@settings(max_examples=60)
def test_J_beta_pointwise_identity(s, beta):
    # s J'(s) = beta J(s) + (1/2) s^(beta + 1/2) F'(sqrt s) >= beta J(s)
    lhs = float(s * J_beta(np.array(s), beta, 1))
    rhs = float(beta * J_beta(np.array(s), beta) + 0.5 * s ** (beta + 0.5) * cutoff_F(np.sqrt(s), 1))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)
    assert lhs >= beta * float(J_beta(np.array(s), beta)) - 1e-12


def test_J_beta_vanishes_inside_unit_ball_and_derivatives():
    assert np.all(J_beta(np.linspace(0, 1, 11), 0.5) == 0)
    s = np.linspace(1.2, 5.0, 30)
    h = 1e-6
    for n in (1, 2):
        fd = (J_beta(s + h, 0.3, n - 1) - J_beta(s - h, 0.3, n - 1)) / (2 * h)
        assert np.allclose(J_beta(s, 0.3, n), fd, atol=1e-6)
    with pytest.raises(ValueError):
        J_beta(s, 0.3, 3)


def test_symbol_arguments():
    F = lightcone_symbol(2.0, 3.0)
    assert np.allclose(F.on_radius(np.array([6.0, 12.0])), cutoff_F(np.array([1.0, 2.0])))
    J = J_beta_symbol(0.5, 1.0, 1.0)
    assert float(J.on_radius(np.array([2.0]))[0]) == pytest.approx(4**0.5 * 1.0)
    with pytest.raises(ValueError):
        lightcone_symbol(-1.0, 1.0)


def test_generic_symbol_exact_derivatives():
    G = generic_symbol("s**3 - 2*s", rho=3)
    s = np.linspace(-2, 2, 9)
    assert np.allclose(G(s), s**3 - 2 * s)
    assert np.allclose(G.derivative(s, 1), 3 * s**2 - 2)
    assert np.allclose(G.derivative(s, 3), 6.0)


def test_symbol_class_constants_detects_wrong_order():
    consts, ok = symbol_class_constants(bracket_symbol(-0.5), -0.5)
    assert ok and consts[0] == pytest.approx(1.0)
    _, ok = symbol_class_constants(bracket_symbol(0.5), -0.5)
    assert not ok


def test_inverse_power_derivative_coefficients():
    G = inverse_power_symbol(0.5)
    assert float(G.derivative(np.array([4.0]), 2)[0]) == pytest.approx(0.5 * 1.5 * 4.0**-2.5)
