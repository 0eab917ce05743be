import numpy as np
import pytest
import scipy.sparse as sp

from lightcone.evolve import (KrylovStats, PropagationError, dense_expm_apply, evolve, expectation,
                              heisenberg_derivative, krylov_step, propagate)


def random_hermitian(n, seed, density=0.3):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr") * (1 + 1j)
    return ((A + A.conj().T) / 2).tocsr()


def unit(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


@pytest.mark.parametrize("t", [0.1, 2.5, -4.0, 20.0])
def test_krylov_matches_dense_oracle(t):
    H = random_hermitian(120, 1)
    psi = unit(120, 2)
    stats = KrylovStats()
    out = krylov_step(H, psi, t, 1e-12, stats=stats)
    assert np.linalg.norm(out - dense_expm_apply(H, psi, t)) < 1e-10
    assert stats.steps >= 1 and max(stats.dims) <= 40


def test_negative_time_inverts_forward():
    H = random_hermitian(60, 3)
    psi = unit(60, 4)
    assert np.linalg.norm(evolve(H, evolve(H, psi, 3.0), -3.0) - psi) < 1e-9


def test_small_space_breakdown_is_exact():
    H = sp.diags([1.0, 2.0, 3.0]).astype(complex).tocsr()
    psi = np.array([1, 1, 0], complex) / np.sqrt(2)
    out = krylov_step(H, psi, 7.0, 1e-14)
    assert np.allclose(out, np.exp(-7j * np.array([1, 2, 3])) * psi)


def test_propagate_conserves_norm_and_energy():
    H = random_hermitian(80, 5)
    psi = unit(80, 6)
    obs = {"diag": sp.diags(np.arange(80.0)).tocsr(), "first": lambda s, t: float(abs(s[0]) ** 2)}
    tr = propagate(H, psi, np.linspace(0, 30, 31), tol=1e-11, observables=obs, keep_every=10)
    assert tr.norm_drift < 1e-9 and tr.energy_drift < 1e-9
    assert set(tr.states) == {0, 10, 20, 30}
    assert tr.observables["diag"].shape == (31,)
    assert np.allclose(tr.final_state(), dense_expm_apply(H, psi, 30.0), atol=1e-8)


def test_propagate_rejects_bad_input():
    H = random_hermitian(10, 7)
    with pytest.raises(ValueError, match="increasing"):
        propagate(H, unit(10, 8), [0.0, 1.0, 1.0])
    with pytest.raises(ValueError, match="normalised"):
        propagate(H, 2 * unit(10, 8), [0.0, 1.0])


def test_step_underflow_raises():
    H = random_hermitian(50, 9)
    with pytest.raises(PropagationError):
        krylov_step(H, unit(50, 10), 10.0, 1e-30, m_max=2)


def test_expectation_rejects_non_hermitian():
    A = sp.csr_matrix(np.array([[0, 1], [0, 0]], complex))
    with pytest.raises(ValueError, match="imaginary"):
        expectation(A, np.array([1, 1j]) / np.sqrt(2))
    with pytest.raises(ValueError):
        expectation(A, np.ones(3))


def test_heisenberg_forms_agree():
    H = random_hermitian(40, 11)
    B = random_hermitian(40, 12)
    C = sp.diags(np.linspace(0, 1, 40)).tocsr()

    def family(t):
        return (B + t * C).tocsr()

    psi = evolve(H, unit(40, 13), 1.5)
    res = heisenberg_derivative(family, H, psi, 1.5, 1e-3, agree_tol=1e-5)
    assert res.disagreement < 1e-5
    with pytest.raises(PropagationError):
        heisenberg_derivative(family, H, psi, 1.5, 0.5, agree_tol=1e-12)
