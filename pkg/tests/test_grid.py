import json

import numpy as np
import pytest

from lightcone.grid import (GridError, algebraic_packet, build_photon_grid, gaussian_packet, hardy_ratio,
                            operator_function, position_operator)
from lightcone.operators import HermitianOperator, load_coo
from lightcone.symbols import inverse_power_symbol, lightcone_symbol


def test_half_offset_lattices_avoid_zero():
    g = build_photon_grid(1, 8, 0.5)
    assert np.allclose(g.axis_momenta, (np.arange(8) - 3.5) * 0.5)
    assert np.all(g.omega > 0)
    assert g.position_spacing == pytest.approx(2 * np.pi / 4)
    assert g.box_length == pytest.approx(2 * np.pi / 0.5)


@pytest.mark.parametrize("args", [(2, 8, 0.5, "scalar1d"), (1, 7, 0.5, "scalar1d"), (1, 8, 0.0, "scalar1d"),
                                  (3, 4, 0.5, "scalar1d"), (1, 4, 0.5, "vector3d")])
def test_invalid_grids_rejected(args):
    with pytest.raises(GridError):
        build_photon_grid(*args)


def test_dft_is_unitary_and_round_trips_in_3d():
    g = build_photon_grid(3, 4, 0.5, "vector3d")
    W = g.dft_matrix()
    assert np.allclose(W.conj().T @ W, np.eye(g.size), atol=1e-13)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size)
    assert np.allclose(g.to_momentum(g.to_position(u)), u)
    assert np.allclose(g.to_position(u), W.conj().T @ u)


def test_position_is_minus_i_gradient_in_momentum():
    # momentum Gaussian of width 1/2, negligible at the box edge: y u = -i u'(k) = 4 i k u
    g = build_photon_grid(1, 128, 0.1)
    k = g.axis_momenta
    u = np.exp(-2 * k**2)
    Yu = position_operator(g) @ u
    assert np.allclose(Yu, 4j * k * u, atol=1e-10)


def test_polarisation_vectors_transverse_and_orthonormal():
    g = build_photon_grid(3, 4, 0.5, "vector3d")
    eps = g.eps
    khat = g.k_points / g.omega[:, None]
    assert np.allclose(np.einsum("nai,ni->na", eps, khat), 0, atol=1e-12)
    gram = np.einsum("nai,nbi->nab", eps, eps)
    assert np.allclose(gram, np.eye(2)[None], atol=1e-12)


def test_packets_normalised_and_inside_box():
    g = build_photon_grid(1, 256, 2 * np.pi / 256)
    for u in (gaussian_packet(g, 4.0), algebraic_packet(g, 1.0)):
        assert np.linalg.norm(u) == pytest.approx(1.0)
        pos = g.to_position(u)
        assert np.sum(g.mode_y_radius * np.abs(pos) ** 2) < g.box_length / 8
    assert g.check_boundary(g.to_position(gaussian_packet(g, 4.0)))
    edge = np.zeros(g.size, complex)
    edge[0] = 1
    assert not g.check_boundary(edge)


def test_operator_function_representations():
    g = build_photon_grid(1, 16, 0.5)
    F = lightcone_symbol(1.0, 2.0)
    pos = operator_function(g, "position", F)
    W = g.dft_matrix()
    assert np.allclose(pos.dense(), W @ np.diag(F.on_radius(g.mode_y_radius)) @ W.conj().T)
    mom = operator_function(g, "momentum", inverse_power_symbol(0.5))
    assert np.allclose(mom.matrix.diagonal(), g.mode_omega**-0.5)
    with pytest.raises(GridError):
        operator_function(g, "spin", F)


def test_hardy_ratio_range_and_bound():
    g = build_photon_grid(3, 6, 0.5, "vector3d")
    rng = np.random.default_rng(1)
    u = rng.standard_normal(g.size) + 0j
    assert 0 < hardy_ratio(g, 1.0, u) < np.inf
    with pytest.raises(GridError):
        hardy_ratio(g, 1.5, u)


def test_coo_export_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    op = HermitianOperator.from_matrix(A + A.conj().T, "one_photon")
    path = tmp_path / "op.coo"
    op.export_coo(path, {"dimension": 6})
    back = load_coo(path, 6)
    assert (back != op.matrix).nnz == 0
    first = path.read_text().splitlines()[0].split()
    assert len(first) == 4
    assert json.loads((tmp_path / "op.coo.json").read_text()) == {"dimension": 6}


def test_manifest_and_hash_stable():
    a = build_photon_grid(1, 8, 0.5)
    b = build_photon_grid(1, 8, 0.5)
    assert a.grid_hash() == b.grid_hash()
    assert a.grid_hash() != build_photon_grid(1, 8, 0.25).grid_hash()


def test_hardy_ratio_bounded_on_refining_3d_grids():
    # fixed box, finer momentum spacing; the continuum constant for s = 1 is 2
    ratios = []
    for M in (8, 12, 16):
        g = build_photon_grid(3, M, 4.0 / M, "vector3d")
        ratios.append(hardy_ratio(g, 1.0, gaussian_packet(g, 1.0)))
    assert all(0 < r < 2 for r in ratios)
