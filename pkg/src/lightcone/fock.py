"""Truncated bosonic Fock space over the photon grid.

Basis states are multisets of one-photon mode indices, stored as sorted tuples,
grouped by photon number ``n = 0..n_max`` and ordered lexicographically inside
each sector.  All ladder operators derive from one table of lowering moves
``(source state, target state, mode, sqrt(occupation))``.

On the full space (particle grid x Fock) a vector is indexed by
``x_index * fock_dim + fock_index``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from lightcone.budget import check_budget
from lightcone.grid import PhotonGrid
from lightcone.operators import HermitianOperator, hermitian_insert

log = logging.getLogger(__name__)

ORDERING = "sectors by photon number; inside a sector, lexicographic on sorted mode-index tuples"


class FockError(ValueError):
    pass


def fock_dimension(n_modes: int, n_max: int) -> int:
    return sum(comb(n_modes + n - 1, n) for n in range(n_max + 1))


class FockBasis:
    """Occupation basis with ``sum n_j <= n_max`` over ``n_modes`` one-photon modes."""

    def __init__(self, n_modes: int, n_max: int, grid: PhotonGrid | None = None):
        self.n_modes = int(n_modes)
        self.n_max = int(n_max)
        self.grid = grid
        states: list[tuple[int, ...]] = []
        offsets = [0]
        for n in range(self.n_max + 1):
            states.extend(itertools.combinations_with_replacement(range(self.n_modes), n))
            offsets.append(len(states))
        self.states = states
        self.sector_offsets = np.array(offsets, dtype=np.int64)
        self.index = {s: i for i, s in enumerate(states)}

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return self.dim

    @cached_property
    def sector_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_max + 1), np.diff(self.sector_offsets))

    def sector_slice(self, n: int) -> slice:
        return slice(int(self.sector_offsets[n]), int(self.sector_offsets[n + 1]))

    def occupations(self, i: int) -> np.ndarray:
        occ = np.zeros(self.n_modes, dtype=np.int64)
        for j in self.states[i]:
            occ[j] += 1
        return occ

    def state_index(self, occupation) -> int:
        """Index of the basis vector with the given occupation vector."""
        occ = np.asarray(occupation, dtype=np.int64)
        if occ.shape != (self.n_modes,) or np.any(occ < 0):
            raise FockError("occupation vector has the wrong length or negative entries")
        key = tuple(np.repeat(np.arange(self.n_modes), occ))
        if key not in self.index:
            raise FockError(f"occupation with {occ.sum()} photons exceeds n_max={self.n_max}")
        return self.index[key]

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    @cached_property
    def lowering_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Arrays ``(src, dst, mode, amp)`` with ``a_mode |src> = amp |dst>``."""
        src, dst, mode, amp = [], [], [], []
        for i, s in enumerate(self.states):
            if not s:
                continue
            prev = None
            for pos, j in enumerate(s):
                if j == prev:
                    continue
                prev = j
                count = s.count(j)
                reduced = s[:pos] + s[pos + 1:]
                src.append(i)
                dst.append(self.index[reduced])
                mode.append(j)
                amp.append(np.sqrt(count))
        return (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                np.array(mode, dtype=np.int64), np.array(amp, dtype=float))

    @cached_property
    def lowering_stack(self) -> sp.csr_matrix:
        """Sparse ``L`` of shape ``(n_modes * dim, dim)`` with rows ``mode * dim + target``."""
        src, dst, mode, amp = self.lowering_table
        return sp.csr_matrix((amp.astype(complex), (mode * self.dim + dst, src)),
                             shape=(self.n_modes * self.dim, self.dim))

    def manifest(self) -> dict:
        return {
            "grid_hash": self.grid.grid_hash() if self.grid is not None else None,
            "grid": self.grid.manifest() if self.grid is not None else None,
            "n_modes": self.n_modes,
            "n_max": self.n_max,
            "dimension": self.dim,
            "sector_offsets": self.sector_offsets.tolist(),
            "ordering": ORDERING,
        }


def build_fock_basis(grid: PhotonGrid | int, n_max: int) -> FockBasis:
    if n_max < 1:
        raise FockError(f"n_max must be >= 1, got {n_max}")
    n_modes = grid.size if isinstance(grid, PhotonGrid) else int(grid)
    if n_modes < 1:
        raise FockError("need at least one photon mode")
    dim = fock_dimension(n_modes, n_max)
    # tuples, dict entries and the lowering table dominate
    check_budget(dim * (120.0 + 16.0 * n_max) + dim * min(n_max, n_modes) * 48.0,
                 f"Fock basis of dimension {dim} (modes={n_modes}, n_max={n_max})")
    return FockBasis(n_modes, n_max, grid if isinstance(grid, PhotonGrid) else None)


def _vector(basis: FockBasis, f) -> np.ndarray:
    f = np.asarray(f, dtype=complex).ravel()
    if f.shape != (basis.n_modes,):
        raise FockError(f"one-photon vector has length {f.size}, basis expects {basis.n_modes}")
    if not np.all(np.isfinite(f)):
        raise FockError("one-photon vector is not finite")
    return f


def annihilator(basis: FockBasis, f) -> HermitianOperator:
    """``a(f) = sum_j conj(f_j) a_j``: antilinear in ``f``, lowers the photon number by one."""
    f = _vector(basis, f)
    src, dst, mode, amp = basis.lowering_table
    mat = sp.csr_matrix((np.conj(f[mode]) * amp, (dst, src)), shape=(basis.dim, basis.dim))
    mat.eliminate_zeros()
    return HermitianOperator(mat, "fock", 1, hermitian=False, label="a(f)")


def creator(basis: FockBasis, f) -> HermitianOperator:
    """``a*(f)``: adjoint of ``a(f)``; the top sector is mapped to zero by the truncation."""
    a = annihilator(basis, f)
    return HermitianOperator(a.matrix.conj().T.tocsr(), "fock", 1, hermitian=False, label="a*(f)")


def number_operator(basis: FockBasis) -> HermitianOperator:
    return HermitianOperator(sp.diags(basis.sector_of.astype(complex)).tocsr(), "fock", 0, label="N")


def _one_photon_matrix(basis: FockBasis, t) -> sp.csr_matrix:
    mat = t.matrix if isinstance(t, HermitianOperator) else sp.csr_matrix(np.asarray(t) if not sp.issparse(t) else t)
    mat = sp.csr_matrix(mat, dtype=complex)
    if mat.shape != (basis.n_modes, basis.n_modes):
        raise FockError(f"one-photon operator has shape {mat.shape}, basis has {basis.n_modes} modes")
    scale = max(1.0, float(abs(mat).max()) if mat.nnz else 0.0)
    diff = mat - mat.conj().T
    if diff.nnz and float(abs(diff).max()) > 1e-12 * scale:
        raise FockError("second quantisation needs a Hermitian one-photon operator")
    return mat


def second_quantize(basis: FockBasis, t) -> HermitianOperator:
    """``dGamma(t) = sum_ij t_ij a*_i a_j`` assembled as ``L^H (t (x) 1) L``."""
    t = _one_photon_matrix(basis, t)
    L = basis.lowering_stack
    mid = sp.kron(t, sp.identity(basis.dim, dtype=complex, format="csr"), format="csr")
    mat = (L.conj().T @ (mid @ L)).tocsr()
    return HermitianOperator(hermitian_insert(mat), "fock", 0, label="dGamma(t)")


def field_operator(basis: FockBasis, h) -> HermitianOperator:
    """``Phi(h) = (a*(h) + a(h)) / sqrt(2)``."""
    a = annihilator(basis, h).matrix
    mat = (a + a.conj().T) / np.sqrt(2.0)
    return HermitianOperator(hermitian_insert(mat), "fock", 1, label="Phi(h)")


def sector_band_width(basis: FockBasis, op) -> int:
    """Largest photon-number change produced by ``op`` (from its stored entries)."""
    mat = sp.coo_matrix(op.matrix if isinstance(op, HermitianOperator) else op)
    if mat.nnz == 0:
        return 0
    sec = basis.sector_of
    return int(np.abs(sec[mat.row % basis.dim] - sec[mat.col % basis.dim]).max())


def ccr_residual(basis: FockBasis, f, g, sectors=None, n_random: int = 4, seed: int = 0) -> float:
    """Max of ``||([a(f), a*(g)] - <f, g>) psi|| / ||psi||`` over a fixed probe set.

    The probes are every basis vector of the chosen sectors (default: all below the
    top one) plus ``n_random`` seeded random combinations of them.
    """
    f = _vector(basis, f)
    g = _vector(basis, g)
    if sectors is None:
        sectors = range(basis.n_max)
    a = annihilator(basis, f).matrix
    ad = creator(basis, g).matrix
    comm = a @ ad - ad @ a - np.vdot(f, g) * sp.identity(basis.dim, dtype=complex, format="csr")
    cols = np.concatenate([np.arange(basis.sector_offsets[n], basis.sector_offsets[n + 1]) for n in sectors])
    if cols.size == 0:
        return 0.0
    sub = comm[:, cols]
    best = float(np.sqrt(np.asarray(abs(sub).power(2).sum(axis=0)).ravel().max()))
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        v = rng.standard_normal(cols.size) + 1j * rng.standard_normal(cols.size)
        v /= np.linalg.norm(v)
        best = max(best, float(np.linalg.norm(sub @ v)))
    return best


# ---------------------------------------------------------------------------
# operator-norm bound checks


def operator_norm(mat) -> float:
    """Largest singular value; dense SVD for small matrices, ``svds`` otherwise."""
    mat = sp.csr_matrix(mat)
    if mat.nnz == 0:
        return 0.0
    if max(mat.shape) <= 2500:
        return float(np.linalg.norm(mat.toarray(), 2))
    s = spla.svds(mat, k=1, return_singular_vectors=False, tol=1e-10, random_state=0)
    return float(s[0])


@dataclass
class BoundReport:
    name: str
    measured: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound * (1 + 1e-12) + 1e-14

    def as_dict(self) -> dict:
        return {"name": self.name, "measured": self.measured, "bound": self.bound, "ok": self.ok}


def _assert_reports(reports: list[BoundReport]) -> list[BoundReport]:
    bad = [r.as_dict() for r in reports if not r.ok]
    if bad:
        raise AssertionError({"violations": bad})
    return reports


def bound_check_numbers(basis: FockBasis, f) -> list[BoundReport]:
    """``||a(f)(N+1)^-1/2|| <= ||f||`` and ``||a*(f)(N+1)^-1/2|| <= sqrt(2) ||f||``."""
    f = _vector(basis, f)
    w = sp.diags(1.0 / np.sqrt(basis.sector_of + 1.0))
    a = annihilator(basis, f).matrix
    nf = float(np.linalg.norm(f))
    return _assert_reports([
        BoundReport("a(f)(N+1)^-1/2", operator_norm(a @ w), nf),
        BoundReport("a*(f)(N+1)^-1/2", operator_norm(a.conj().T @ w), np.sqrt(2.0) * nf),
    ])


def bound_check_field_energy(basis: FockBasis, f, omega=None) -> list[BoundReport]:
    """``||a(f)(H_f+1)^-1/2|| <= ||omega^-1/2 f||`` and the matching creation bound."""
    f = _vector(basis, f)
    if omega is None:
        if basis.grid is None:
            raise FockError("need the photon dispersion: pass omega or build the basis from a grid")
        omega = basis.grid.mode_omega
    omega = np.asarray(omega, dtype=float)
    hf = second_quantize(basis, sp.diags(omega.astype(complex))).matrix.diagonal().real
    w = sp.diags(1.0 / np.sqrt(hf + 1.0))
    a = annihilator(basis, f).matrix
    weighted = float(np.linalg.norm(f / np.sqrt(omega)))
    nf = float(np.linalg.norm(f))
    return _assert_reports([
        BoundReport("a(f)(H_f+1)^-1/2", operator_norm(a @ w), weighted),
        BoundReport("a*(f)(H_f+1)^-1/2", operator_norm(a.conj().T @ w), float(np.hypot(weighted, nf))),
    ])


def dgamma_monotonicity(basis: FockBasis, a, b, probes) -> list[tuple[float, float]]:
    """Pairs ``(||dGamma(a) psi||, ||dGamma(b) psi||)`` for each probe ``psi``."""
    da = second_quantize(basis, a).matrix
    db = second_quantize(basis, b).matrix
    return [(float(np.linalg.norm(da @ p)), float(np.linalg.norm(db @ p))) for p in probes]


# ---------------------------------------------------------------------------
# particle grid x Fock


def lift_fock(basis: FockBasis, op, n_x: int) -> sp.csr_matrix:
    """``1_x (x) op`` on the full space."""
    mat = op.matrix if isinstance(op, HermitianOperator) else sp.csr_matrix(op)
    return sp.kron(sp.identity(n_x, dtype=complex, format="csr"), mat, format="csr")


def lift_particle(basis: FockBasis, mat) -> sp.csr_matrix:
    """``mat (x) 1_F`` on the full space."""
    return sp.kron(sp.csr_matrix(mat, dtype=complex), sp.identity(basis.dim, dtype=complex, format="csr"),
                   format="csr")


def blockwise_annihilator(basis: FockBasis, G: np.ndarray) -> sp.csr_matrix:
    """Block diagonal ``sum_x |x><x| (x) a(G[x])`` for a family of one-photon vectors."""
    G = np.asarray(G, dtype=complex)
    n_x = G.shape[0]
    if G.shape != (n_x, basis.n_modes):
        raise FockError(f"coupling family has shape {G.shape}, expected (n_x, {basis.n_modes})")
    src, dst, mode, amp = basis.lowering_table
    shift = (np.arange(n_x) * basis.dim)[:, None]
    rows = (dst[None, :] + shift).ravel()
    cols = (src[None, :] + shift).ravel()
    vals = (np.conj(G[:, mode]) * amp[None, :]).ravel()
    N = n_x * basis.dim
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    mat.eliminate_zeros()
    return mat


def blockwise_field(basis: FockBasis, G: np.ndarray) -> sp.csr_matrix:
    """``sum_x |x><x| (x) Phi(G[x])``, exactly Hermitian."""
    a = blockwise_annihilator(basis, G)
    return hermitian_insert((a + a.conj().T) / np.sqrt(2.0))


def one_body_density(basis: FockBasis, psi: np.ndarray, n_x: int = 1) -> np.ndarray:
    """``rho_ij = sum_x <a_i psi_x, a_j psi_x>`` so that ``<dGamma(t)> = sum_ij t_ij rho_ij``."""
    psi = np.asarray(psi, dtype=complex).reshape(n_x, basis.dim).T
    Y = (basis.lowering_stack @ psi).reshape(basis.n_modes, basis.dim * n_x)
    return Y.conj() @ Y.T


def dgamma_expectation(basis: FockBasis, t, psi: np.ndarray, n_x: int = 1, rho: np.ndarray | None = None) -> float:
    """``<psi, dGamma(t) psi>`` through the one-body density matrix (no Fock-space matrix built)."""
    if rho is None:
        rho = one_body_density(basis, psi, n_x)
    if isinstance(t, HermitianOperator):
        t = t.matrix
    if sp.issparse(t):
        val = complex(sp.csr_matrix(t).multiply(rho).sum())
    else:
        t = np.asarray(t)
        # a 1-D array is read as the diagonal of t
        val = complex(np.sum(t * np.diag(rho))) if t.ndim == 1 else complex(np.sum(t * rho))
    return float(val.real)


def dgamma_apply(basis: FockBasis, t, psi: np.ndarray, n_x: int = 1) -> np.ndarray:
    """``(1_x (x) dGamma(t)) psi`` without forming the Fock-space matrix: ``L^H (t (x) 1) L psi``."""
    psi = np.asarray(psi, dtype=complex)
    cols = psi.reshape(n_x, basis.dim).T
    L = basis.lowering_stack
    Y = (L @ cols).reshape(basis.n_modes, basis.dim * n_x)
    t = t.matrix if isinstance(t, HermitianOperator) else t
    Z = np.asarray(t @ Y).reshape(basis.n_modes * basis.dim, n_x)
    return (L.conj().T @ Z).T.reshape(-1)
