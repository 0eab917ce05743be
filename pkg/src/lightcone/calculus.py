"""Functional calculus through the Helffer-Sjostrand formula, and commutator checks.

``G(A) = (1/pi) int dbar G~(z) (A - z)^-1 dRe z dIm z`` with an order-3 Taylor
almost-analytic extension cut off to ``|Im z| <= 2 <Re z>``.  Resolvents are
computed by direct linear solves so the result is independent of any
eigendecomposition of ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from lightcone.grid import GridError, PhotonGrid
from lightcone.operators import HermitianOperator, hermitian_average
from lightcone.symbols import SymbolFunction, lowpass_h

TAYLOR_ORDER = 3
CUTOFF_WIDTH = 2.0


class ConvergenceError(RuntimeError):
    pass


def _bracket(x):
    return np.sqrt(1.0 + x * x)


def dbar_extension(G: SymbolFunction, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``d/dzbar`` of the almost-analytic extension at ``z = x + i y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    bx = _bracket(x)
    u = y / bx
    tau = lowpass_h(np.abs(u))
    dtau = np.sign(u) * lowpass_h(np.abs(u), 1)
    derivs = [G.derivative(x, n) for n in range(TAYLOR_ORDER + 2)]
    iy = 1j * y
    taylor = sum(derivs[n] * iy**n / np.prod(range(1, n + 1)) for n in range(TAYLOR_ORDER + 1))
    remainder = derivs[TAYLOR_ORDER + 1] * iy**TAYLOR_ORDER / np.prod(range(1, TAYLOR_ORDER + 1))
    dtau_dx = dtau * (-y * x / bx**3)
    dtau_dy = dtau / bx
    return 0.5 * (tau * remainder + taylor * (dtau_dx + 1j * dtau_dy))


@dataclass
class _Rule:
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray


def _panel(lo, hi, n):
    nodes, weights = roots_legendre(n)
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1.0), half * weights


def _quadrature_rule(spectral_radius: float, depth: int, rho: float, tol: float) -> _Rule:
    """Tensor Gauss-Legendre rule on a dyadic rectangle subdivision of the cutoff support."""
    n = 6 + 2 * depth
    core = max(spectral_radius, 1.0) + 2.0
    n_core = int(np.ceil(2 * core * 2**depth))
    edges = np.linspace(-core, core, n_core + 1)
    x_panels = [(a, b) for a, b in zip(edges[:-1], edges[1:])]
    # outer dyadic shells until the neglected tail ~ X^rho falls below tol
    decay = max(-rho, 0.25)
    x_max = core * max(2.0, (1.0 / tol) ** (1.0 / decay))
    lo = core
    while lo < x_max:
        hi = 2 * lo
        sub = np.linspace(lo, hi, 3)
        for a, b in zip(sub[:-1], sub[1:]):
            x_panels.append((a, b))
            x_panels.append((-b, -a))
        lo = hi
    n_y_levels = 8 + 2 * depth
    # y panels in units of <x>: dyadic levels down to 0, then the cutoff band [1, 2] in 4 panels
    rel_edges = np.concatenate([[0.0], 2.0 ** -np.arange(n_y_levels + 1)[::-1],
                                np.linspace(1.0, CUTOFF_WIDTH, 5)[1:]])
    ty, tw = zip(*(_panel(a, b, n) for a, b in zip(rel_edges[:-1], rel_edges[1:])))
    ty, tw = np.concatenate(ty), np.concatenate(tw)
    xn, xw = zip(*(_panel(a, b, n) for a, b in x_panels))
    xn, xw = np.concatenate(xn), np.concatenate(xw)
    bx = _bracket(xn)[:, None]
    y = bx * ty[None, :]
    w = xw[:, None] * bx * tw[None, :]
    x = np.broadcast_to(xn[:, None], y.shape)
    return _Rule(np.concatenate([x.ravel(), x.ravel()]), np.concatenate([y.ravel(), -y.ravel()]),
                 np.concatenate([w.ravel(), w.ravel()]))


def _hs_sum(A: np.ndarray, G: SymbolFunction, rule: _Rule, batch: int = 4096) -> np.ndarray:
    n = A.shape[0]
    coef = dbar_extension(G, rule.x, rule.y) * rule.w / np.pi
    keep = np.abs(coef) > 0
    z = (rule.x + 1j * rule.y)[keep]
    coef = coef[keep]
    eye = np.eye(n)
    out = np.zeros((n, n), dtype=complex)
    for start in range(0, len(z), batch):
        zb = z[start:start + batch]
        mats = A[None, :, :] - zb[:, None, None] * eye
        res = np.linalg.solve(mats, np.broadcast_to(eye, mats.shape))
        out += np.tensordot(coef[start:start + batch], res, axes=(0, 0))
    return out


def hs_apply(A, G: SymbolFunction, quadrature_depth: int = 1, tol: float | None = None) -> HermitianOperator:
    """Approximate ``G(A)`` for Hermitian ``A`` and a symbol ``G`` of negative order.

    With ``tol`` set, the result at ``quadrature_depth`` is compared with depth + 1 and
    :class:`ConvergenceError` is raised when they differ by more than ``tol``.
    """
    if isinstance(A, HermitianOperator):
        space = A.space
        A = A.dense()
    else:
        space = "one_photon"
        A = np.asarray(A, dtype=complex)
    if np.abs(A - A.conj().T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(A).max(initial=0.0)):
        raise ValueError("hs_apply needs a Hermitian matrix")
    rho = G.rho if G.rho is not None else -1.0
    if rho >= 0:
        raise ValueError("Helffer-Sjostrand quadrature needs a symbol of negative order")
    radius = float(np.abs(np.linalg.norm(A, 2))) if A.size else 0.0
    target = tol if tol is not None else 1e-9
    result = _hs_sum(A, G, _quadrature_rule(radius, quadrature_depth, rho, target))
    if tol is not None:
        finer = _hs_sum(A, G, _quadrature_rule(radius, quadrature_depth + 1, rho, target))
        gap = float(np.abs(finer - result).max())
        if gap > tol:
            raise ConvergenceError(f"HS quadrature not converged: depth {quadrature_depth} vs "
                                   f"{quadrature_depth + 1} differ by {gap:.3e}")
        result = finer
    return HermitianOperator(hermitian_average(result), space, 0, label=f"HS[{G.kind}]")


def eig_apply(A, G: SymbolFunction) -> np.ndarray:
    """Eigendecomposition oracle ``V G(lambda) V^H``."""
    A = A.dense() if isinstance(A, HermitianOperator) else np.asarray(A, dtype=complex)
    lam, V = np.linalg.eigh(A)
    return (V * G(lam)) @ V.conj().T


# ---------------------------------------------------------------------------
# commutators on the one-photon lattice (polarisation-blind, one block)


@dataclass(frozen=True)
class LatticeOperators:
    """Dense ``y``, ``|k|``, ``k^`` on one polarisation block of the grid."""

    W: np.ndarray
    y: np.ndarray  # (n, dim) position lattice
    k: np.ndarray  # (n, dim) momentum lattice
    ct: float

    @classmethod
    def build(cls, grid: PhotonGrid, c: float, t: float) -> "LatticeOperators":
        P = grid.polarizations
        W = grid.dft_matrix()[::P, ::P]
        return cls(W, grid.y_points, grid.k_points, c * t)

    @property
    def absk(self) -> np.ndarray:
        return np.linalg.norm(self.k, axis=1)

    @property
    def v2(self) -> np.ndarray:
        return np.sum(self.y**2, axis=1) / self.ct**2

    def pos_diag(self, vals: np.ndarray) -> np.ndarray:
        return (self.W * vals) @ self.W.conj().T

    def velocity(self, axis: int) -> np.ndarray:
        return self.pos_diag(self.y[:, axis] / self.ct)

    def position(self, axis: int) -> np.ndarray:
        return self.pos_diag(self.y[:, axis])

    def khat(self, axis: int) -> np.ndarray:
        return self.k[:, axis] / self.absk


def _check_region(G: SymbolFunction, delta: float, t: float, rho_max: float) -> float:
    rho = G.rho
    if rho is None:
        raise GridError("symbol needs a class tag rho")
    if not rho < rho_max:
        raise GridError(f"symbol order rho={rho} outside the admissible range rho < {rho_max}")
    if not (max(1 + 2 * rho, 0.0) < delta <= 1.0):
        raise GridError(f"delta={delta} outside max(1 + 2 rho, 0) < delta <= 1 for rho={rho}")
    if t < 1:
        raise GridError(f"t must be >= 1, got {t}")
    return rho


def _weighted_norm(ops: LatticeOperators, R: np.ndarray, delta: float) -> float:
    wk = ops.absk ** (delta / 2)
    return float(np.linalg.norm(wk[:, None] * R * wk[None, :], 2))


@dataclass
class CommutatorResidual:
    leading: HermitianOperator
    residual_norm: float
    residual_norm_position_route: float


def commutator_decomposition_residual(grid: PhotonGrid, G: SymbolFunction, t: float, delta: float, c: float,
                                      symmetrized: bool = False, check_region: bool = True) -> CommutatorResidual:
    """Remainder of ``[G(v^2), i|k|] = (ct)^-1 G'(v^2) (v.k^ + k^.v) + R``.

    Returns the leading term and ``|| |k|^(delta/2) R |k|^(delta/2) ||`` computed in the
    momentum basis by matrix products, and once more in the position basis through
    divided differences of the diagonal symbols.
    """
    if check_region:
        _check_region(G, delta, t, rho_max=1.0)
    ops = LatticeOperators.build(grid, c, t)
    W, ct = ops.W, ops.ct
    g = G(ops.v2)
    gp = G.derivative(ops.v2, 1)
    Gm = ops.pos_diag(g)
    K = np.diag(ops.absk)
    comm = Gm @ (1j * K) - (1j * K) @ Gm
    A = np.zeros_like(comm)
    for ax in range(grid.dim):
        V = ops.velocity(ax)
        Kh = np.diag(ops.khat(ax))
        A += V @ Kh + Kh @ V
    if symmetrized:
        root = ops.pos_diag(np.sqrt(np.clip(gp, 0.0, None)))
        lead = root @ A @ root / ct
    else:
        lead = ops.pos_diag(gp) @ A / ct
    R = comm - lead
    norm_mom = _weighted_norm(ops, R, delta)

    # position basis: every position-diagonal factor enters through its diagonal
    Kp = W.conj().T @ K @ W
    comm_p = 1j * (g[:, None] - g[None, :]) * Kp
    A_p = np.zeros_like(Kp)
    for ax in range(grid.dim):
        v = ops.y[:, ax] / ct
        Khp = W.conj().T @ np.diag(ops.khat(ax)) @ W
        A_p += (v[:, None] + v[None, :]) * Khp
    if symmetrized:
        r = np.sqrt(np.clip(gp, 0.0, None))
        lead_p = r[:, None] * A_p * r[None, :] / ct
    else:
        lead_p = gp[:, None] * A_p / ct
    R_p = comm_p - lead_p
    Kd = W.conj().T @ np.diag(ops.absk ** (delta / 2)) @ W
    norm_pos = float(np.linalg.norm(Kd @ R_p @ Kd, 2))
    leading = HermitianOperator(hermitian_average(lead), "one_photon", 0, label="leading commutator term")
    return CommutatorResidual(leading, norm_mom, norm_pos)


def dilation_commutator_norm(grid: PhotonGrid, G: SymbolFunction, t: float, delta: float, c: float,
                             check_region: bool = True) -> float:
    """``|| |k|^(delta/2) [G(v^2), y.k^ + k^.y] |k|^(delta/2) ||``."""
    if check_region:
        _check_region(G, delta, t, rho_max=0.0)
    ops = LatticeOperators.build(grid, c, t)
    Gm = ops.pos_diag(G(ops.v2))
    D = np.zeros_like(Gm)
    for ax in range(grid.dim):
        Y = ops.position(ax)
        Kh = np.diag(ops.khat(ax))
        D += Y @ Kh + Kh @ Y
    return _weighted_norm(ops, Gm @ D - D @ Gm, delta)
