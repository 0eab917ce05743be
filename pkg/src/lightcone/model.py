"""Hamiltonians of one particle coupled to the photon field, the dressing transform,
the ionisation threshold estimate and spectral filtering.

Conventions
-----------
* Particle on an odd, symmetric, periodic grid ``x_i = (i - (n_x - 1)/2) dx``; the
  momentum ``p`` is the spectral derivative and ``p^2 = p @ p``.
* In ``vector3d`` mode the particle moves on the line ``x = s n`` (unit ``n``) and
  only the component ``n . A`` of the vector potential enters.
* One-photon coupling vectors carry the quadrature weight ``sqrt(dk^d)`` so that
  ``<f, g>`` approximates the continuum pairing.
* ``H = (p - A)^2 + H_f + V`` with ``A = Phi(g_x)``.  Conjugating with
  ``U = exp(-i Phi(q_x))`` gives ``(p - A~)^2 + E + H_f + V~`` with ``g~ = g - d_x q``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import chebyshev as npcheb

from lightcone.budget import check_budget
from lightcone.fock import (FockBasis, blockwise_field, build_fock_basis, lift_fock, lift_particle,
                            second_quantize)
from lightcone.grid import PhotonGrid, build_photon_grid
from lightcone.operators import HermitianOperator, hermitian_insert
from lightcone.symbols import cutoff_F, lowpass_h, transform_phi

log = logging.getLogger(__name__)

DEFAULT_DIRECTION = (1.0, 2.0, 3.0)

# Regression guards for the coupling estimates, fitted once on the dense sample
# used in the test suite and frozen with a 2x safety factor.
FROZEN_CONSTANTS = {"q": 2.0, "g_tilde": 4.0, "e": 2.0}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    grid: PhotonGrid
    n_x: int = 15
    dx: float = 0.5
    V0: float = 0.0
    sigma: float = 1.0
    K: float | None = None
    mu: float = 0.25
    coupling_scale: float = 0.0
    n_max: int = 1
    direction: tuple = DEFAULT_DIRECTION

    def __post_init__(self):
        if self.n_x < 3 or self.n_x % 2 == 0:
            raise ModelError(f"n_x must be odd and >= 3 so the grid is symmetric about x = 0, got {self.n_x}")
        if not self.dx > 0:
            raise ModelError(f"dx must be positive, got {self.dx}")
        if not 0 < self.mu < 0.5:
            raise ModelError(f"mu must satisfy 0 < mu < 1/2, got {self.mu}")
        if self.n_max < 1:
            raise ModelError(f"n_max must be >= 1, got {self.n_max}")
        if not self.sigma > 0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")
        if self.K is not None and not self.K > 0:
            raise ModelError(f"K must be positive, got {self.K}")
        if self.V0 < 0:
            raise ModelError("V0 is the well depth and must be >= 0")
        n = np.asarray(self.direction, dtype=float)
        if n.shape != (3,) or not np.linalg.norm(n) > 0:
            raise ModelError("direction must be a nonzero 3-vector")

    @property
    def uv_radius(self) -> float:
        """``K``; default ``4 dk M / 8``."""
        return self.K if self.K is not None else 4 * self.grid.spacing * self.grid.modes_per_axis / 8

    @property
    def unit_direction(self) -> np.ndarray:
        n = np.asarray(self.direction, dtype=float)
        return n / np.linalg.norm(n)

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_x) - (self.n_x - 1) / 2) * self.dx

    @property
    def box_length(self) -> float:
        return self.n_x * self.dx

    @property
    def potential(self) -> np.ndarray:
        return -self.V0 * np.exp(-self.x**2 / self.sigma**2)

    def potential_bound(self) -> tuple[float, float]:
        """``(a, b)`` with ``|V| <= a p^2 + b`` on the grid; a bounded well needs ``a = 0``."""
        return 0.0, float(np.abs(self.potential).max())

    def kappa(self, k_abs: np.ndarray) -> np.ndarray:
        """Radial UV cutoff ``coupling_scale * h(2|k|/K)``: 1 below ``K/2``, 0 from ``K`` on."""
        return self.coupling_scale * lowpass_h(2.0 * np.asarray(k_abs) / self.uv_radius)

    def with_(self, **kw) -> "ModelSpec":
        return replace(self, **kw)

    def manifest(self) -> dict:
        return {
            "grid": self.grid.manifest(), "n_x": self.n_x, "dx": self.dx, "V0": self.V0, "sigma": self.sigma,
            "K": self.uv_radius, "mu": self.mu, "coupling_scale": self.coupling_scale, "n_max": self.n_max,
            "direction": list(self.unit_direction) if self.grid.mode == "vector3d" else None,
        }


# ---------------------------------------------------------------------------
# couplings


@dataclass
class CouplingSet:
    """Per-site one-photon vectors, shape ``(n_x, modes)``, quadrature-weighted."""

    x: np.ndarray
    g: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    g_tilde: np.ndarray
    e: np.ndarray
    V: np.ndarray
    V_tilde: np.ndarray
    weight: float
    constants: dict = field(default_factory=dict)


def _mode_geometry(spec: ModelSpec):
    """Per one-photon mode: ``|k|``, and per site: ``k.x``, ``eps.x``, ``n.eps``."""
    grid = spec.grid
    k_abs = grid.mode_omega
    s = spec.x
    if grid.mode == "scalar1d":
        k = grid.per_mode(grid.k_points[:, 0])
        kx = np.outer(s, k)
        eps_x = np.outer(s, np.ones_like(k_abs))
        n_eps = np.ones_like(k_abs)
    else:
        n = spec.unit_direction
        kn = grid.per_mode(grid.k_points @ n)
        kx = np.outer(s, kn)
        n_eps = (grid.eps @ n).ravel()  # (n_momenta, 2) -> momentum-major, polarisation inner
        eps_x = np.outer(s, n_eps)
    return k_abs, kx, eps_x, n_eps


def build_couplings(spec: ModelSpec, check: bool = True) -> CouplingSet:
    grid = spec.grid
    k_abs, kx, eps_x, n_eps = _mode_geometry(spec)
    kap = spec.kappa(k_abs)
    weight = float(np.sqrt(grid.spacing**grid.dim))
    mu = spec.mu
    km = k_abs**mu
    base = kap * k_abs**-0.5
    g = base * n_eps * np.exp(1j * kx)
    q = (kap * k_abs ** (-0.5 - mu)) * transform_phi(km * eps_x)
    dq = base * transform_phi(km * eps_x, 1) * n_eps
    g_tilde = g - dq
    e = 1j * k_abs * q
    V = spec.potential
    V_tilde = V + 0.5 * np.sum(k_abs * np.abs(q * weight) ** 2, axis=1)
    cs = CouplingSet(spec.x, g * weight, (q * weight).astype(complex), dq * weight, g_tilde * weight,
                     e * weight, V, V_tilde, weight)
    cs.constants = coupling_constants(spec, cs)
    if check:
        check_coupling_estimates(spec, cs, FROZEN_CONSTANTS)
    return cs


def _estimate_ratios(spec: ModelSpec, cs: CouplingSet) -> dict[str, np.ndarray]:
    k_abs = spec.grid.mode_omega
    kap0 = np.abs(spec.kappa(k_abs))
    xb = np.sqrt(1 + cs.x**2)[:, None]
    on = kap0 > 0
    out = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        bounds = {
            "q": kap0 * k_abs**-0.5 * xb,
            "g_tilde": kap0 * k_abs**0.5 * xb ** (1 / spec.mu),
            "e": kap0 * k_abs**0.5 * xb,
        }
        for name, bound in bounds.items():
            vals = np.abs(getattr(cs, name)) / cs.weight
            out[name] = np.where(on[None, :], vals / np.where(bound > 0, bound, 1.0), 0.0)
    return out


def coupling_constants(spec: ModelSpec, cs: CouplingSet) -> dict[str, float]:
    """Smallest ``C`` for which each coupling estimate holds on every sample."""
    return {k: float(v.max(initial=0.0)) for k, v in _estimate_ratios(spec, cs).items()}


def check_coupling_estimates(spec: ModelSpec, cs: CouplingSet, constants: dict) -> None:
    ratios = _estimate_ratios(spec, cs)
    for name, r in ratios.items():
        bad = np.argwhere(r > constants[name])
        if bad.size:
            i, j = bad[0]
            P = spec.grid.polarizations
            raise ModelError(f"coupling estimate for {name} violated at x={cs.x[i]:.6g}, "
                             f"k={spec.grid.k_points[j // P].tolist()}, lambda={j % P}: "
                             f"ratio {r[i, j]:.4g} > {constants[name]}")


# ---------------------------------------------------------------------------
# particle operators and Hamiltonians


def particle_momentum(n_x: int, dx: float) -> np.ndarray:
    """Spectral ``p = -i d/dx`` on the periodic grid (Nyquist mode dropped for even ``n_x``)."""
    freqs = 2 * np.pi * np.fft.fftfreq(n_x, d=dx)
    if n_x % 2 == 0:
        freqs[n_x // 2] = 0.0
    F = np.fft.fft(np.eye(n_x), axis=0) / np.sqrt(n_x)
    p = F.conj().T @ (freqs[:, None] * F)
    return hermitian_insert(p).toarray()


@dataclass
class System:
    """Everything needed to act on the full space ``particle grid (x) Fock``."""

    spec: ModelSpec
    basis: FockBasis
    couplings: CouplingSet

    @property
    def n_x(self) -> int:
        return self.spec.n_x

    @property
    def dim(self) -> int:
        return self.spec.n_x * self.basis.dim

    @cached_property
    def p(self) -> np.ndarray:
        return particle_momentum(self.spec.n_x, self.spec.dx)

    @cached_property
    def p_full(self) -> sp.csr_matrix:
        return lift_particle(self.basis, self.p)

    @cached_property
    def p2_full(self) -> sp.csr_matrix:
        return lift_particle(self.basis, self.p @ self.p)

    @cached_property
    def H_f(self) -> sp.csr_matrix:
        return lift_fock(self.basis, second_quantize(self.basis, sp.diags(self.basis_omega.astype(complex))), self.n_x)

    @property
    def basis_omega(self) -> np.ndarray:
        return self.spec.grid.mode_omega

    @cached_property
    def number(self) -> sp.csr_matrix:
        return lift_fock(self.basis, sp.diags(self.basis.sector_of.astype(complex)), self.n_x)

    def potential(self, values: np.ndarray) -> sp.csr_matrix:
        return lift_particle(self.basis, np.diag(values))

    def field(self, G: np.ndarray) -> sp.csr_matrix:
        return blockwise_field(self.basis, G)

    def minimal_coupling(self, G: np.ndarray) -> sp.csr_matrix:
        """``(p - Phi(G_x))^2`` with exact Hermitian assembly."""
        A = self.field(G)
        B = self.p_full @ A
        return (self.p2_full - B - B.conj().T + A @ A).tocsr()

    def sector_mask(self, below: int) -> np.ndarray:
        """Full-space indices whose photon number is at most ``below``."""
        return np.tile(self.basis.sector_of <= below, self.n_x)

    def particle_density(self, psi: np.ndarray) -> np.ndarray:
        return np.sum(np.abs(np.asarray(psi).reshape(self.n_x, self.basis.dim)) ** 2, axis=1)


def build_system(spec: ModelSpec, check: bool = True) -> System:
    basis = build_fock_basis(spec.grid, spec.n_max)
    return System(spec, basis, build_couplings(spec, check=check))


def _operator(mat, label: str, coupling: int = 2, **meta) -> HermitianOperator:
    out = hermitian_insert(mat)
    return HermitianOperator(out, "full", coupling, label=label, meta=meta)


def _check_hamiltonian_budget(system: System) -> None:
    # p (x) 1 is dense in x; A^2 couples each state to up to ~modes partners per site
    n_x, dim, modes = system.n_x, system.basis.dim, system.basis.n_modes
    check_budget(n_x**2 * dim * 32.0 + n_x * dim * modes * 32.0,
                 f"Hamiltonian on {n_x} sites x {dim} Fock states")


def assemble_hamiltonian(system: System) -> HermitianOperator:
    """``H = (p - Phi(g_x))^2 + H_f + V``."""
    _check_hamiltonian_budget(system)
    cs = system.couplings
    mat = system.minimal_coupling(cs.g) + system.H_f + system.potential(cs.V)
    return _operator(mat, "H")


def assemble_transformed(system: System) -> HermitianOperator:
    """Explicit ``(p - Phi(g~_x))^2 + Phi(e_x) + H_f + V~``."""
    _check_hamiltonian_budget(system)
    cs = system.couplings
    mat = system.minimal_coupling(cs.g_tilde) + system.field(cs.e) + system.H_f + system.potential(cs.V_tilde)
    return _operator(mat, "H~ explicit")


def pauli_fierz_unitary(system: System) -> sp.csr_matrix:
    """Block diagonal ``U = exp(-i Phi(q_x))``; each block exponentiated densely."""
    basis = system.basis
    blocks = []
    for qx in system.couplings.q:
        if not np.any(qx):
            blocks.append(sp.identity(basis.dim, dtype=complex, format="csr"))
            continue
        phi = blockwise_field(basis, qx[None, :]).toarray()
        w, v = np.linalg.eigh(phi)
        blocks.append(sp.csr_matrix((v * np.exp(-1j * w)) @ v.conj().T))
    return sp.block_diag(blocks, format="csr")


def conjugated_hamiltonian(system: System, H: HermitianOperator, U: sp.csr_matrix | None = None) -> HermitianOperator:
    """``U H U*`` computed by dense matrix products."""
    if U is None:
        U = pauli_fierz_unitary(system)
    check_budget(3 * system.dim**2 * 16.0, f"dense conjugation at dimension {system.dim}")
    Ud = U.toarray()
    mat = Ud @ H.dense() @ Ud.conj().T
    return _operator(mat, "U H U*")


@dataclass
class TransformReport:
    unitarity: float
    leak: float
    leak_field: float
    leak_momentum: float
    eig_H: np.ndarray
    eig_H_tilde: np.ndarray
    n_max: int
    below: int

    @property
    def eig_gap(self) -> float:
        return float(np.abs(self.eig_H - self.eig_H_tilde).max())

    def as_dict(self) -> dict:
        return {"n_max": self.n_max, "below": self.below, "unitarity": self.unitarity, "leak": self.leak,
                "leak_field": self.leak_field, "leak_momentum": self.leak_momentum, "eig_H": self.eig_H.tolist(),
                "eig_H_tilde": self.eig_H_tilde.tolist(), "eig_gap": self.eig_gap}


def _restricted_norm(mat: np.ndarray, mask: np.ndarray) -> float:
    return float(np.linalg.norm(mat[np.ix_(mask, mask)], 2))


def transform_report(system: System, n_eigs: int = 5, below: int | None = None) -> TransformReport:
    """Unitarity of ``U`` and the leak ``||P (U H U* - H~) P||`` with ``P`` onto sectors ``<= below``.

    ``below`` defaults to ``n_max - 2`` (everything under the top two sectors).

    The leak is also split into its field part ``U H_f U* - (H_f + E + V~ - V)``, which
    only feels the photon truncation, and its momentum part ``U p U* - (p + Phi(d_x q))``,
    which also carries the error of the spectral derivative on the periodic particle grid.
    """
    cs = system.couplings
    U = pauli_fierz_unitary(system)
    Ud = U.toarray()
    Uh = Ud.conj().T
    unitarity = float(np.abs(Ud @ Uh - np.eye(system.dim)).max())
    H = assemble_hamiltonian(system)
    Ht = assemble_transformed(system)
    conj = conjugated_hamiltonian(system, H, U)
    if below is None:
        below = system.basis.n_max - 2
    mask = system.sector_mask(below)
    leak = _restricted_norm(conj.dense() - Ht.dense(), mask)
    field_target = system.H_f + system.field(cs.e) + system.potential(cs.V_tilde - cs.V)
    leak_field = _restricted_norm(Ud @ system.H_f.toarray() @ Uh - field_target.toarray(), mask)
    mom_target = system.p_full + system.field(cs.dq)
    leak_mom = _restricted_norm(Ud @ system.p_full.toarray() @ Uh - mom_target.toarray(), mask)
    eH = np.linalg.eigvalsh(H.dense())[:n_eigs]
    eHt = np.linalg.eigvalsh(Ht.dense())[:n_eigs]
    return TransformReport(unitarity, leak, leak_field, leak_mom, eH, eHt, system.basis.n_max, below)


# ---------------------------------------------------------------------------
# ionisation threshold


class EigensolverError(RuntimeError):
    pass


def _lowest_eigenvalue(mat: sp.csr_matrix) -> float:
    n = mat.shape[0]
    if n <= 1500:
        return float(np.linalg.eigvalsh(mat.toarray())[0])
    try:
        vals = spla.eigsh(mat, k=1, which="SA", tol=1e-10, maxiter=20 * n, v0=np.ones(n, dtype=complex),
                          return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise EigensolverError(f"eigsh did not converge: {exc}") from None
    return float(vals[0])


@dataclass
class ThresholdReport:
    radii: list
    minima: list
    sigma_hat: float
    monotone: bool
    ground_energy: float

    @property
    def margin(self) -> float:
        return self.sigma_hat - self.ground_energy

    def as_dict(self) -> dict:
        return {"radii": list(self.radii), "eigenvalues": list(self.minima), "sigma_hat": self.sigma_hat,
                "monotone": self.monotone, "ground_energy": self.ground_energy, "margin": self.margin}


def estimate_ionization_threshold(system: System, radii, H: HermitianOperator | None = None,
                                  tol: float = 1e-8) -> ThresholdReport:
    """Lowest energy of ``H`` compressed to sites with ``|x| >= R`` for each ``R``."""
    radii = sorted(float(r) for r in radii)
    if not radii:
        raise ModelError("need at least one radius")
    half = system.spec.box_length / 2
    if radii[-1] >= half:
        raise ModelError(f"radius {radii[-1]} must stay below half the particle box {half}")
    if H is None:
        H = assemble_hamiltonian(system)
    mat = H.matrix
    x_full = np.repeat(np.abs(system.spec.x), system.basis.dim)
    minima = []
    for R in radii:
        keep = np.flatnonzero(x_full >= R - 1e-12)
        minima.append(_lowest_eigenvalue(mat[keep][:, keep]))
    monotone = bool(all(b >= a - tol for a, b in zip(minima[:-1], minima[1:])))
    ground = _lowest_eigenvalue(mat)
    return ThresholdReport(radii, minima, minima[-1], monotone, ground)


# ---------------------------------------------------------------------------
# spectral filtering


@dataclass(frozen=True)
class WindowProfile:
    """Smooth ``chi``: 1 on ``[lo, hi]``, 0 outside ``[lo - ramp, hi + ramp]``; ``scale`` = max value."""

    lo: float
    hi: float
    ramp: float
    scale: float = 1.0

    def __call__(self, E) -> np.ndarray:
        E = np.asarray(E, dtype=float)
        left = cutoff_F(1.0 + (E - (self.lo - self.ramp)) / self.ramp)
        right = lowpass_h(1.0 + (E - self.hi) / self.ramp)
        return self.scale * np.where(E < self.lo, left, np.where(E > self.hi, right, 1.0))

    @property
    def support_top(self) -> float:
        return self.hi + self.ramp

    @property
    def support_bottom(self) -> float:
        return self.lo - self.ramp


@dataclass
class SpectralFilter:
    operator: HermitianOperator | None
    method: str
    degree: int | None = None
    tail_bound: float = 0.0
    bounds: tuple | None = None
    coefficients: np.ndarray | None = None
    H: sp.csr_matrix | None = None

    def apply(self, psi: np.ndarray) -> np.ndarray:
        if self.method == "eig":
            return self.operator.matrix @ psi
        return chebyshev_apply(self.H, self.coefficients, self.bounds, psi)


def chebyshev_apply(H, coeffs: np.ndarray, bounds: tuple, psi: np.ndarray) -> np.ndarray:
    """``sum_k c_k T_k((H - c) / r) psi`` by the three-term recurrence."""
    lo, hi = bounds
    c, r = 0.5 * (hi + lo), 0.5 * (hi - lo)
    psi = np.asarray(psi, dtype=complex)
    t0 = psi
    out = coeffs[0] * t0
    if len(coeffs) == 1:
        return out
    t1 = (H @ t0 - c * t0) / r
    out = out + coeffs[1] * t1
    for ck in coeffs[2:]:
        t2 = 2 * (H @ t1 - c * t1) / r - t0
        out = out + ck * t2
        t0, t1 = t1, t2
    return out


def spectral_filter(H: HermitianOperator, chi, sigma_hat: float, margin: float = 0.0, method: str = "eig",
                    degree: int = 200) -> SpectralFilter:
    """``chi(H)`` by dense eigendecomposition or a Chebyshev series with a reported tail bound."""
    top = getattr(chi, "support_top", None)
    if top is not None and top >= sigma_hat - margin:
        raise ModelError(f"filter support reaches {top:.6g}, not below threshold {sigma_hat:.6g} - margin {margin}")
    if method == "eig":
        check_budget(2 * H.dim**2 * 16.0, f"dense eigendecomposition at dimension {H.dim}")
        lam, vec = np.linalg.eigh(H.dense())
        vals = np.asarray(chi(lam), dtype=float)
        mat = (vec * vals) @ vec.conj().T
        return SpectralFilter(_operator(mat, "chi(H)", None), "eig")
    if method != "chebyshev":
        raise ModelError(f"unknown filter method {method!r}")
    n = H.dim
    lo = float(spla.eigsh(H.matrix, k=1, which="SA", return_eigenvectors=False, v0=np.ones(n), tol=1e-8)[0]) \
        if n > 50 else float(np.linalg.eigvalsh(H.dense())[0])
    hi = float(spla.eigsh(H.matrix, k=1, which="LA", return_eigenvectors=False, v0=np.ones(n), tol=1e-8)[0]) \
        if n > 50 else float(np.linalg.eigvalsh(H.dense())[-1])
    pad = 0.01 * (hi - lo) + 1e-9
    bounds = (lo - pad, hi + pad)
    c, r = 0.5 * (bounds[0] + bounds[1]), 0.5 * (bounds[1] - bounds[0])

    def g(u):
        return chi(c + r * np.asarray(u))

    fine = npcheb.chebinterpolate(g, 4 * degree)
    coeffs = fine[: degree + 1]
    tail = float(np.abs(fine[degree + 1:]).sum())
    return SpectralFilter(None, "chebyshev", degree, tail, bounds, coeffs, H.matrix)


@dataclass
class DecayReport:
    weighted_norm_ratio: float
    tail_slope: float
    delta: float
    sigma_hat: float
    chi_top: float
    x: list
    profile: list

    @property
    def admissible(self) -> bool:
        return self.delta**2 + self.chi_top < self.sigma_hat

    def as_dict(self) -> dict:
        return {"weighted_norm_ratio": self.weighted_norm_ratio, "tail_slope": self.tail_slope,
                "delta": self.delta, "sigma_hat": self.sigma_hat, "chi_top": self.chi_top,
                "admissible": self.admissible, "x": self.x, "profile": self.profile}


def exponential_decay_report(system: System, filtered: np.ndarray, delta: float, sigma_hat: float,
                             chi_top: float, tail_from: float | None = None) -> DecayReport:
    """``||e^{delta|x|} psi|| / ||psi||`` and the slope of ``log |psi|(x)`` on the tail ``|x| >= tail_from``."""
    x = system.spec.x
    dens = np.sqrt(system.particle_density(filtered))
    nrm = np.linalg.norm(dens)
    if nrm == 0:
        raise ModelError("filtered state vanishes")
    ratio = float(np.linalg.norm(np.exp(delta * np.abs(x)) * dens) / nrm)
    if tail_from is None:
        tail_from = system.spec.box_length / 8
    sel = (np.abs(x) >= tail_from) & (dens > 1e-300)
    slope = float(np.polyfit(np.abs(x[sel]), np.log(dens[sel]), 1)[0]) if sel.sum() >= 2 else float("nan")
    return DecayReport(ratio, slope, delta, sigma_hat, chi_top, x.tolist(), dens.tolist())


def default_spec(**kw) -> ModelSpec:
    grid = kw.pop("grid", None) or build_photon_grid(1, kw.pop("M", 8), kw.pop("dk", 0.5), "scalar1d")
    return ModelSpec(grid=grid, **kw)
