"""Light-cone observables, decay and growth fits, and weighted interaction checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import theilslopes

from lightcone.fock import FockBasis, blockwise_field, field_operator, lift_fock, operator_norm, second_quantize
from lightcone.grid import PhotonGrid
from lightcone.operators import HermitianOperator, hermitian_insert
from lightcone.symbols import J_beta, cutoff_F

log = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 8


class ProbeError(ValueError):
    pass


class ShortWindowError(ProbeError):
    pass


def gamma_bound(c: float) -> float:
    """Largest admissible decay exponent ``min((1 - 1/c)/2, 1/10)`` at cone speed ``c``."""
    return min(0.5 * (1.0 - 1.0 / c), 0.1)


@dataclass(frozen=True)
class ProbeSpec:
    c: float
    beta: float = 0.5
    gamma: float = 0.05
    delta: float = 0.9
    epsilon: float | None = None
    nu: float = 0.4

    @property
    def eps(self) -> float:
        return self.epsilon if self.epsilon is not None else 0.5 * (0.5 - 2 * self.gamma)

    @property
    def theta(self) -> float:
        return 2.0 * ((1.0 - 1.0 / self.c) * self.beta - self.gamma)

    @property
    def gamma_cap(self) -> float:
        return gamma_bound(self.c)

    def propagation_region_errors(self) -> list[str]:
        errs = []
        if not 0 <= self.beta < self.delta < 1:
            errs.append(f"need 0 <= beta < delta < 1, got beta={self.beta}, delta={self.delta}")
        top = min((1 - 1 / self.c) * self.beta, (3 * self.delta - 2) / 10)
        if not 0 <= self.gamma < top:
            errs.append(f"need 0 <= gamma < min((1-1/c) beta, (3 delta - 2)/10) = {top:.4g}, got {self.gamma}")
        return errs

    def cone_region_errors(self) -> list[str]:
        if not self.gamma < gamma_bound(self.c):
            return [f"need gamma < min((1-1/c)/2, 1/10) = {gamma_bound(self.c):.4g}, got {self.gamma}"]
        return []

    def inequality_region_errors(self) -> list[str]:
        errs = []
        if not 0 < self.eps < 0.5 - 2 * self.gamma:
            errs.append(f"need 0 < epsilon < 1/2 - 2 gamma, got {self.eps}")
        if not self.theta > 0:
            errs.append(f"need theta = 2((1-1/c) beta - gamma) > 0, got {self.theta}")
        return errs

    def validate(self, *regions: str) -> None:
        if not self.c > 0:
            raise ProbeError(f"cone speed must be positive, got {self.c}")
        checks = {"propagation": self.propagation_region_errors, "cone": self.cone_region_errors,
                  "inequality": self.inequality_region_errors}
        errs = []
        for r in regions:
            errs += checks[r]()
        if errs:
            raise ProbeError("; ".join(errs))


# ---------------------------------------------------------------------------
# photon densities


def _grid(basis: FockBasis) -> PhotonGrid:
    if basis.grid is None:
        raise ProbeError("the Fock basis carries no photon grid")
    return basis.grid


def photon_amplitudes(basis: FockBasis, psi: np.ndarray, n_x: int = 1) -> np.ndarray:
    """``a_j psi`` for every momentum mode ``j``: array ``(modes, rest)``."""
    psi = np.asarray(psi, dtype=complex).reshape(n_x, basis.dim).T
    return (basis.lowering_stack @ psi).reshape(basis.n_modes, basis.dim * n_x)


def photon_position_density(basis: FockBasis, psi: np.ndarray, n_x: int = 1) -> np.ndarray:
    """``<psi, a*_m a_m psi>`` for position-basis modes ``m``; sums to ``<N>``."""
    grid = _grid(basis)
    Y = photon_amplitudes(basis, psi, n_x)
    Yp = grid.to_position(Y.T)
    return np.sum(np.abs(Yp) ** 2, axis=0)


def photon_momentum_density(basis: FockBasis, psi: np.ndarray, n_x: int = 1) -> np.ndarray:
    return np.sum(np.abs(photon_amplitudes(basis, psi, n_x)) ** 2, axis=1)


@dataclass
class ConeMass:
    smooth: float
    sharp: float
    inside_box: bool


def outside_cone_mass(basis: FockBasis, psi: np.ndarray, c: float, t: float, n_x: int = 1,
                      density: np.ndarray | None = None) -> ConeMass:
    """``<dGamma(F(|y|/ct))>`` and the sharp ``<dGamma(1_{|y| >= ct})>``."""
    if not t >= 1:
        raise ProbeError(f"t must be >= 1, got {t}")
    if not c > 0:
        raise ProbeError(f"c must be positive, got {c}")
    grid = _grid(basis)
    if density is None:
        density = photon_position_density(basis, psi, n_x)
    r = grid.mode_y_radius
    ct = c * t
    inside = ct < grid.box_length / 2
    if not inside:
        log.warning("cone radius c t = %.4g exceeds the position half-box %.4g; result meaningless",
                    ct, grid.box_length / 2)
    smooth = float(np.sum(cutoff_F(r / ct) * density))
    sharp = float(np.sum((r >= ct) * density))
    return ConeMass(smooth, sharp, bool(inside))


def propagation_values(grid: PhotonGrid, spec: ProbeSpec, t: float) -> np.ndarray:
    """Position-diagonal one-photon values of ``t^(2 gamma) J_beta(v^2)``."""
    v2 = (grid.mode_y_radius / (spec.c * t)) ** 2
    return t ** (2 * spec.gamma) * J_beta(v2, spec.beta)


def position_diagonal(grid: PhotonGrid, values: np.ndarray) -> np.ndarray:
    """Dense one-photon matrix, in the momentum basis, of a position-diagonal operator."""
    W = grid.dft_matrix()
    return hermitian_insert((W * values) @ W.conj().T).toarray()


def propagation_observable(basis: FockBasis, spec: ProbeSpec, t: float) -> HermitianOperator:
    """``Phi_t = t^(2 gamma) dGamma(J_beta(v^2))`` on the Fock space."""
    if not t >= 1:
        raise ProbeError(f"t must be >= 1, got {t}")
    spec.validate("propagation")
    grid = _grid(basis)
    op = second_quantize(basis, position_diagonal(grid, propagation_values(grid, spec, t)))
    return HermitianOperator(op.matrix, "fock", 0, label=f"Phi_t(t={t})")


def propagation_family(basis: FockBasis, spec: ProbeSpec, n_x: int):
    """``t -> Phi_t`` lifted to the full space, for Heisenberg derivatives."""
    grid = _grid(basis)
    W = grid.dft_matrix()

    def family(t: float) -> sp.csr_matrix:
        vals = propagation_values(grid, spec, t)
        one = hermitian_insert((W * vals) @ W.conj().T)
        return lift_fock(basis, second_quantize(basis, one), n_x)

    return family


def propagation_expectation(basis: FockBasis, spec: ProbeSpec, t: float, psi=None, n_x: int = 1,
                            density: np.ndarray | None = None) -> float:
    grid = _grid(basis)
    if density is None:
        density = photon_position_density(basis, psi, n_x)
    return float(np.sum(propagation_values(grid, spec, t) * density))


def form_bound_gap(grid: PhotonGrid, spec: ProbeSpec, t: float) -> np.ndarray:
    """Diagonal of ``Phi_t - t^(2 gamma) dGamma(F(|v|))`` on one photon; must be >= 0."""
    v = grid.mode_y_radius / (spec.c * t)
    return propagation_values(grid, spec, t) - t ** (2 * spec.gamma) * cutoff_F(v)


def sandwich_gaps(grid: PhotonGrid, c: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """``F(|v|) - 1_{|y| >= 2ct}`` and ``1_{|y| >= ct} max F - F(|v|)``; both must be >= 0."""
    r = grid.mode_y_radius
    ct = c * t
    F = cutoff_F(r / ct)
    return F - (r >= 2 * ct), (r >= ct) * 1.0 - F


def cone_conjugation_residual(system, c: float, t: float, below: int | None = None) -> float:
    """Check ``U dGamma(T) U* = dGamma(T) + Phi(i T q_x) + <q_x, T q_x>/2`` for ``T = F(|v|)``.

    Same sign convention as the Hamiltonian transform (where ``T = omega`` gives ``Phi(e_x)``
    and the shift in ``V~``).  Returns the largest site-wise norm of the difference restricted
    to photon sectors ``<= below`` (default ``n_max - 2``), which shrinks as ``n_max`` grows.
    """
    if not t >= 1:
        raise ProbeError(f"t must be >= 1, got {t}")
    basis, grid = system.basis, system.spec.grid
    below = basis.n_max - 2 if below is None else below
    if below < 0:
        raise ProbeError(f"need n_max >= 2 for a nonempty comparison window, got n_max={basis.n_max}")
    F = cutoff_F(grid.mode_y_radius / (c * t))
    T = position_diagonal(grid, F)
    dG = second_quantize(basis, T).dense()
    keep = basis.sector_of <= below
    worst = 0.0
    for qx in system.couplings.q:
        w, v = np.linalg.eigh(field_operator(basis, qx).dense())
        U = (v * np.exp(-1j * w)) @ v.conj().T
        Tq = grid.to_momentum(F * grid.to_position(qx))
        target = dG + field_operator(basis, 1j * Tq).dense() + 0.5 * np.vdot(qx, Tq).real * np.eye(basis.dim)
        diff = (U @ dG @ U.conj().T - target)[np.ix_(keep, keep)]
        worst = max(worst, float(np.linalg.norm(diff, 2)))
    return worst


# ---------------------------------------------------------------------------
# fits


def _trailing_half(times, series, t0: float, t_end: float | None):
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    if t_end is None:
        t_end = times[-1]
    valid = (times >= t0) & (times <= t_end + 1e-12)
    start = t0 + 0.5 * (t_end - t0)
    sel = valid & (times >= start - 1e-12)
    if sel.sum() < MIN_FIT_SAMPLES:
        raise ShortWindowError(f"fit window [{start:.4g}, {t_end:.4g}] holds {int(sel.sum())} samples, "
                               f"need at least {MIN_FIT_SAMPLES}")
    return times[sel], series[sel], (float(start), float(t_end))


def _log_fit(t, y):
    if np.any(y <= 0):
        raise ProbeError("series must be positive on the fit window for a log-log fit")
    lt, ly = np.log(t), np.log(y)
    slope, icpt = np.polyfit(lt, ly, 1)
    resid = ly - (slope * lt + icpt)
    return float(slope), float(icpt), resid


@dataclass
class DecayFit:
    c: float
    gamma: float
    gamma_cap: float
    slope: float
    theil_sen_slope: float
    window: tuple
    residuals: list
    tol: float

    @property
    def gamma_hat(self) -> float:
        """Decay exponent of the outside mass, ``-slope``."""
        return -self.slope

    @property
    def gamma_reference(self) -> float:
        """Exponent the decay verdict is judged against; for ``c <= 1`` the bound is vacuous, so use the 1/10 cap."""
        return self.gamma_cap if self.gamma_cap > 0 else 0.1

    @property
    def decays(self) -> bool:
        return self.slope <= -2 * self.gamma_reference

    @property
    def bounded(self) -> bool:
        return self.theil_sen_slope <= self.tol

    @property
    def verdict(self) -> bool:
        return self.bounded

    def as_dict(self) -> dict:
        return {"c": self.c, "gamma": self.gamma, "gamma_cap": self.gamma_cap, "gamma_hat": self.gamma_hat,
                "gamma_reference": self.gamma_reference, "slope": self.slope,
                "theil_sen_slope": self.theil_sen_slope, "decays": self.decays,
                "bounded": self.bounded, "verdict": self.verdict, "window": list(self.window),
                "residuals": list(self.residuals), "tol": self.tol}


def cone_time_limit(grid: PhotonGrid, c: float) -> float:
    """``T_box``: the cone ``2ct`` stays inside the position half-box up to this time."""
    return grid.box_length / 2 / (2 * c)


def lightcone_decay_fit(times, mass, c: float, gamma: float = 0.0, t_box: float | None = None, t0: float = 1.0,
                        tol: float = 0.02) -> DecayFit:
    """Least-squares slope of ``log mass`` and Theil-Sen slope of ``log(t^(2 gamma) mass)`` vs ``log t``."""
    t, m, window = _trailing_half(times, mass, t0, t_box)
    slope, _, resid = _log_fit(t, m)
    ts = theilslopes(np.log(t ** (2 * gamma) * m), np.log(t))
    return DecayFit(float(c), float(gamma), gamma_bound(c), slope, float(ts.slope), window, resid.tolist(), tol)


@dataclass
class GrowthFit:
    delta: float
    slope: float
    bound: float
    window: tuple

    @property
    def ok(self) -> bool:
        return self.slope <= self.bound + 0.1

    def as_dict(self) -> dict:
        return {"delta": self.delta, "slope": self.slope, "bound": self.bound, "ok": self.ok,
                "window": list(self.window)}


def small_momentum_values(grid: PhotonGrid, delta: float) -> np.ndarray:
    if not -1 < delta < 1.5:
        raise ProbeError(f"need -1 < delta < 3/2, got {delta}")
    return grid.mode_omega ** (-delta)


def small_momentum_growth(times, series, delta: float, t0: float = 1.0) -> GrowthFit:
    """Log-log slope of ``<dGamma(|k|^-delta)>_t`` over the trailing half; bound ``2(1+delta)/5``."""
    if not -1 < delta < 1.5:
        raise ProbeError(f"need -1 < delta < 3/2, got {delta}")
    t, y, window = _trailing_half(times, series, t0, None)
    slope, _, _ = _log_fit(t, y)
    return GrowthFit(float(delta), slope, 2 * (1 + delta) / 5, window)


@dataclass
class AuditReport:
    theta: float
    C1: float
    C2: float
    L: list
    fraction_ok: float
    slack: float

    def as_dict(self) -> dict:
        return {"theta": self.theta, "C1": self.C1, "C2": self.C2, "L": self.L,
                "fraction_ok": self.fraction_ok, "slack": self.slack}


def heisenberg_inequality_audit(times, dphi, phi, dgamma_small, spec: ProbeSpec, slack: float = 0.0) -> AuditReport:
    """Fit-then-check the differential inequality for the propagation observable.

    ``L(t) = <D Phi_t> + (theta/t) <Phi_t> - C1 t^(-1-delta+2gamma) <dGamma(|k|^-delta)> - C2 t^(-1-eps)``
    with ``C1, C2 >= 0`` chosen on the first quartile so that ``L <= 0`` there (each term
    covering half of the excess); the report gives the share of later times with ``L <= slack``.
    """
    spec.validate("inequality")
    t = np.asarray(times, dtype=float)
    r = np.asarray(dphi, dtype=float) + spec.theta / t * np.asarray(phi, dtype=float)
    a = t ** (-1 - spec.delta + 2 * spec.gamma) * np.asarray(dgamma_small, dtype=float)
    b = t ** (-1 - spec.eps)
    q = max(1, len(t) // 4)
    excess = np.maximum(r[:q], 0.0)
    C1 = float(np.max(np.where(a[:q] > 0, 0.5 * excess / np.where(a[:q] > 0, a[:q], 1.0), 0.0)))
    C2 = float(np.max(excess / b[:q] * np.where(a[:q] > 0, 0.5, 1.0)))
    L = r - C1 * a - C2 * b
    later = L[q:]
    frac = float(np.mean(later <= slack)) if later.size else 1.0
    return AuditReport(spec.theta, C1, C2, L.tolist(), frac, slack)


# ---------------------------------------------------------------------------
# weighted interaction decay


VARIANTS = ("q", "g_tilde", "e")


def weight_exponent(variant: str, d: float, beta: float, mu: float) -> float:
    if variant == "q":
        return 1.5 + d
    if variant == "g_tilde":
        return 0.5 + 1.0 / mu + 2 * beta + d
    if variant == "e":
        return 1.5 + 2 * beta + d
    raise ProbeError(f"variant must be one of {VARIANTS}, got {variant!r}")


def check_decay_range(variant: str, d: float, beta: float) -> None:
    if variant == "q":
        if not 0 <= d < 0.5:
            raise ProbeError(f"variant q needs 0 <= d < 1/2, got {d}")
        return
    if variant not in VARIANTS:
        raise ProbeError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if not 0 <= beta <= 0.5:
        raise ProbeError(f"need 0 <= beta <= 1/2, got {beta}")
    if not 0 <= d < 1.5 - 2 * beta:
        raise ProbeError(f"variant {variant} needs 0 <= d < 3/2 - 2 beta = {1.5 - 2 * beta:.4g}, got {d}")


@dataclass
class InteractionDecay:
    variant: str
    d: float
    tau: float
    times: list
    norms: list
    slope: float

    def as_dict(self) -> dict:
        return {"variant": self.variant, "d": self.d, "tau": self.tau, "times": self.times,
                "norms": self.norms, "slope": self.slope}


def weighted_interaction_norm(system, variant: str, t: float, c: float, beta: float, tau: float) -> float:
    """``|| Phi(i |y|^(2 beta) F(|v|) f_x) <x>^-tau (H_f+1)^-1/2 ||`` maximised over particle sites."""
    basis, grid, cs = system.basis, system.spec.grid, system.couplings
    f = {"q": cs.q, "g_tilde": cs.g_tilde, "e": cs.e}[variant]
    r = grid.mode_y_radius
    mult = cutoff_F(r / (c * t)) * (1.0 if variant == "q" else r ** (2 * beta))
    h = 1j * grid.to_momentum(mult * grid.to_position(f))
    hf = second_quantize(basis, sp.diags(grid.mode_omega.astype(complex))).matrix.diagonal().real
    w = sp.diags(1.0 / np.sqrt(hf + 1.0))
    xb = np.sqrt(1.0 + system.spec.x**2)
    if basis.n_max == 1:
        # vacuum <-> one photon only: the operator is block off-diagonal, with blocks
        # h / sqrt(2) (from the vacuum) and h^H (omega + 1)^-1/2 / sqrt(2) (into it)
        wts = 1.0 / np.sqrt(grid.mode_omega + 1.0)
        blocks = np.maximum(np.linalg.norm(h, axis=1), np.linalg.norm(h * wts, axis=1)) / np.sqrt(2.0)
        return float(np.max(blocks * xb ** (-tau)))
    best = 0.0
    for i in range(system.n_x):
        if not np.any(h[i]):
            continue
        phi = blockwise_field(basis, h[i][None, :])
        best = max(best, operator_norm(phi @ w) * xb[i] ** (-tau))
    return float(best)


def weighted_interaction_decay(system, variant: str, d: float, c: float, times, beta: float = 0.0) -> InteractionDecay:
    """Norm ladder over ``times`` and its log-log least-squares slope."""
    check_decay_range(variant, d, beta)
    tau = weight_exponent(variant, d, beta, system.spec.mu)
    norms = [weighted_interaction_norm(system, variant, float(t), c, beta, tau) for t in times]
    pos = np.array(norms) > 0
    slope = float(np.polyfit(np.log(np.asarray(times)[pos]), np.log(np.array(norms)[pos]), 1)[0]) \
        if pos.sum() >= 2 else float("nan")
    return InteractionDecay(variant, float(d), float(tau), [float(t) for t in times], norms, slope)
