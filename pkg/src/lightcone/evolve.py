"""Time evolution ``exp(-itH)`` by Lanczos, expectations and Heisenberg derivatives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from lightcone.operators import HermitianOperator

KRYLOV_CAP = 40


class PropagationError(RuntimeError):
    pass


def _matrix(op):
    if isinstance(op, HermitianOperator):
        return op.matrix
    return op


def expectation(op, psi: np.ndarray, rtol: float = 1e-12) -> float:
    """Real expectation ``<psi, op psi>``; a non-negligible imaginary part is an error."""
    mat = _matrix(op)
    psi = np.asarray(psi)
    if mat.shape[1] != psi.shape[0]:
        raise ValueError(f"operator of shape {mat.shape} does not act on a vector of length {psi.shape[0]}")
    v = mat @ psi
    val = np.vdot(psi, v)
    scale = max(1.0, float(np.linalg.norm(v) * np.linalg.norm(psi)))
    if abs(val.imag) > rtol * scale:
        raise ValueError(f"expectation has imaginary part {val.imag:.3e}: operator is not Hermitian")
    return float(val.real)


@dataclass
class KrylovStats:
    steps: int = 0
    rejections: int = 0
    breakdowns: int = 0
    dims: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"steps": self.steps, "rejections": self.rejections, "breakdowns": self.breakdowns,
                "max_dim": max(self.dims, default=0), "mean_dim": float(np.mean(self.dims)) if self.dims else 0.0}


def _lanczos(H, v0: np.ndarray, m_max: int):
    """Orthonormal Krylov basis with full reorthogonalisation; returns ``(V, alpha, beta, breakdown)``.

    ``beta[j]`` couples basis vectors ``j`` and ``j+1``; ``beta[-1]`` is the residual norm.
    """
    n = v0.shape[0]
    m_max = min(m_max, n)
    V = np.zeros((m_max + 1, n), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    nrm = np.linalg.norm(v0)
    V[0] = v0 / nrm
    for j in range(m_max):
        w = H @ V[j]
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0.0)
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w = w - V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        beta[j] = b
        if b <= 1e-13 * max(1.0, abs(alpha[j])):
            return V[: j + 1], alpha[: j + 1], beta[: j + 1], True
        V[j + 1] = w / b
    return V[:m_max], alpha, beta, False


def _small_expm_first_column(alpha, beta_inner, tau):
    if len(alpha) == 1:
        return np.array([np.exp(-1j * tau * alpha[0])])
    lam, S = eigh_tridiagonal(alpha, beta_inner)
    return S @ (np.exp(-1j * tau * lam) * S[0].conj())


def krylov_step(H, psi: np.ndarray, tau: float, tol: float, m_max: int = KRYLOV_CAP,
                stats: KrylovStats | None = None, min_step: float = 1e-12) -> np.ndarray:
    """``exp(-i tau H) psi`` with the Lanczos error estimate kept below ``tol`` per sub-step.

    The Krylov basis is built once per sub-step; when no dimension up to ``m_max``
    meets the tolerance the sub-step is halved.
    """
    H = _matrix(H)
    stats = stats if stats is not None else KrylovStats()
    psi = np.asarray(psi, dtype=complex)
    remaining = float(tau)
    out = psi.copy()
    while remaining != 0.0:
        nrm = np.linalg.norm(out)
        if nrm == 0.0:
            return out
        V, alpha, beta, breakdown = _lanczos(H, out, m_max)
        if breakdown:
            stats.breakdowns += 1
        step = remaining
        while True:
            accepted = None
            for m in range(1, len(alpha) + 1):
                col = _small_expm_first_column(alpha[:m], beta[: m - 1], step)
                exact = breakdown and m == len(alpha)
                err = 0.0 if exact else nrm * beta[m - 1] * abs(col[-1])
                if err <= tol:
                    accepted = (m, col)
                    break
            if accepted is not None:
                break
            stats.rejections += 1
            step *= 0.5
            if abs(step) < min_step * max(1.0, abs(tau)):
                raise PropagationError(f"step size underflow at |dt| = {abs(step):.3e}")
        m, col = accepted
        out = nrm * (V[:m].T @ col)
        stats.steps += 1
        stats.dims.append(m)
        remaining -= step
        if abs(remaining) < 1e-15 * max(1.0, abs(tau)):
            remaining = 0.0
    return out


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    norm_series: np.ndarray
    energy_series: np.ndarray
    observables: dict
    states: dict
    propagator_stats: dict

    @property
    def norm_drift(self) -> float:
        return float(np.abs(self.norm_series - self.norm_series[0]).max())

    @property
    def energy_drift(self) -> float:
        e0 = self.energy_series[0]
        return float(np.abs(self.energy_series - e0).max() / max(1.0, abs(e0)))

    def final_state(self) -> np.ndarray:
        return self.states[max(self.states)]


Observable = Callable[[np.ndarray, float], float]


def propagate(H, psi0: np.ndarray, times, tol: float = 1e-10, observables: dict | None = None,
              keep_every: int | None = 1, m_max: int = KRYLOV_CAP, normalize_check: bool = True) -> TrajectoryRecord:
    """Evolve ``psi0`` (given at ``times[0]``) and record norm, energy and observables at each time.

    ``observables`` maps names to Hermitian operators or to callables ``f(psi, t)``.
    States are kept at every ``keep_every``-th sample (and always the last one).
    """
    H = _matrix(H)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("need a non-empty 1-D time grid")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    psi = np.asarray(psi0, dtype=complex)
    if normalize_check and abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ValueError("initial state must be normalised")
    observables = observables or {}
    stats = KrylovStats()
    norms, energies = [], []
    series = {name: [] for name in observables}
    states = {}

    def record(i, t, state):
        norms.append(float(np.linalg.norm(state)))
        energies.append(expectation(H, state))
        for name, ob in observables.items():
            series[name].append(ob(state, t) if callable(ob) and not isinstance(ob, HermitianOperator)
                                else expectation(ob, state))
        if keep_every and (i % keep_every == 0 or i == len(times) - 1):
            states[i] = state.copy()

    record(0, times[0], psi)
    for i in range(1, len(times)):
        psi = krylov_step(H, psi, times[i] - times[i - 1], tol, m_max, stats)
        record(i, times[i], psi)
    if not states:
        states[len(times) - 1] = psi.copy()
    return TrajectoryRecord(times, np.array(norms), np.array(energies),
                            {k: np.array(v) for k, v in series.items()}, states, stats.as_dict())


def evolve(H, psi: np.ndarray, t: float, tol: float = 1e-10) -> np.ndarray:
    """``exp(-i t H) psi`` for any real ``t`` (negative allowed)."""
    return krylov_step(H, psi, t, tol)


@dataclass
class HeisenbergResult:
    commutator_form: float
    evolution_form: float

    @property
    def disagreement(self) -> float:
        return abs(self.commutator_form - self.evolution_form)


def heisenberg_derivative(family: Callable[[float], object], H, psi_t: np.ndarray, t: float, dt: float,
                          tol: float = 1e-12, agree_tol: float | None = None) -> HeisenbergResult:
    """``<psi_t, (d_t Phi_t - i[Phi_t, H]) psi_t>`` computed two ways.

    (a) centred difference of the family in its time parameter plus the commutator term;
    (b) centred difference of ``<psi_s, Phi_s psi_s>`` along the true evolution.
    With ``agree_tol`` set, a larger disagreement raises (``dt`` too large).
    """
    H = _matrix(H)
    phi = _matrix(family(t))
    dphi = (expectation(family(t + dt), psi_t) - expectation(family(t - dt), psi_t)) / (2 * dt)
    # -i <psi, [Phi, H] psi> = 2 Im <Phi psi, H psi>
    comm = 2.0 * np.vdot(phi @ psi_t, H @ psi_t).imag
    a = dphi + comm
    fwd = krylov_step(H, psi_t, dt, tol)
    bwd = krylov_step(H, psi_t, -dt, tol)
    b = (expectation(family(t + dt), fwd) - expectation(family(t - dt), bwd)) / (2 * dt)
    res = HeisenbergResult(float(a), float(b))
    if agree_tol is not None and res.disagreement > agree_tol:
        raise PropagationError(f"Heisenberg derivative forms disagree by {res.disagreement:.3e}; reduce dt")
    return res


def dense_expm_apply(H, psi: np.ndarray, t: float) -> np.ndarray:
    """Dense oracle ``V exp(-i t lambda) V^H psi``."""
    Hd = H.toarray() if sp.issparse(H) else (H.dense() if isinstance(H, HermitianOperator) else np.asarray(H))
    lam, V = np.linalg.eigh(Hd)
    return V @ (np.exp(-1j * t * lam) * (V.conj().T @ psi))
