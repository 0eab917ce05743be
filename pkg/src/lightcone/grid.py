"""Discretised one-photon space.

Momenta sit on a half-offset lattice ``k_j = (j + 1/2 - M/2) dk`` per axis so that
``|k| > 0`` everywhere.  The photon position ``y`` is the variable conjugate to ``k``
under the pairing ``exp(i k.y)`` (the same phase the coupling ``g_x`` carries), so
a position eigenvector reads ``exp(i k.y_m) / sqrt(M)`` in the momentum basis.  The
position lattice is half-offset as well, with spacing ``2 pi / (M dk)``.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from lightcone.operators import HermitianOperator, hermitian_insert
from lightcone.symbols import SymbolFunction

log = logging.getLogger(__name__)

MODES = ("scalar1d", "vector3d")


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PhotonGrid:
    dim: int
    modes_per_axis: int
    spacing: float
    mode: str

    @property
    def polarizations(self) -> int:
        return 2 if self.mode == "vector3d" else 1

    @property
    def n_momenta(self) -> int:
        return self.modes_per_axis**self.dim

    @property
    def size(self) -> int:
        """Number of one-photon modes ``(k_j, lambda)``."""
        return self.n_momenta * self.polarizations

    @property
    def offset(self) -> bool:
        return True

    @property
    def position_spacing(self) -> float:
        return 2 * np.pi / (self.modes_per_axis * self.spacing)

    @property
    def box_length(self) -> float:
        return self.modes_per_axis * self.position_spacing

    @cached_property
    def axis_momenta(self) -> np.ndarray:
        M = self.modes_per_axis
        return (np.arange(M) + 0.5 - M / 2) * self.spacing

    @cached_property
    def axis_positions(self) -> np.ndarray:
        M = self.modes_per_axis
        return (np.arange(M) + 0.5 - M / 2) * self.position_spacing

    def _lattice(self, axis_values: np.ndarray) -> np.ndarray:
        mesh = np.meshgrid(*([axis_values] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def k_points(self) -> np.ndarray:
        return self._lattice(self.axis_momenta)

    @cached_property
    def y_points(self) -> np.ndarray:
        return self._lattice(self.axis_positions)

    @cached_property
    def omega(self) -> np.ndarray:
        return np.linalg.norm(self.k_points, axis=1)

    @cached_property
    def eps(self) -> np.ndarray | None:
        """Polarisation vectors, shape ``(n_momenta, 2, 3)``; None in scalar mode."""
        if self.mode != "vector3d":
            return None
        k = self.k_points
        khat = k / self.omega[:, None]
        ez = np.array([0.0, 0.0, 1.0])
        cross = np.cross(ez, k)
        cn = np.linalg.norm(cross, axis=1)
        e1 = np.where((cn > 1e-8)[:, None], cross / np.where(cn > 1e-8, cn, 1.0)[:, None], [1.0, 0.0, 0.0])
        e2 = np.cross(khat, e1)
        return np.stack([e1, e2], axis=1)

    # per one-photon mode (momentum-major, polarisation innermost)
    def per_mode(self, values: np.ndarray) -> np.ndarray:
        return np.repeat(np.asarray(values), self.polarizations, axis=0)

    @cached_property
    def mode_omega(self) -> np.ndarray:
        return self.per_mode(self.omega)

    @cached_property
    def mode_y_radius(self) -> np.ndarray:
        """``|y_m|`` for every position-basis one-photon index."""
        return self.per_mode(np.linalg.norm(self.y_points, axis=1))

    @cached_property
    def dft_1d(self) -> np.ndarray:
        """Unitary ``W[j, m] = exp(i k_j y_m) / sqrt(M)``: column ``m`` is the position state ``y_m``."""
        M = self.modes_per_axis
        return np.exp(1j * np.outer(self.axis_momenta, self.axis_positions)) / np.sqrt(M)

    def _apply_axes(self, vec: np.ndarray, mat: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=complex)
        lead = vec.shape[:-1]
        M, P, d = self.modes_per_axis, self.polarizations, self.dim
        arr = vec.reshape(lead + (M,) * d + (P,))
        nlead = len(lead)
        for ax in range(d):
            arr = np.moveaxis(np.tensordot(mat, arr, axes=([1], [nlead + ax])), 0, nlead + ax)
        return arr.reshape(lead + (self.size,))

    def to_position(self, vec: np.ndarray) -> np.ndarray:
        """Momentum amplitudes -> position amplitudes (last axis), unitary."""
        return self._apply_axes(vec, self.dft_1d.conj().T)

    def to_momentum(self, vec: np.ndarray) -> np.ndarray:
        return self._apply_axes(vec, self.dft_1d)

    def dft_matrix(self) -> np.ndarray:
        """Full one-photon DFT (position -> momentum) as a dense matrix."""
        W = self.dft_1d
        full = W
        for _ in range(self.dim - 1):
            full = np.kron(full, W)
        return np.kron(full, np.eye(self.polarizations))

    def boundary_mass_fraction(self, position_amplitudes: np.ndarray) -> float:
        """Share of ``|psi(y)|^2`` within two lattice sites of the periodic box edge."""
        M, P, d = self.modes_per_axis, self.polarizations, self.dim
        prob = np.abs(np.asarray(position_amplitudes)) ** 2
        prob = prob.reshape((-1,) + (M,) * d + (P,)).sum(axis=(0, -1))
        edge = np.zeros(M, dtype=bool)
        edge[:2] = edge[-2:] = True
        mask = np.zeros((M,) * d, dtype=bool)
        for ax in range(d):
            shape = [1] * d
            shape[ax] = M
            mask |= edge.reshape(shape)
        total = prob.sum()
        return float(prob[mask].sum() / total) if total > 0 else 0.0

    def check_boundary(self, position_amplitudes: np.ndarray, limit: float = 0.01) -> bool:
        frac = self.boundary_mass_fraction(position_amplitudes)
        if frac > limit:
            log.warning("%.3g of the photon mass is within 2 sites of the position box edge", frac)
            return False
        return True

    def manifest(self) -> dict:
        return {
            "dim": self.dim,
            "modes_per_axis": self.modes_per_axis,
            "spacing": self.spacing,
            "mode": self.mode,
            "polarizations": self.polarizations,
            "ordering": "axis-major momentum index (C order), polarisation innermost",
        }

    def grid_hash(self) -> str:
        return hashlib.sha256(repr(sorted(self.manifest().items())).encode()).hexdigest()[:16]


def build_photon_grid(dim: int, M: int, dk: float, mode: str = "scalar1d") -> PhotonGrid:
    if dim not in (1, 3):
        raise GridError(f"dim must be 1 or 3, got {dim}")
    if mode not in MODES:
        raise GridError(f"mode must be one of {MODES}, got {mode!r}")
    if (mode == "scalar1d") != (dim == 1):
        raise GridError(f"mode {mode!r} is incompatible with dim={dim}")
    if M < 2 or M % 2:
        raise GridError(f"modes_per_axis must be even and >= 2 (odd M puts a mode at k=0), got {M}")
    if not dk > 0:
        raise GridError(f"momentum spacing must be positive, got {dk}")
    return PhotonGrid(dim, int(M), float(dk), mode)


def diagonal_values(grid: PhotonGrid, basis_rep: str, sf: SymbolFunction) -> np.ndarray:
    """Values of ``sf`` on the diagonal of the requested representation, per one-photon mode."""
    if basis_rep == "momentum":
        if sf.kind == "inverse_power_delta" and np.any(grid.mode_omega == 0):
            raise GridError("inverse power of |k| on a grid containing k = 0")
        vals = sf.on_radius(grid.mode_omega)
    elif basis_rep == "position":
        vals = sf.on_radius(grid.mode_y_radius)
    else:
        raise GridError(f"basis_rep must be 'momentum' or 'position', got {basis_rep!r}")
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise GridError(f"symbol {sf.kind} is not finite on the {basis_rep} spectrum")
    return vals


def operator_function(grid: PhotonGrid, basis_rep: str, sf: SymbolFunction) -> HermitianOperator:
    """``sf`` of ``|k|`` or ``|y|`` as a one-photon operator in the momentum basis."""
    vals = diagonal_values(grid, basis_rep, sf)
    if basis_rep == "momentum":
        mat = sp.diags(vals.astype(complex)).tocsr()
        return HermitianOperator(mat, "one_photon", 0, label=f"{sf.kind}(|k|)", meta={"rep": basis_rep})
    W = grid.dft_matrix()
    dense = (W * vals) @ W.conj().T
    return HermitianOperator(hermitian_insert(dense), "one_photon", 0, label=f"{sf.kind}(|y|)",
                             meta={"rep": basis_rep})


def position_operator(grid: PhotonGrid, axis: int = 0) -> np.ndarray:
    """Dense ``y_axis`` in the momentum basis (one polarisation block)."""
    W = grid.dft_matrix()[:: grid.polarizations, :: grid.polarizations]
    y = grid.y_points[:, axis]
    return (W * y) @ W.conj().T


def hardy_ratio(grid: PhotonGrid, s: float, u: np.ndarray) -> float:
    """``|| |k|^-s u || / || |y|^s u ||`` for a momentum-basis one-photon vector ``u``."""
    limit = 1.5 if grid.dim == 3 else 0.5
    if not 0 <= s < limit:
        raise GridError(f"Hardy exponent must lie in [0, {limit}) for dim={grid.dim}, got {s}")
    u = np.asarray(u, dtype=complex)
    num = np.linalg.norm(grid.mode_omega ** (-s) * u)
    den = np.linalg.norm(grid.mode_y_radius**s * grid.to_position(u))
    if den == 0.0:
        raise ZeroDivisionError("|| |y|^s u || vanishes; u must be nonzero")
    return float(num / den)


def gaussian_packet(grid: PhotonGrid, width: float, center=None, momentum=None, polarization: int = 0) -> np.ndarray:
    """Normalised Gaussian one-photon packet given in position space, returned in the momentum basis."""
    y = grid.y_points
    center = np.zeros(grid.dim) if center is None else np.asarray(center, dtype=float)
    momentum = np.zeros(grid.dim) if momentum is None else np.asarray(momentum, dtype=float)
    amp = np.exp(-np.sum((y - center) ** 2, axis=1) / (2 * width**2) + 1j * (y @ momentum))
    pos = np.zeros((grid.n_momenta, grid.polarizations), dtype=complex)
    pos[:, polarization] = amp
    vec = grid.to_momentum(pos.ravel())
    return vec / np.linalg.norm(vec)


def algebraic_packet(grid: PhotonGrid, width: float, power: float = 2.0, polarization: int = 0) -> np.ndarray:
    """Packet ``<y/width>^-power`` centred at the origin; its outside mass decays algebraically."""
    r = np.linalg.norm(grid.y_points, axis=1) / width
    pos = np.zeros((grid.n_momenta, grid.polarizations), dtype=complex)
    pos[:, polarization] = (1.0 + r * r) ** (-0.5 * power)
    vec = grid.to_momentum(pos.ravel())
    return vec / np.linalg.norm(vec)
