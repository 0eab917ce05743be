"""Sparse self-adjoint operator container shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def hermitian_insert(matrix) -> sp.csr_matrix:
    """Exactly Hermitian matrix built from the strict upper triangle and the real diagonal.

    The lower triangle of the input is discarded and replaced by the conjugate of the
    upper one, so the result equals its adjoint bit for bit.
    """
    m = sp.csr_matrix(matrix, dtype=complex)
    upper = sp.triu(m, k=1, format="csr")
    diag = sp.diags(m.diagonal().real.astype(complex))
    out = (upper + upper.conj().T + diag).tocsr()
    out.sum_duplicates()
    out.eliminate_zeros()
    return out


def hermitian_average(matrix) -> sp.csr_matrix:
    """``(X + X^H) / 2``; exact Hermiticity follows from commutativity of float addition."""
    m = sp.csr_matrix(matrix, dtype=complex)
    out = ((m + m.conj().T) * 0.5).tocsr()
    out.sum_duplicates()
    return out


def hermiticity_residual(matrix) -> float:
    m = sp.csr_matrix(matrix)
    diff = m - m.conj().T
    return float(abs(diff).max()) if diff.nnz else 0.0


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Self-adjoint matrix on a truncated space.

    ``space`` is ``"one_photon"``, ``"fock"`` or ``"full"`` (particle x Fock);
    ``sector_coupling`` is the largest photon-number change a single application
    can produce (``None`` when the notion does not apply).
    """

    matrix: sp.csr_matrix
    space: str
    sector_coupling: int | None = 0
    hermitian: bool = True
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "matrix", sp.csr_matrix(self.matrix, dtype=complex))

    @classmethod
    def from_matrix(cls, matrix, space: str, sector_coupling: int | None = 0, label: str = "", **meta):
        return cls(hermitian_insert(matrix), space, sector_coupling, True, label, dict(meta))

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other):
        if isinstance(other, HermitianOperator):
            return self.matrix @ other.matrix
        return self.matrix @ other

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def adjoint(self) -> "HermitianOperator":
        return HermitianOperator(self.matrix.conj().T.tocsr(), self.space, self.sector_coupling,
                                 self.hermitian, self.label, dict(self.meta))

    def hermiticity_residual(self) -> float:
        return hermiticity_residual(self.matrix)

    def export_coo(self, path, header: dict | None = None) -> None:
        """Write ``row col re im`` per line with 17 significant digits.

        ``header`` (the basis manifest) goes into a sibling ``.json`` file.
        """
        from lightcone.io import atomic_write_text, write_json

        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [
            f"{r} {c} {v.real:.17g} {v.imag:.17g}"
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order])
        ]
        path = Path(path)
        atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
        if header is not None:
            write_json(path.with_suffix(path.suffix + ".json"), header)


def load_coo(path, dim: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        r, c, re, im = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(re) + 1j * float(im))
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex)
