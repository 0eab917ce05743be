"""Dense reference operators on explicit symmetrised tensor powers.

Independent of the lowering-table construction in :mod:`lightcone.fock`: every
Fock basis state is embedded as a normalised symmetric tensor, operators are
built slot by slot on the full tensor space, then compressed.  Only usable for
tiny spaces (total tensor dimension ``sum_n M^n``).
"""

from __future__ import annotations

import itertools
from math import factorial

import numpy as np

from lightcone.fock import FockBasis

MAX_TENSOR_DIM = 5000


class TensorOracle:
    def __init__(self, basis: FockBasis):
        M, n_max = basis.n_modes, basis.n_max
        self.M = M
        self.n_max = n_max
        self.offsets = np.cumsum([0] + [M**n for n in range(n_max + 1)])
        self.tdim = int(self.offsets[-1])
        if self.tdim > MAX_TENSOR_DIM:
            raise ValueError(f"tensor space of dimension {self.tdim} is too large for the dense oracle")
        S = np.zeros((self.tdim, basis.dim))
        for col, state in enumerate(basis.states):
            n = len(state)
            counts = np.bincount(np.array(state, dtype=int), minlength=M) if n else np.zeros(M, int)
            norm = np.sqrt(factorial(n) * np.prod([factorial(int(c)) for c in counts]))
            for perm in itertools.permutations(state):
                S[self._flat(perm), col] += 1.0 / norm
        self.S = S

    def _flat(self, idx) -> int:
        n = len(idx)
        pos = 0
        for j in idx:
            pos = pos * self.M + j
        return int(self.offsets[n] + pos)

    def _block(self, n: int) -> slice:
        return slice(int(self.offsets[n]), int(self.offsets[n + 1]))

    def tensor_annihilator(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=complex)
        A = np.zeros((self.tdim, self.tdim), dtype=complex)
        for n in range(1, self.n_max + 1):
            rest = self.M ** (n - 1)
            # first slot contracted against conj(f): psi(j, rest) -> sum_j conj f_j psi(j, rest)
            contraction = np.kron(np.conj(f)[None, :], np.eye(rest))
            A[self._block(n - 1), self._block(n)] = np.sqrt(n) * contraction
        return A

    def tensor_dgamma(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=complex)
        D = np.zeros((self.tdim, self.tdim), dtype=complex)
        for n in range(1, self.n_max + 1):
            blk = np.zeros((self.M**n, self.M**n), dtype=complex)
            for slot in range(n):
                blk += np.kron(np.kron(np.eye(self.M**slot), t), np.eye(self.M ** (n - slot - 1)))
            D[self._block(n), self._block(n)] = blk
        return D

    def compress(self, T: np.ndarray) -> np.ndarray:
        return self.S.T @ T @ self.S

    def annihilator(self, f) -> np.ndarray:
        return self.compress(self.tensor_annihilator(f))

    def creator(self, f) -> np.ndarray:
        return self.compress(self.tensor_annihilator(f).conj().T)

    def dgamma(self, t) -> np.ndarray:
        return self.compress(self.tensor_dgamma(t))

    def field(self, h) -> np.ndarray:
        A = self.tensor_annihilator(h)
        return self.compress((A + A.conj().T) / np.sqrt(2.0))

    def isometry_defect(self) -> float:
        return float(np.abs(self.S.T @ self.S - np.eye(self.S.shape[1])).max())
