"""1D Fermi-Hubbard chain and the staggered quench operators.

Energies are in units of the hopping J and times in units of 1/J.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .fock import FockBasis, SparseOperator, hopping_matrix, mode_index, weighted_number_operator


class Boundary(str, Enum):
    OPEN = "open"
    PERIODIC = "periodic"


class StaggeredKind(str, Enum):
    PLUS = "plus"  # staggered magnetization
    MINUS = "minus"  # staggered density


@dataclass(frozen=True)
class HubbardParams:
    L: int
    U: float
    J: float = 1.0
    boundary: Boundary = Boundary.OPEN

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("Hubbard chain needs L >= 2")
        if not self.J > 0:
            raise ValueError("hopping J must be positive")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    def bonds(self) -> list[tuple[int, int]]:
        bonds = [(x, x + 1) for x in range(self.L - 1)]
        # L = 2 periodic would double the single bond
        if self.boundary is Boundary.PERIODIC and self.L > 2:
            bonds.append((self.L - 1, 0))
        return bonds


def _check_basis(L: int, basis: FockBasis):
    if basis.n_modes != 2 * L:
        raise ValueError(f"basis has {basis.n_modes} modes, chain needs {2 * L}")


def build_hubbard(p: HubbardParams, basis: FockBasis) -> SparseOperator:
    """``H0 = -J sum (c+_{x,s} c_{x+1,s} + h.c.) + U sum n_{x,up} n_{x,down}``."""
    _check_basis(p.L, basis)
    H = sp.csr_matrix((basis.dim, basis.dim))
    for x, y in p.bonds():
        for s in (0, 1):
            a, b = mode_index(x, s), mode_index(y, s)
            hop = hopping_matrix(a, b, basis)
            H = H - p.J * (hop + hop.T)
    occ = basis.occupations()
    double = np.sum(occ[:, 0::2] * occ[:, 1::2], axis=1)
    H = H + sp.diags(p.U * double.astype(float))
    return SparseOperator(basis, H.tocsr(), hermitian=True)


def staggered_weights(kind: StaggeredKind | str, L: int) -> np.ndarray:
    """Mode weights of ``O_pm = sum_x (-1)^x (n_{x,up} -+ n_{x,down})``."""
    kind = StaggeredKind(kind)
    down = -1.0 if kind is StaggeredKind.PLUS else 1.0
    w = np.empty(2 * L)
    for x in range(L):
        phase = 1.0 if x % 2 == 0 else -1.0
        w[mode_index(x, 0)] = phase
        w[mode_index(x, 1)] = down * phase
    return w


def staggered_operator(kind: StaggeredKind | str, L: int, basis: FockBasis) -> SparseOperator:
    _check_basis(L, basis)
    return weighted_number_operator(staggered_weights(kind, L), basis)


def quench_hamiltonian(H0: SparseOperator, O: SparseOperator, q: float) -> SparseOperator:
    """``H0 - q O``."""
    if H0.basis != O.basis:
        raise ValueError("H0 and O live on different bases")
    return SparseOperator(H0.basis, H0.matrix - q * O.matrix, hermitian=H0.hermitian and O.hermitian)


def free_fermion_levels(L: int, boundary: Boundary | str = Boundary.OPEN, J: float = 1.0) -> np.ndarray:
    """Single-particle energies of the hopping chain, ascending."""
    boundary = Boundary(boundary)
    h = np.zeros((L, L))
    for x in range(L - 1):
        h[x, x + 1] = h[x + 1, x] = -J
    if boundary is Boundary.PERIODIC and L > 2:
        h[0, L - 1] = h[L - 1, 0] = -J
    return np.linalg.eigvalsh(h)
