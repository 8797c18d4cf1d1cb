"""Fermionic Fock space on occupation bitmasks.

Modes are labelled ``m = 2*x + sigma`` (site x, spin 0=up, 1=down).  The
Jordan-Wigner sign of ``c_m`` or ``c+_m`` counts occupied modes with a lower
index.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

HERMITIAN_TOL = 1e-12


def mode_index(x: int, spin: int) -> int:
    return 2 * x + spin


def mode_site_spin(m: int) -> tuple[int, int]:
    return divmod(m, 2)


def _sign_below(m: int, occ: int) -> int:
    return -1 if bin(occ & ((1 << m) - 1)).count("1") & 1 else 1


def apply_creation(m: int, occ: int):
    """``c+_m |occ>`` as ``(new_occ, sign)``, or None if mode m is occupied."""
    if (occ >> m) & 1:
        return None
    return occ | (1 << m), _sign_below(m, occ)


def apply_annihilation(m: int, occ: int):
    """``c_m |occ>`` as ``(new_occ, sign)``, or None if mode m is empty."""
    if not (occ >> m) & 1:
        return None
    return occ & ~(1 << m), _sign_below(m, occ)


def popcount(occ: int) -> int:
    return bin(occ).count("1")


@dataclass(frozen=True)
class SymmetrySector:
    L: int
    n_up: int
    n_down: int

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("need at least one site")
        for n in (self.n_up, self.n_down):
            if not 0 <= n <= self.L:
                raise ValueError(f"particle numbers must lie in [0, L={self.L}]")

    @property
    def n_particles(self) -> int:
        return self.n_up + self.n_down

    @classmethod
    def half_filling(cls, L: int) -> "SymmetrySector":
        if L % 2:
            raise ValueError("half filling at zero magnetization needs even L")
        return cls(L, L // 2, L // 2)


class FockBasis:
    """Ordered list of occupation bitmasks (ascending) with inverse lookup."""

    def __init__(self, n_modes: int, states, sector: SymmetrySector | None = None):
        self.n_modes = int(n_modes)
        self.states = np.array(sorted(int(s) for s in states), dtype=np.int64)
        self.sector = sector
        self.index = {int(s): i for i, s in enumerate(self.states)}
        if len(self.index) != len(self.states):
            raise ValueError("duplicate basis states")

    @property
    def dim(self) -> int:
        return len(self.states)

    def lookup(self, occ: int):
        return self.index.get(int(occ))

    def occupations(self) -> np.ndarray:
        """Occupation table of shape (dim, n_modes)."""
        bits = np.arange(self.n_modes, dtype=np.int64)
        return ((self.states[:, None] >> bits) & 1).astype(np.int8)

    def __eq__(self, other):
        return (
            isinstance(other, FockBasis)
            and self.n_modes == other.n_modes
            and np.array_equal(self.states, other.states)
        )

    def __hash__(self):
        return hash((self.n_modes, self.states.tobytes()))

    def __repr__(self):
        return f"FockBasis(n_modes={self.n_modes}, dim={self.dim}, sector={self.sector})"


# Hubbard sectors are the usual case, so keep the name around.
SectorBasis = FockBasis


def build_sector_basis(L: int, n_up: int, n_down: int) -> FockBasis:
    """All states of L sites with fixed up- and down-spin particle numbers."""
    sector = SymmetrySector(L, n_up, n_down)
    ups = [sum(1 << (2 * x) for x in c) for c in combinations(range(L), n_up)]
    downs = [sum(1 << (2 * x + 1) for x in c) for c in combinations(range(L), n_down)]
    basis = FockBasis(2 * L, (u | d for u in ups for d in downs), sector)
    assert basis.dim == comb(L, n_up) * comb(L, n_down)
    return basis


def build_number_basis(n_modes: int, N: int | None = None) -> FockBasis:
    """Fock basis over ``n_modes`` modes, optionally restricted to N particles."""
    if N is None:
        return FockBasis(n_modes, range(1 << n_modes))
    if not 0 <= N <= n_modes:
        raise ValueError("particle number out of range")
    return FockBasis(n_modes, (sum(1 << m for m in c) for c in combinations(range(n_modes), N)))


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Operator matrix on a fixed basis (CSR, complex or real)."""

    basis: FockBasis
    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        mat = sp.csr_matrix(self.matrix)
        if mat.shape != (self.basis.dim, self.basis.dim):
            raise ValueError("matrix shape does not match basis dimension")
        object.__setattr__(self, "matrix", mat)
        if self.hermitian:
            diff = mat - mat.conj().T
            if diff.nnz and np.max(np.abs(diff.data)) > HERMITIAN_TOL:
                raise ValueError("operator flagged hermitian but is not")

    @property
    def dim(self) -> int:
        return self.basis.dim

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def is_diagonal(self) -> bool:
        coo = self.matrix.tocoo()
        return bool(np.all(coo.row == coo.col))

    def entries(self):
        """Row, column and value arrays of the stored non-zeros."""
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def _same_basis(self, other: "SparseOperator"):
        if self.basis != other.basis:
            raise ValueError("operators live on different bases")

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        self._same_basis(other)
        return SparseOperator(self.basis, self.matrix + other.matrix, self.hermitian and other.hermitian)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        self._same_basis(other)
        return SparseOperator(self.basis, self.matrix - other.matrix, self.hermitian and other.hermitian)

    def scale(self, c: float) -> "SparseOperator":
        return SparseOperator(self.basis, self.matrix * c, self.hermitian and np.isreal(c))


def weighted_number_operator(w, basis: FockBasis) -> SparseOperator:
    """Diagonal ``sum_m w(m) n_m`` on ``basis``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (basis.n_modes,):
        raise ValueError(f"expected {basis.n_modes} weights, got shape {w.shape}")
    diag = basis.occupations() @ w
    return SparseOperator(basis, sp.diags(diag, format="csr"), hermitian=True)


def ladder_matrix(m: int, basis: FockBasis, dagger: bool, target: FockBasis | None = None) -> sp.csr_matrix:
    """Matrix of ``c+_m`` (dagger) or ``c_m`` from ``basis`` into ``target``."""
    target = basis if target is None else target
    act = apply_creation if dagger else apply_annihilation
    rows, cols, vals = [], [], []
    for j, occ in enumerate(basis.states):
        res = act(m, int(occ))
        if res is None:
            continue
        i = target.lookup(res[0])
        if i is not None:
            rows.append(i)
            cols.append(j)
            vals.append(res[1])
    return sp.csr_matrix((vals, (rows, cols)), shape=(target.dim, basis.dim), dtype=float)


def hopping_matrix(a: int, b: int, basis: FockBasis) -> sp.csr_matrix:
    """Matrix of ``c+_a c_b`` within ``basis`` (number conserving)."""
    rows, cols, vals = [], [], []
    for j, occ in enumerate(basis.states):
        r1 = apply_annihilation(b, int(occ))
        if r1 is None:
            continue
        r2 = apply_creation(a, r1[0])
        if r2 is None:
            continue
        i = basis.lookup(r2[0])
        if i is None:
            raise ValueError("hopping leaves the basis")
        rows.append(i)
        cols.append(j)
        vals.append(r1[1] * r2[1])
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=float)
