import functools
from itertools import combinations

import numpy as np
import pytest

from fermiqfi.fock import build_sector_basis
from fermiqfi.model import HubbardParams, build_hubbard, free_fermion_levels, staggered_operator
from fermiqfi.protocol import QuenchSimulator


@functools.lru_cache(maxsize=None)
def hubbard_system(L, U, op="plus", boundary="open"):
    """(basis, H0, O, simulator) for a half-filled chain; cached across tests."""
    basis = build_sector_basis(L, L // 2, L // 2)
    H0 = build_hubbard(HubbardParams(L, U, boundary=boundary), basis)
    O = staggered_operator(op, L, basis)
    return basis, H0, O, QuenchSimulator(H0, O)


@pytest.fixture
def system():
    return hubbard_system


def free_fermion_qfi(L, T, op="plus", boundary="open", n_up=None, n_down=None):
    """QFI of a U=0 chain built from single-particle orbitals only.

    Many-body eigenstates are Slater determinants per spin species.  The
    staggered operator is one-body, so it connects determinants that differ
    by moving one particle between orbitals of the same spin.
    """
    n_up = L // 2 if n_up is None else n_up
    n_down = L // 2 if n_down is None else n_down
    h = np.zeros((L, L))
    for x in range(L - 1):
        h[x, x + 1] = h[x + 1, x] = -1.0
    if boundary == "periodic" and L > 2:
        h[0, L - 1] = h[L - 1, 0] = -1.0
    eps, phi = np.linalg.eigh(h)
    assert np.allclose(eps, free_fermion_levels(L, boundary))
    stag = np.array([(-1.0) ** x for x in range(L)])
    o1 = phi.T @ np.diag(stag) @ phi  # orbital matrix of sum_x (-1)^x n_x
    sign_down = -1.0 if op == "plus" else 1.0

    def dets(n):
        return [frozenset(c) for c in combinations(range(L), n)]

    ups, downs = dets(n_up), dets(n_down)
    states = [(u, d) for u in ups for d in downs]
    energy = np.array([sum(eps[i] for i in u) + sum(eps[i] for i in d) for u, d in states])
    p = np.exp(-(energy - energy.min()) / T)
    p /= p.sum()
    index = {s: i for i, s in enumerate(states)}
    total = 0.0
    for i, (u, d) in enumerate(states):
        for spin, occ, other in ((0, u, d), (1, d, u)):
            coef = 1.0 if spin == 0 else sign_down
            for a in occ:
                for b in range(L):
                    if b in occ or abs(o1[b, a]) < 1e-15:
                        continue
                    new = (occ - {a}) | {b}
                    j = index[(new, other) if spin == 0 else (other, new)]
                    amp2 = (coef * o1[b, a]) ** 2
                    if p[i] + p[j] > 0:
                        total += 2.0 * (p[i] - p[j]) ** 2 / (p[i] + p[j]) * amp2
    return total


def random_kpartition(n, k, rng):
    """Random partition of range(n) into blocks of size at most k."""
    from fermiqfi.bounds import Partition

    perm = [int(m) for m in rng.permutation(n)]
    blocks, i = [], 0
    while i < n:
        size = int(rng.integers(1, k + 1))
        blocks.append(tuple(perm[i:i + size]))
        i += size
    return Partition.from_blocks(blocks, n)


def sample_kproducible(w, k, N, rng, partition=None):
    """Random k-producible state at particle number N.

    Returns ``(qfi, 4 * sum_j Var(w_j))``: the first from the state vector,
    the second from the block amplitudes alone.
    """
    from fermiqfi.bounds import (
        block_variance_sum,
        kproducible_state,
        occupation_allocations,
        random_kproducible_amplitudes,
    )

    n = len(w)
    part = random_kpartition(n, k, rng) if partition is None else partition
    allocs = occupation_allocations(part, N)
    occ = allocs[int(rng.integers(len(allocs)))]
    amps = random_kproducible_amplitudes(part, rng, occ)
    basis = _number_basis(n, N)
    vec = kproducible_state(part, amps, basis)
    p = np.abs(vec) ** 2
    vals = basis.occupations() @ np.asarray(w, dtype=float)
    mean = p @ vals
    return 4.0 * float(p @ (vals - mean) ** 2), 4.0 * block_variance_sum(part, amps, w)


@functools.lru_cache(maxsize=None)
def _number_basis(n, N):
    from fermiqfi.fock import build_number_basis

    return build_number_basis(n, N)
