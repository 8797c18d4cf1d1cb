"""QFI bounds for k-producible fermionic mode states.

For an operator ``O = sum_m w(m) n_m`` and a k-producible pure state the QFI
splits into a sum of block variances, ``F_Q = 4 sum_j Var(w_j)``.  Each block
variance is capped by Popoviciu's inequality, and the worst case over all
k-partitions (and, at fixed particle number, over the block occupations)
gives the thresholds used for entanglement-depth certification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .fock import FockBasis, apply_creation, build_number_basis

Block = tuple[int, ...]


@dataclass(frozen=True)
class Partition:
    """Disjoint blocks of mode indices covering ``range(n_modes)``."""

    blocks: tuple[Block, ...]
    n_modes: int

    def __post_init__(self):
        seen = sorted(m for b in self.blocks for m in b)
        if seen != list(range(self.n_modes)):
            raise ValueError("blocks must be disjoint and cover every mode")
        if any(len(b) == 0 for b in self.blocks):
            raise ValueError("empty block in partition")

    @property
    def k(self) -> int:
        return max(len(b) for b in self.blocks)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[int]], n_modes: int | None = None):
        blocks = tuple(tuple(int(m) for m in b) for b in blocks if len(b))
        if n_modes is None:
            n_modes = sum(len(b) for b in blocks)
        return cls(blocks, n_modes)


@dataclass(frozen=True)
class BoundResult:
    k: int
    value: float
    closed_form: float
    partition: Partition
    N: int | None = None
    occupations: tuple[int, ...] | None = None


@dataclass(frozen=True)
class CertificationResult:
    fq: float
    thresholds: dict[int, float] = field(repr=False)
    k_max_refuted: int
    depth: int


def _weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1D array")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    return w


def _check_k(k: int, n_modes: int):
    if not 1 <= k <= n_modes:
        raise ValueError(f"k must lie in [1, {n_modes}], got {k}")


def _check_n(N: int, n_modes: int):
    if not 0 <= N <= n_modes:
        raise ValueError(f"N must lie in [0, {n_modes}], got {N}")


def dk_decomposition(n_modes: int, k: int) -> tuple[int, int]:
    """Return ``(d, r)`` with ``n_modes = d*k + r`` and ``0 <= r < k``."""
    return divmod(n_modes, k)


def block_range(block: Block, w: np.ndarray, n_occupied: int | None = None) -> float:
    """Spread ``max w_j - min w_j`` of a block's weighted occupation.

    With ``n_occupied=None`` occupations are unrestricted, otherwise the block
    holds exactly ``n_occupied`` fermions.
    """
    vals = np.sort(w[list(block)])
    if n_occupied is None:
        return float(np.sum(np.abs(vals)))
    if not 0 <= n_occupied <= len(vals):
        raise ValueError("block occupation out of range")
    if n_occupied == 0:
        return 0.0
    return float(vals[-n_occupied:].sum() - vals[:n_occupied].sum())


def popoviciu_block_bound(partition: Partition, w, occupations: Sequence[int] | None = None) -> float:
    """QFI bound ``sum_j (max w_j - min w_j)^2`` for a fixed partition."""
    w = _weights(w)
    if len(w) != partition.n_modes:
        raise ValueError("weight length does not match partition")
    if occupations is None:
        return float(sum(block_range(b, w) ** 2 for b in partition.blocks))
    if len(occupations) != len(partition.blocks):
        raise ValueError("one occupation per block required")
    return float(sum(block_range(b, w, n) ** 2 for b, n in zip(partition.blocks, occupations)))


def optimal_partition_generic(w, k: int) -> Partition:
    """Chunk modes by descending ``|w|`` into blocks of size k (ties by index)."""
    w = _weights(w)
    _check_k(k, len(w))
    order = sorted(range(len(w)), key=lambda m: (-abs(w[m]), m))
    blocks = [tuple(order[i:i + k]) for i in range(0, len(w), k)]
    return Partition.from_blocks(blocks, len(w))


def bound_generic(w, k: int) -> BoundResult:
    w = _weights(w)
    part = optimal_partition_generic(w, k)
    d, r = dk_decomposition(len(w), k)
    return BoundResult(
        k=k,
        value=popoviciu_block_bound(part, w),
        closed_form=float((d * k * k + r * r) * np.max(np.abs(w)) ** 2),
        partition=part,
    )


def optimal_partition_fixedN(w, k: int, N: int | None = None) -> Partition:
    """Concentrate the highest and lowest weights in the same blocks.

    Even k: block j holds the next k/2 highest and k/2 lowest unassigned modes
    and the leftover middle modes form the last block; this does not depend
    on N.  Odd k: a block of size k holds at most (k-1)/2 high/low pairs, so
    the ``min(N, |M|-N)`` most extreme pairs are chunked (k-1)/2 at a time and
    the remaining modes go into filler blocks that carry no spread.  N
    defaults to half filling.
    """
    w = _weights(w)
    n = len(w)
    _check_k(k, n)
    order = sorted(range(n), key=lambda m: (-w[m], m))
    h = k // 2
    if k % 2 == 0:
        d, _ = dk_decomposition(n, k)
        n_pairs = d * h
    else:
        N = n // 2 if N is None else N
        _check_n(N, n)
        n_pairs = min(N, n - N) if h else 0
    blocks = []
    for start in range(0, n_pairs, max(h, 1)):
        stop = min(start + h, n_pairs)
        blocks.append(tuple(order[start:stop]) + tuple(order[n - stop:n - start][::-1]))
    middle = order[n_pairs:n - n_pairs]
    if k % 2 == 0:
        if middle:
            blocks.append(tuple(middle))
    else:
        blocks.extend(tuple(middle[i:i + k]) for i in range(0, len(middle), k))
    return Partition.from_blocks(blocks, n)


def allocate_occupations(partition: Partition, N: int) -> tuple[int, ...]:
    """Distribute N fermions over the blocks, half-filling early blocks first.

    A forward pass gives each block up to half its size; a backward pass then
    places the remaining fermions, starting from the last block.
    """
    _check_n(N, partition.n_modes)
    sizes = [len(b) for b in partition.blocks]
    occ = [0] * len(sizes)
    left = N
    for j, size in enumerate(sizes):
        take = min(size // 2, left)
        occ[j] += take
        left -= take
    for j in reversed(range(len(sizes))):
        if left == 0:
            break
        # second pass may fill the block completely (odd sizes included)
        take = min(sizes[j] - occ[j], left)
        occ[j] += take
        left -= take
    assert left == 0
    return tuple(occ)


def bound_fixedN(w, k: int, N: int) -> BoundResult:
    w = _weights(w)
    _check_n(N, len(w))
    part = optimal_partition_fixedN(w, k, N)
    occ = allocate_occupations(part, N)
    d, r = dk_decomposition(len(w), k)
    spread = float(np.max(w) - np.min(w))
    return BoundResult(
        k=k,
        value=popoviciu_block_bound(part, w, occ),
        closed_form=(d * k * k + r * r) / 4.0 * spread ** 2,
        partition=part,
        N=N,
        occupations=occ,
    )


def closed_form_threshold(n_modes: int, k: int) -> float:
    """``d k^2 + r^2``: the k-producibility threshold for unit-spread weights."""
    d, r = dk_decomposition(n_modes, k)
    return float(d * k * k + r * r)


def certify_depth(fq: float, w, N: int | None = None, closed_form: bool = False) -> CertificationResult:
    """Largest k whose bound is strictly exceeded by ``fq``; depth is that k + 1.

    Thresholds are the explicit optimal-partition values unless
    ``closed_form`` is set.
    """
    if fq < 0:
        raise ValueError("F_Q must be non-negative")
    w = _weights(w)
    thresholds = {}
    for k in range(1, len(w) + 1):
        res = bound_fixedN(w, k, N) if N is not None else bound_generic(w, k)
        thresholds[k] = res.closed_form if closed_form else res.value
    refuted = [k for k, v in thresholds.items() if fq > v]
    k_max = max(refuted) if refuted else 0
    return CertificationResult(fq=float(fq), thresholds=thresholds, k_max_refuted=k_max, depth=k_max + 1)


# --- brute-force oracles -------------------------------------------------


def set_partitions(n: int, k: int):
    """Yield every partition of ``range(n)`` into blocks of size at most k."""

    def rec(i, blocks):
        if i == n:
            yield tuple(tuple(b) for b in blocks)
            return
        for b in blocks:
            if len(b) < k:
                b.append(i)
                yield from rec(i + 1, blocks)
                b.pop()
        blocks.append([i])
        yield from rec(i + 1, blocks)
        blocks.pop()

    yield from rec(0, [])


def _best_allocation(ranges_by_block: list[list[float]], N: int) -> float:
    # knapsack over blocks: best[n] = max sum of squared spreads using n fermions
    best = {0: 0.0}
    for spreads in ranges_by_block:
        nxt: dict[int, float] = {}
        for used, val in best.items():
            for nj, s in enumerate(spreads):
                tot = used + nj
                if tot > N:
                    break
                cand = val + s * s
                if cand > nxt.get(tot, -1.0):
                    nxt[tot] = cand
        best = nxt
    return best.get(N, -np.inf)


def brute_force_bound(w, k: int, N: int | None = None) -> float:
    """Exhaustive maximum of the Popoviciu bound over all k-partitions.

    At fixed N the maximum also runs over every occupation allocation.
    """
    w = _weights(w)
    n = len(w)
    _check_k(k, n)
    if N is not None:
        _check_n(N, n)
    best = -np.inf
    for blocks in set_partitions(n, k):
        if N is None:
            val = sum(block_range(b, w) ** 2 for b in blocks)
        else:
            val = _best_allocation([[block_range(b, w, nj) for nj in range(len(b) + 1)] for b in blocks], N)
        best = max(best, val)
    return float(best)


# --- k-producible states -------------------------------------------------


def _block_pattern_mask(block: Block, pattern: int) -> list[int]:
    return [m for i, m in enumerate(block) if (pattern >> i) & 1]


def kproducible_state(
    partition: Partition,
    amplitudes: Sequence[Mapping[int, complex]],
    basis: FockBasis | None = None,
) -> np.ndarray:
    """Build ``C*_1 C*_2 ... C*_P |vac>`` on the Fock space of the partition.

    ``amplitudes[j]`` maps an occupation pattern of block j (bit i set means
    the i-th mode of the block is occupied) to its amplitude.  Within a block,
    creation operators are applied in ascending block position order.  The
    result is expressed in ``basis`` (default: the whole Fock space).
    """
    if len(amplitudes) != len(partition.blocks):
        raise ValueError("one amplitude table per block required")
    for phi in amplitudes:
        norm = sum(abs(a) ** 2 for a in phi.values())
        if abs(norm - 1.0) > 1e-8:
            raise ValueError("block amplitudes must be normalized")
    if basis is None:
        basis = build_number_basis(partition.n_modes)
    state = {0: 1.0 + 0j}
    # C*_P acts first on the vacuum
    for block, phi in zip(reversed(partition.blocks), reversed(list(amplitudes))):
        new: dict[int, complex] = {}
        for pattern, amp in phi.items():
            if amp == 0:
                continue
            modes = _block_pattern_mask(block, pattern)
            for occ, coeff in state.items():
                cur, sign = occ, 1
                # product c+_{a1} c+_{a2} ... : rightmost factor acts first
                for m in reversed(modes):
                    res = apply_creation(m, cur)
                    if res is None:
                        break
                    cur, s = res
                    sign *= s
                else:
                    new[cur] = new.get(cur, 0) + sign * amp * coeff
        state = new
    vec = np.zeros(basis.dim, dtype=complex)
    for occ, coeff in state.items():
        idx = basis.lookup(occ)
        if idx is None:
            if abs(coeff) > 1e-14:
                raise ValueError("state has weight outside the target basis")
            continue
        vec[idx] += coeff
    return vec


def block_variance_sum(partition: Partition, amplitudes: Sequence[Mapping[int, complex]], w) -> float:
    """``sum_j Var(w_j)`` with ``p_j(eta) = |phi_j(eta)|^2``."""
    w = _weights(w)
    total = 0.0
    for block, phi in zip(partition.blocks, amplitudes):
        p = np.array([abs(a) ** 2 for a in phi.values()])
        vals = np.array([sum(w[m] for m in _block_pattern_mask(block, pat)) for pat in phi])
        mean = p @ vals
        total += float(p @ (vals - mean) ** 2)
    return total


def random_kproducible_amplitudes(
    partition: Partition,
    rng: np.random.Generator,
    occupations: Sequence[int] | None = None,
) -> list[dict[int, complex]]:
    """Random normalized block amplitudes, optionally at fixed block occupations."""
    out = []
    for j, block in enumerate(partition.blocks):
        patterns = range(1 << len(block))
        if occupations is not None:
            patterns = [p for p in patterns if bin(p).count("1") == occupations[j]]
        patterns = list(patterns)
        amps = rng.normal(size=len(patterns)) + 1j * rng.normal(size=len(patterns))
        # sparsify sometimes so extreme patterns get sampled too
        if len(patterns) > 1 and rng.random() < 0.5:
            keep = rng.choice(len(patterns), size=min(2, len(patterns)), replace=False)
            mask = np.zeros(len(patterns), dtype=bool)
            mask[keep] = True
            amps = np.where(mask, amps, 0)
        amps /= np.linalg.norm(amps)
        out.append({p: complex(a) for p, a in zip(patterns, amps)})
    return out


@lru_cache(maxsize=None)
def _compositions(n: int, sizes: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    if not sizes:
        return ((),) if n == 0 else ()
    out = []
    for first in range(min(n, sizes[0]) + 1):
        for rest in _compositions(n - first, sizes[1:]):
            out.append((first,) + rest)
    return tuple(out)


def occupation_allocations(partition: Partition, N: int) -> tuple[tuple[int, ...], ...]:
    """All per-block occupations summing to N."""
    return _compositions(N, tuple(len(b) for b in partition.blocks))
