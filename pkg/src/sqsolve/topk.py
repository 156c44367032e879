"""Top-k-sum operator and the order-structure bookkeeping built on it.

Everything downstream (projection, generalized Jacobians, Newton systems)
is phrased in terms of a vector's nonincreasing rearrangement and the
index pair ``(k0, k1)`` that brackets the block of entries tied with the
k-th largest value.  Indices here are 0-based: ``alpha = [0, k0)``,
``beta = [k0, k1)``, ``gamma = [k1, m)``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SortedView",
    "IndexPair",
    "Partition",
    "topk_sum",
    "sort_desc",
    "partial_sort_desc",
    "partial_values_desc",
    "partition_of",
]


@dataclass(frozen=True)
class SortedView:
    """A vector rearranged into nonincreasing order.

    ``values[:sorted_upto]`` holds the ``sorted_upto`` largest entries in
    nonincreasing order; any tail beyond that is unordered but bounded
    above by ``values[sorted_upto - 1]``.  ``perm`` maps back to the
    original vector: ``values == x[perm]``.  Ties are broken by original
    index, so the view is deterministic.
    """

    perm: np.ndarray
    values: np.ndarray
    sorted_upto: int
    tail_max: float

    @property
    def fully_sorted(self) -> bool:
        return self.sorted_upto >= self.values.size


@dataclass(frozen=True)
class IndexPair:
    """Boundaries of the tie block around the k-th largest sorted entry.

    ``k0`` entries are strictly greater than the k-th largest value and
    ``k1`` is the last (1-based) position holding that value, so
    ``0 <= k0 <= k-1`` and ``k <= k1 <= m``.
    """

    k0: int
    k1: int


@dataclass(frozen=True)
class Partition:
    """Index ranges (alpha, beta, gamma) induced by an :class:`IndexPair`."""

    k0: int
    k1: int
    m: int

    @property
    def alpha(self) -> range:
        return range(0, self.k0)

    @property
    def beta(self) -> range:
        return range(self.k0, self.k1)

    @property
    def gamma(self) -> range:
        return range(self.k1, self.m)


def topk_sum(x, k: int) -> float:
    """Sum of the ``k`` largest entries of ``x``.

    Uses a binary max-heap: O(m) construction plus k pops at O(log m)
    each, so the cost is O(m + k log m) and no full sort is performed.
    """
    v = np.ascontiguousarray(x, dtype=float)
    m = v.size
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    heap = (-v).tolist()
    heapq.heapify(heap)
    top = np.fromiter((-heapq.heappop(heap) for _ in range(k)), dtype=float, count=k)
    return float(np.sum(top))


def sort_desc(x) -> SortedView:
    """Stable nonincreasing sort; ties keep their original order."""
    v = np.ascontiguousarray(x, dtype=float)
    perm = np.argsort(-v, kind="stable")
    return SortedView(perm=perm, values=v[perm], sorted_upto=v.size, tail_max=-np.inf)


def partial_sort_desc(x, top: int) -> SortedView:
    """Place the ``top`` largest entries first, sorted; leave the rest unordered.

    The prefix is tie-broken by original index so it matches the prefix of
    :func:`sort_desc` exactly.  ``tail_max`` records the largest value left
    in the unsorted tail, which is what a caller needs to certify that a
    prefix was large enough.
    """
    v = np.ascontiguousarray(x, dtype=float)
    m = v.size
    if not 1 <= top <= m:
        raise ValueError(f"top must be in [1, {m}], got {top}")
    if top >= m:
        return sort_desc(v)
    part = np.argpartition(-v, top - 1)
    head = part[:top]
    head = head[np.lexsort((head, -v[head]))]
    perm = np.concatenate([head, part[top:]])
    values = v[perm]
    return SortedView(
        perm=perm,
        values=values,
        sorted_upto=top,
        tail_max=float(values[top:].max()),
    )


def partial_values_desc(x, top: int) -> tuple[np.ndarray, float]:
    """The ``top`` largest values in nonincreasing order, plus the tail max.

    Value-only counterpart of :func:`partial_sort_desc` for callers that do
    not need the permutation; roughly an order of magnitude faster at scale.
    """
    v = np.ascontiguousarray(x, dtype=float)
    m = v.size
    if not 1 <= top <= m:
        raise ValueError(f"top must be in [1, {m}], got {top}")
    if top >= m:
        w = np.sort(v)[::-1]
        return np.ascontiguousarray(w), -np.inf
    part = np.partition(v, m - top)
    head = part[m - top:]
    head[::-1].sort()
    return head, float(part[:m - top].max())


def partition_of(values, k: int, rtol: float = 0.0) -> tuple[IndexPair, Partition]:
    """Index pair and partition of a sorted (nonincreasing) vector at level ``k``.

    Equality with the k-th largest value is exact by default; ``rtol``
    widens the tie test to ``|v - v_k| <= rtol * max(1, |v_k|)`` for
    robustness experiments.
    """
    v = np.asarray(values, dtype=float)
    m = v.size
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    vk = v[k - 1]
    tol = rtol * max(1.0, abs(vk)) if rtol else 0.0
    k0 = int(np.count_nonzero(v > vk + tol))
    k1 = m - int(np.count_nonzero(v < vk - tol))
    return IndexPair(k0, k1), Partition(k0, k1, m)
