"""Euclidean projection onto the nonpositive top-k-sum set and onto boxes.

The top-k-sum set ``{y : sum of k largest entries of y <= 0}`` admits an
exact projection found by identifying the index pair ``(k0, k1)`` of the
projected point.  For a candidate pair the two multipliers ``(lam, theta)``
solve a 2x2 linear system in prefix sums of the sorted input; the pair is
accepted when every optimality inequality holds.  Candidates are scanned
outward from ``(k-1, k)``, the pattern that terminates fastest when the
tie block stays near ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timing import Timers
from .topk import (
    IndexPair,
    Partition,
    SortedView,
    partial_sort_desc,
    partial_values_desc,
    sort_desc,
)

__all__ = [
    "Box",
    "TopKProjection",
    "ValueProjection",
    "project_topk",
    "project_topk_with_hint",
    "project_topk_values",
    "project_box",
    "next_hint",
]


@dataclass(frozen=True)
class Box:
    """Coordinate bounds ``lower <= x <= upper`` with +-inf allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have matching shapes")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x) -> np.ndarray:
        return (x >= self.lower) & (x <= self.upper)


def project_box(x, box: Box) -> np.ndarray:
    """Componentwise clamp of ``x`` to the box."""
    return np.clip(np.asarray(x, dtype=float), box.lower, box.upper)


@dataclass
class TopKProjection:
    """Projection onto ``{y : topk_sum(y, k) <= 0}`` with its certificate.

    ``ybar`` is in the original index order.  ``perm`` is the permutation
    used internally (``y[perm]`` nonincreasing at least through ``k1``).
    ``lambda_bar`` is the scalar constraint multiplier (0 when the input is
    already feasible), ``theta_bar`` the common value of the tied block and
    ``mu_beta`` the implied fractional multipliers on beta, which lie in
    [0, 1] and sum to ``k - k0``.
    """

    ybar: np.ndarray
    k: int
    pair: IndexPair
    lambda_bar: float
    theta_bar: float
    part: Partition
    perm: np.ndarray
    mu_beta: np.ndarray
    topk_value: float
    resorts: int = 0

    @property
    def active(self) -> bool:
        return self.lambda_bar > 0.0


def next_hint(k1: int) -> int:
    """Prefix-size suggestion for the next projection in an iterative caller."""
    return int(np.ceil(1.05 * k1)) + 10


def _ring_candidates(dlo: int, dhi: int, k: int, kmax1: int):
    """Candidate pairs with ring distance in [dlo, dhi), in ring order.

    Distance of ``(k0, k1)`` from ``(k-1, k)`` is ``(k-1-k0) + (k1-k)``;
    ``k1`` is capped at ``kmax1``.
    """
    k0s, k1s = [], []
    for dist in range(dlo, dhi):
        ilo = max(0, dist - (kmax1 - k))
        ihi = min(dist, k - 1)
        if ihi < ilo:
            continue
        i = np.arange(ilo, ihi + 1)
        k0s.append(k - 1 - i)
        k1s.append(k + dist - i)
    if not k0s:
        return None, None
    return np.concatenate(k0s), np.concatenate(k1s)


def _scan_pairs(values: np.ndarray, psums: np.ndarray, k: int, m: int,
                prefix: int, tail_max: float):
    """Search for the optimality-consistent index pair within a sorted prefix.

    Returns ``(k0, k1, lam, theta)`` or ``None`` when no acceptable pair is
    certain from the prefix alone (the caller then grows the prefix).

    The primary search is a monotone pivot from ``(k-1, k)``: the upper
    index only ever decreases and the lower index only ever increases, with
    each move justified by a violated order condition, so it visits at most
    ``m`` candidates and touches only the top ``k1`` sorted values.  The
    landing candidate is validated against the full optimality system; in
    the (unobserved) event that it fails, an exhaustive outward ring scan
    decides instead.  Both the pivot and the fallback read only values
    inside the prefix plus the tail maximum, so a partial-sort run accepts
    exactly the same candidate as a full-sort run, bit for bit.
    """
    hit = _pivot_scan(values, psums, k, m, prefix, tail_max)
    if hit is not None or prefix < m:
        return hit
    return _ring_scan(values, psums, k, m, prefix, tail_max)


def _pair_multipliers(k, k0s, k1s, psums):
    k0f = k0s.astype(float)
    k1f = k1s.astype(float)
    rho = k * k - 2.0 * k * k0f + k0f * k1f
    s_a = psums[k0s]
    s_b = psums[k1s] - s_a
    lam = ((k1f - k0f) * s_a + (k - k0f) * s_b) / rho
    theta = (k0f * s_b - (k - k0f) * s_a) / rho
    return lam, theta


def _pivot_scan(values, psums, k, m, prefix, tail_max):
    k0, k1 = k - 1, k
    limit = prefix
    below_at = lambda j: (values[j] if j < limit else (tail_max if j < m else -np.inf))
    for _ in range(2 * m + 4):
        lam, theta = _pair_multipliers(
            k, np.array([k0]), np.array([k1]), psums)
        lam, theta = float(lam[0]), float(theta[0])
        if k0 > 0 and not (values[k0 - 1] - lam > theta):
            k0 = _drop_k0(values, psums, k, k0, k1)
            continue
        if k1 < m and not (theta > below_at(k1)):
            k1_new = _grow_k1(values, psums, k, m, k0, k1, limit, tail_max)
            if k1_new is None:
                return None  # needs values beyond the prefix
            k1 = k1_new
            continue
        break
    else:  # pragma: no cover - the pointers are monotone
        return None
    hit = _check_pairs(values, psums, k, m, limit, tail_max,
                       np.array([k0]), np.array([k1]))
    return hit


def _drop_k0(values, psums, k, k0_cur, k1):
    """Largest k0 below ``k0_cur`` whose top order condition holds."""
    width = 8
    hi = k0_cur
    while hi > 0:
        lo = max(0, hi - width)
        cand = np.arange(hi - 1, lo - 1, -1)
        lam, theta = _pair_multipliers(k, cand, np.full(cand.size, k1), psums)
        above = np.where(cand > 0, values[np.maximum(cand - 1, 0)], np.inf)
        ok = above - lam > theta
        idx = np.flatnonzero(ok)
        if idx.size:
            return int(cand[idx[0]])
        hi, width = lo, width * 4
    return 0


def _grow_k1(values, psums, k, m, k0, k1_cur, limit, tail_max):
    """Smallest k1 above ``k1_cur`` whose bottom order condition holds."""
    width = 8
    lo = k1_cur
    while lo < limit:
        hi = min(limit, lo + width)
        cand = np.arange(lo + 1, hi + 1)
        lam, theta = _pair_multipliers(k, np.full(cand.size, k0), cand, psums)
        below = np.where(cand < limit, values[np.minimum(cand, limit - 1)], tail_max)
        below = np.where(cand >= m, -np.inf, below)
        ok = theta > below
        idx = np.flatnonzero(ok)
        if idx.size:
            return int(cand[idx[0]])
        lo, width = hi, width * 4
    return None if limit < m else m


def _ring_scan(values, psums, k, m, prefix, tail_max):
    dmax = (k - 1) + (prefix - k)
    dlo, width = 0, 8
    while dlo <= dmax:
        dhi = min(dlo + width, dmax + 1)
        k0s, k1s = _ring_candidates(dlo, dhi, k, prefix)
        if k0s is not None:
            hit = _check_pairs(values, psums, k, m, prefix, tail_max, k0s, k1s)
            if hit is not None:
                return hit
        dlo, width = dhi, width * 4
    return None


def _check_pairs(values, psums, k, m, prefix, tail_max, k0s, k1s):
    k0f = k0s.astype(float)
    k1f = k1s.astype(float)
    rho = k * k - 2.0 * k * k0f + k0f * k1f
    s_a = psums[k0s]
    s_b = psums[k1s] - s_a
    lam = ((k1f - k0f) * s_a + (k - k0f) * s_b) / rho
    theta = (k0f * s_b - (k - k0f) * s_a) / rho

    above = np.where(k0s > 0, values[np.maximum(k0s - 1, 0)], np.inf)
    below = np.where(k1s < prefix, values[np.minimum(k1s, prefix - 1)], tail_max)
    below = np.where(k1s >= m, -np.inf, below)

    # the multiplier-bound checks hold with equality at degenerate points,
    # so they get a tiny relative slack; the strict order checks do not
    # (a candidate broken by roundoff there is rescued by the neighboring,
    # mathematically equivalent pair)
    tol = 1e-11 * (1.0 + np.abs(theta) + np.abs(lam))
    ok = (
        (lam > 0.0)
        & (above - lam > theta)
        & (theta > below)
        & (values[k1s - 1] >= theta - tol)
        & (values[k0s] - lam <= theta + tol)
    )
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None
    j = int(idx[0])
    return int(k0s[j]), int(k1s[j]), float(lam[j]), float(theta[j])


def _identity_projection(y: np.ndarray, view: SortedView, k: int, tk: float,
                         resorts: int) -> TopKProjection:
    v = y
    vk = view.values[k - 1]
    m = v.size
    k0 = int(np.count_nonzero(v > vk))
    k1 = m - int(np.count_nonzero(v < vk))
    return TopKProjection(
        ybar=v.copy(),
        k=k,
        pair=IndexPair(k0, k1),
        lambda_bar=0.0,
        theta_bar=float(vk),
        part=Partition(k0, k1, m),
        perm=view.perm,
        mu_beta=np.zeros(k1 - k0),
        topk_value=tk,
        resorts=resorts,
    )


def _assemble(y: np.ndarray, view: SortedView, k: int, k0: int, k1: int,
              lam: float, theta: float, tk: float, resorts: int) -> TopKProjection:
    m = y.size
    out = y.copy()
    perm = view.perm
    if k0 > 0:
        out[perm[:k0]] = view.values[:k0] - lam
    out[perm[k0:k1]] = theta
    # exact in [0, 1]; the clip only strips candidate-check roundoff
    mu_beta = np.clip((view.values[k0:k1] - theta) / lam, 0.0, 1.0)
    return TopKProjection(
        ybar=out,
        k=k,
        pair=IndexPair(k0, k1),
        lambda_bar=lam,
        theta_bar=theta,
        part=Partition(k0, k1, m),
        perm=perm,
        mu_beta=mu_beta,
        topk_value=tk,
        resorts=resorts,
    )


def _project_view(y: np.ndarray, k: int, view: SortedView, resorts: int,
                  timers: Timers | None) -> TopKProjection | None:
    m = y.size
    prefix = view.sorted_upto
    psums = np.empty(prefix + 1)
    psums[0] = 0.0
    np.cumsum(view.values[:prefix], out=psums[1:])
    tk = float(psums[k])
    if tk <= 0.0:
        return _identity_projection(y, view, k, tk, resorts)
    if timers is None:
        hit = _scan_pairs(view.values, psums, k, m, prefix, view.tail_max)
    else:
        with timers.section("projection"):
            hit = _scan_pairs(view.values, psums, k, m, prefix, view.tail_max)
    if hit is None:
        if prefix >= m and tk <= 64.0 * np.finfo(float).eps * m * (1.0 + np.abs(view.values).max()):
            # top-k sum positive only at roundoff level: the input is its
            # own projection to working precision
            return _identity_projection(y, view, k, 0.0, resorts)
        return None
    k0, k1, lam, theta = hit
    return _assemble(y, view, k, k0, k1, lam, theta, tk, resorts)


def _project_full_sum(v: np.ndarray) -> TopKProjection:
    """Closed form for k == m: shift everything by max(mean, 0)."""
    m = v.size
    s = float(np.sum(v))
    view = sort_desc(v)
    if s <= 0.0:
        return _identity_projection(v, view, m, s, 0)
    shift = s / m
    ybar = v - shift
    vmin = float(view.values[-1])
    k0 = int(np.count_nonzero(v > vmin))
    return TopKProjection(
        ybar=ybar,
        k=m,
        pair=IndexPair(k0, m),
        lambda_bar=shift,
        theta_bar=vmin - shift,
        part=Partition(k0, m, m),
        perm=view.perm,
        mu_beta=np.ones(m - k0),
        topk_value=s,
    )


def project_topk(y, k: int, timers: Timers | None = None) -> TopKProjection:
    """Euclidean projection of ``y`` onto ``{v : topk_sum(v, k) <= 0}``.

    Feasible inputs (top-k sum <= 0) are returned unchanged with a zero
    multiplier.  Unsorted inputs are handled by sorting internally and
    mapping the result back through the permutation.  ``k == m`` reduces to
    a closed-form mean shift.
    """
    v = np.ascontiguousarray(y, dtype=float)
    m = v.size
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    if k == m:
        return _project_full_sum(v)
    if timers is None:
        view = sort_desc(v)
    else:
        with timers.section("sort"):
            view = sort_desc(v)
    proj = _project_view(v, k, view, 0, timers)
    if proj is None:
        raise RuntimeError("no optimality-consistent index pair found; "
                           "input must be a finite real vector")
    return proj


def project_topk_with_hint(y, k: int, hint_k1: int,
                           timers: Timers | None = None) -> TopKProjection:
    """Same result as :func:`project_topk` using only a partial sort.

    The top ``hint_k1`` entries are sorted and the index-pair search is
    confined to them; the result is certified by the same optimality
    checks, using the maximum of the unsorted tail as the boundary value.
    When certification fails the prefix grows geometrically
    (``max(2p, p + 16)``, capped at ``m``) and the search repeats, so the
    output is identical to the full-sort path.
    """
    v = np.ascontiguousarray(y, dtype=float)
    m = v.size
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    if not 1 <= hint_k1 <= m:
        raise ValueError(f"hint_k1 must be in [1, {m}], got {hint_k1}")
    if k == m:
        return _project_full_sum(v)
    prefix = max(hint_k1, k)
    resorts = 0
    while True:
        if timers is None:
            view = partial_sort_desc(v, prefix)
        else:
            with timers.section("sort"):
                view = partial_sort_desc(v, prefix)
        proj = _project_view(v, k, view, resorts, timers)
        if proj is not None:
            return proj
        if prefix >= m:
            raise RuntimeError("no optimality-consistent index pair found; "
                               "input must be a finite real vector")
        prefix = min(m, max(2 * prefix, prefix + 16))
        resorts += 1


@dataclass
class ValueProjection:
    """Values-only projection certificate for the solver hot path.

    Everything a subproblem evaluation needs is derivable without the
    sorting permutation: the residual of the input ``v`` against its
    projection is ``clip(v - theta, 0, lam)`` and the projection itself is
    ``v`` minus that.  The optimality system separates the sorted values
    strictly at both block boundaries, so the alpha and beta index sets are
    recoverable from value thresholds alone.  ``prefix`` holds the sorted
    top values through at least ``k1``.
    """

    k: int
    k0: int
    k1: int
    lambda_bar: float
    theta_bar: float
    topk_value: float
    prefix: np.ndarray
    tail_max: float = -np.inf
    resorts: int = 0

    @property
    def active(self) -> bool:
        return self.lambda_bar > 0.0

    def residual(self, v: np.ndarray) -> np.ndarray:
        """v - proj(v), nonnegative, supported on the alpha/beta scenarios."""
        if not self.active:
            return np.zeros_like(v)
        return np.clip(v - self.theta_bar, 0.0, self.lambda_bar)

    def residual_sq(self) -> float:
        if not self.active:
            return 0.0
        beta = self.prefix[self.k0:self.k1] - self.theta_bar
        return self.lambda_bar ** 2 * self.k0 + float(beta @ beta)

    def value_above_beta(self) -> float:
        """Largest beta input value (the k0+1 sorted entry). Active only."""
        return float(self.prefix[self.k0])

    def value_at_k1(self) -> float:
        return float(self.prefix[self.k1 - 1])

    def index_sets(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
        """Alpha and beta index sets of ``v``, or None if thresholds blur.

        Strict value separation at the block boundaries can be lost in the
        degenerate roundoff cases the candidate checks tolerate; callers
        fall back to the permutation-based path then.  Active projections
        only.
        """
        cut_alpha = self.prefix[self.k0] if self.k0 > 0 else np.inf
        alpha = np.flatnonzero(v > cut_alpha)
        if alpha.size != self.k0:
            return None
        if self.k1 >= v.size:
            cut_beta = -np.inf
        elif self.k1 < self.prefix.size:
            cut_beta = self.prefix[self.k1]
        else:
            cut_beta = self.tail_max
        top = v > cut_beta
        if int(top.sum()) != self.k1:
            return None
        if self.k0 > 0:
            top[alpha] = False
        beta = np.flatnonzero(top)
        return alpha, beta


def project_topk_values(v, k: int, hint_k1: int,
                        timers: Timers | None = None) -> ValueProjection:
    """Values-only projection with the same partial-sort growth as the
    permutation path; returns the same multipliers bit for bit."""
    v = np.ascontiguousarray(v, dtype=float)
    m = v.size
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    prefix = min(m, max(hint_k1, k))
    resorts = 0
    while True:
        if timers is None:
            values, tail_max = partial_values_desc(v, prefix)
        else:
            with timers.section("sort"):
                values, tail_max = partial_values_desc(v, prefix)
        psums = np.empty(prefix + 1)
        psums[0] = 0.0
        np.cumsum(values, out=psums[1:])
        tk = float(psums[k])
        if tk <= 0.0:
            vk = values[k - 1]
            k0 = int(np.count_nonzero(v > vk))
            k1 = m - int(np.count_nonzero(v < vk))
            return ValueProjection(k=k, k0=k0, k1=k1, lambda_bar=0.0,
                                   theta_bar=float(vk), topk_value=tk,
                                   prefix=values, tail_max=tail_max,
                                   resorts=resorts)
        if timers is None:
            hit = _scan_pairs(values, psums, k, m, prefix, tail_max)
        else:
            with timers.section("projection"):
                hit = _scan_pairs(values, psums, k, m, prefix, tail_max)
        if hit is not None:
            k0, k1, lam, theta = hit
            return ValueProjection(k=k, k0=k0, k1=k1, lambda_bar=lam,
                                   theta_bar=theta, topk_value=tk,
                                   prefix=values, tail_max=tail_max,
                                   resorts=resorts)
        if prefix >= m:
            if tk <= 64.0 * np.finfo(float).eps * m * (1.0 + np.abs(values).max()):
                vk = values[k - 1]
                k0 = int(np.count_nonzero(v > vk))
                k1 = m - int(np.count_nonzero(v < vk))
                return ValueProjection(k=k, k0=k0, k1=k1, lambda_bar=0.0,
                                       theta_bar=float(vk), topk_value=0.0,
                                       prefix=values, tail_max=tail_max,
                                       resorts=resorts)
            raise RuntimeError("no optimality-consistent index pair found; "
                               "input must be a finite real vector")
        prefix = min(m, max(2 * prefix, prefix + 16))
        resorts += 1
