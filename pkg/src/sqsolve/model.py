"""Problem data model, KKT residuals and the dual objective.

A problem minimizes a linear or diagonal convex quadratic ``f`` over a box,
subject to superquantile constraints: for each block ``(A, b, k)`` the sum
of the ``k`` largest entries of ``A x + b`` must be nonpositive, i.e. the
empirical CVaR of the affine scenario values at level ``1 - k/m`` is <= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projection import Box, project_box, project_topk
from .topk import topk_sum

__all__ = [
    "LinearObjective",
    "QuadraticObjective",
    "ConstraintBlock",
    "Problem",
    "Residuals",
    "superquantile",
    "polar_cone_gap",
    "kkt_residuals",
    "dual_objective",
]


@dataclass(frozen=True)
class LinearObjective:
    """f(x) = c^T x."""

    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))

    @property
    def n(self) -> int:
        return self.c.size

    def value(self, x) -> float:
        return float(self.c @ x)

    def grad(self, x) -> np.ndarray:
        return self.c.copy()

    def hess_diag(self) -> np.ndarray:
        return np.zeros(self.n)


@dataclass(frozen=True)
class QuadraticObjective:
    """f(x) = 0.5 x^T diag(cdiag) x + c^T x with cdiag >= 0."""

    cdiag: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        cd = np.asarray(self.cdiag, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if cd.shape != c.shape:
            raise ValueError("cdiag and c must have the same length")
        if np.any(cd < 0):
            raise ValueError("cdiag must be nonnegative for convexity")
        object.__setattr__(self, "cdiag", cd)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.c.size

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * (self.cdiag * x) @ x + self.c @ x)

    def grad(self, x) -> np.ndarray:
        return self.cdiag * np.asarray(x, dtype=float) + self.c

    def hess_diag(self) -> np.ndarray:
        return self.cdiag.copy()


@dataclass(frozen=True)
class ConstraintBlock:
    """One superquantile constraint: topk_sum(A x + b, k) <= 0."""

    A: np.ndarray
    b: np.ndarray
    k: int

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 2:
            raise ValueError("A must be a matrix")
        if b.shape != (A.shape[0],):
            raise ValueError("b must have one entry per row of A")
        if not 1 <= int(self.k) <= A.shape[0]:
            raise ValueError(f"k must be in [1, {A.shape[0]}], got {self.k}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "k", int(self.k))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def tau(self) -> float:
        return 1.0 - self.k / self.m

    def values(self, x) -> np.ndarray:
        return self.A @ x + self.b


@dataclass(frozen=True)
class Problem:
    objective: LinearObjective | QuadraticObjective
    blocks: tuple[ConstraintBlock, ...]
    box: Box

    def __post_init__(self):
        blocks = tuple(self.blocks)
        n = self.objective.n
        for i, blk in enumerate(blocks):
            if blk.A.shape[1] != n:
                raise ValueError(f"block {i} has {blk.A.shape[1]} columns, expected {n}")
        if self.box.dim != n:
            raise ValueError("box dimension does not match objective")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def total_scenarios(self) -> int:
        return sum(blk.m for blk in self.blocks)

    def block_offsets(self) -> list[tuple[int, int]]:
        """(start, stop) slices of each block inside stacked scenario vectors."""
        out, start = [], 0
        for blk in self.blocks:
            out.append((start, start + blk.m))
            start += blk.m
        return out

    def constraint_values(self, x) -> list[float]:
        """topk_sum(A x + b, k) per block; all <= 0 means x is feasible."""
        return [topk_sum(blk.values(x), blk.k) for blk in self.blocks]


@dataclass(frozen=True)
class Residuals:
    """Normalized KKT residuals; eta == max of the three parts."""

    eta_p: float
    eta_d: float
    eta_r: float

    @property
    def eta(self) -> float:
        return max(self.eta_p, self.eta_d, self.eta_r)


def superquantile(values, k: int) -> float:
    """Mean of the k largest entries (the empirical CVaR at tau = 1 - k/m)."""
    return topk_sum(values, k) / k


def polar_cone_gap(lam_block, k: int) -> float:
    """Violation of membership in the dual cone of valid block multipliers.

    The cone is ``{w >= 0 : max(w) <= sum(w)/k}``; the return value is the
    largest violation of the two defining inequalities (0 when inside).
    """
    w = np.asarray(lam_block, dtype=float)
    neg = float(max(0.0, -w.min())) if w.size else 0.0
    cap = float(max(0.0, w.max() - w.sum() / k)) if w.size else 0.0
    return max(neg, cap)


def _norm(v) -> float:
    return float(np.linalg.norm(v))


def kkt_residuals(prob: Problem, x, y, z, lam, mu) -> Residuals:
    """Normalized optimality residuals at a primal-dual tuple.

    ``y`` and ``lam`` stack the per-block scenario vectors/multipliers in
    block order.  ``eta_p`` collects four relative feasibility terms,
    ``eta_d`` the dual stationarity residual and ``eta_r`` the relative
    primal-dual objective gap.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)

    offsets = prob.block_offsets()
    gvals = np.concatenate([blk.values(x) for blk in prob.blocks]) if prob.blocks else np.zeros(0)
    b_all = np.concatenate([blk.b for blk in prob.blocks]) if prob.blocks else np.zeros(0)

    y_proj = np.empty_like(y)
    for blk, (lo, hi) in zip(prob.blocks, offsets):
        y_proj[lo:hi] = project_topk(y[lo:hi], blk.k).ybar

    term_ineq = _norm(np.maximum(gvals - y, 0.0)) / (1.0 + _norm(b_all))
    term_y = _norm(y - y_proj) / (1.0 + _norm(y))
    term_xz = _norm(x - z) / (1.0 + _norm(z))
    term_box = _norm(z - project_box(z, prob.box)) / (1.0 + _norm(z))
    eta_p = max(term_ineq, term_y, term_xz, term_box)

    grad_f = prob.objective.grad(x)
    at_lam = np.zeros(prob.n)
    for blk, (lo, hi) in zip(prob.blocks, offsets):
        at_lam += blk.A.T @ lam[lo:hi]
    eta_d = _norm(at_lam + mu + grad_f) / (1.0 + _norm(grad_f))

    obj_p = prob.objective.value(x)
    obj_d = dual_objective(prob, lam, mu)
    if np.isfinite(obj_d):
        eta_r = abs(obj_p - obj_d) / (1.0 + abs(obj_p))
    else:
        eta_r = np.inf
    return Residuals(eta_p=float(eta_p), eta_d=float(eta_d), eta_r=float(eta_r))


def dual_objective(prob: Problem, lam, mu, cone_rtol: float = 1e-9) -> float:
    """Lagrangian dual objective; -inf when the multipliers are inadmissible.

    The block multiplier support term vanishes exactly when each block
    multiplier lies in the dual cone checked by :func:`polar_cone_gap`
    (relative slack ``cone_rtol``); otherwise the dual value is -inf.  The
    box support term is evaluated coordinatewise with infinite bounds
    contributing -inf on sign mismatch.  For linear coordinates of ``f``
    the conjugate term is evaluated as 0; any mismatch between ``c`` and
    ``-(A^T lam + mu)`` is carried by the dual stationarity residual
    instead of the gap.
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)

    value = 0.0
    for blk, (lo, hi) in zip(prob.blocks, prob.block_offsets()):
        lam_blk = lam[lo:hi]
        gap = polar_cone_gap(lam_blk, blk.k)
        scale = 1.0 + float(np.abs(lam_blk).max()) if lam_blk.size else 1.0
        if gap > cone_rtol * scale:
            return -np.inf
        value += float(blk.b @ lam_blk)

    w = -mu
    lo_b, hi_b = prob.box.lower, prob.box.upper
    pos, neg = w > 0, w < 0
    if np.any(pos & np.isinf(hi_b)) or np.any(neg & np.isinf(lo_b)):
        return -np.inf
    value -= float(np.sum(hi_b[pos] * w[pos]) + np.sum(lo_b[neg] * w[neg]))

    grad_at = -(_stacked_at_lam(prob, lam) + mu)
    obj = prob.objective
    if isinstance(obj, QuadraticObjective):
        curved = obj.cdiag > 0
        diff = grad_at[curved] - obj.c[curved]
        value -= float(0.5 * np.sum(diff * diff / obj.cdiag[curved]))
    return value


def _stacked_at_lam(prob: Problem, lam: np.ndarray) -> np.ndarray:
    out = np.zeros(prob.n)
    for blk, (lo, hi) in zip(prob.blocks, prob.block_offsets()):
        out += blk.A.T @ lam[lo:hi]
    return out
