"""Generalized Jacobians of the top-k-sum projection and their reduced factors.

At a point ``y`` with projection certificate ``(k0, k1, lam, theta)`` the
projection map is differentiable in exactly three regimes: strictly
feasible input (identity Jacobian), an active constraint with ``k1 == k``
(rank-one deflation on the leading block), and the general active case,
where ``I - J`` restricted to the leading ``k1`` coordinates is a closed
form projection matrix ``Q`` built from ``(k, k0, k1)`` alone.  At points
where none of the strict conditions hold we use the formula of the
matching regime, which is a valid limit of Jacobians at nearby
differentiable points; any such element works in a semismooth Newton step.

``Q`` has rank ``|beta| + 1`` (or 1 in the boundary regime), so
``A^T (I - J) A`` factors as ``Ttilde^T Ttilde`` with ``Ttilde`` having
that few rows.  Only the alpha and beta scenario rows of ``A`` enter
``Ttilde``; every scenario outside the tail block is ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projection import TopKProjection, ValueProjection

__all__ = [
    "INTERIOR",
    "GENERAL",
    "BOUNDARY",
    "JacobianCase",
    "QBlocks",
    "classify",
    "classify_values",
    "q_blocks",
    "jacobian_apply",
    "ReducedFactor",
    "build_reduced_factor",
    "reduced_factor_from_sets",
]

INTERIOR = "interior"
GENERAL = "general"
BOUNDARY = "boundary"


@dataclass(frozen=True)
class JacobianCase:
    """Which Jacobian formula applies, plus a strict differentiability flag.

    ``differentiable`` is True when the strict inequalities certifying
    Frechet differentiability hold with absolute slack ``1e-12``; when they
    fail, ``kind`` still names the limit element that is used.
    """

    kind: str
    differentiable: bool


@dataclass(frozen=True)
class QBlocks:
    """Scalar data determining the closed-form matrix Q on the leading block.

    ``rho = k^2 - 2*k*k0 + k0*k1`` is positive whenever ``k0 < k <= k1``.
    """

    k: int
    k0: int
    k1: int

    @property
    def rho(self) -> int:
        return self.k * self.k - 2 * self.k * self.k0 + self.k0 * self.k1

    @property
    def n_alpha(self) -> int:
        return self.k0

    @property
    def n_beta(self) -> int:
        return self.k1 - self.k0


def q_blocks(proj: TopKProjection) -> QBlocks:
    return QBlocks(k=proj.k, k0=proj.pair.k0, k1=proj.pair.k1)


def _classify_scalars(topk_value: float, k: int, k1: int, lam: float,
                      theta: float, y_k0p1: float, y_k1: float,
                      slack: float) -> JacobianCase:
    if topk_value <= 0.0:
        return JacobianCase(INTERIOR, differentiable=topk_value < -slack)
    if k == k1:
        return JacobianCase(BOUNDARY, differentiable=topk_value > slack)
    strict = (y_k0p1 - lam < theta - slack) and (theta < y_k1 - slack)
    return JacobianCase(GENERAL, differentiable=strict)


def classify(y, k: int, proj: TopKProjection, slack: float = 1e-12) -> JacobianCase:
    """Assign the Jacobian regime of the projection at ``y``.

    ``proj`` must be the projection of ``y`` at the same ``k``; gross
    mismatches raise ``ValueError``.
    """
    v = np.asarray(y, dtype=float)
    if v.size != proj.ybar.size or k != proj.k:
        raise ValueError("projection certificate does not match the input")
    k0, k1 = proj.pair.k0, proj.pair.k1
    if not (0 <= k0 <= k - 1 < k1 <= v.size):
        raise ValueError("projection index pair inconsistent with k")
    if (proj.topk_value <= 0.0) != (proj.lambda_bar == 0.0):
        raise ValueError("projection certificate is internally inconsistent")
    if proj.topk_value <= 0.0:
        return _classify_scalars(proj.topk_value, k, k1, 0.0, 0.0, 0.0, 0.0, slack)
    return _classify_scalars(
        proj.topk_value, k, k1, proj.lambda_bar, proj.theta_bar,
        float(v[proj.perm[k0]]), float(v[proj.perm[k1 - 1]]), slack)


def classify_values(vp: ValueProjection, slack: float = 1e-12) -> JacobianCase:
    """Jacobian regime from a values-only projection certificate."""
    if not vp.active:
        return _classify_scalars(vp.topk_value, vp.k, vp.k1, 0.0, 0.0, 0.0, 0.0, slack)
    return _classify_scalars(vp.topk_value, vp.k, vp.k1, vp.lambda_bar,
                             vp.theta_bar, vp.value_above_beta(),
                             vp.value_at_k1(), slack)


def jacobian_apply(case: JacobianCase, q: QBlocks, d) -> np.ndarray:
    """Apply the projection Jacobian to ``d`` (given in sorted order).

    Matrix-free: the leading block costs O(k1) and the trailing block is
    the identity.
    """
    d = np.asarray(d, dtype=float)
    out = d.copy()
    if case.kind == INTERIOR:
        return out
    k0, k1 = q.k0, q.k1
    if case.kind == BOUNDARY:
        out[:k1] -= d[:k1].mean()
        return out
    rho = float(q.rho)
    s_a = d[:k0].sum()
    s_b = d[k0:k1].sum()
    out[:k0] = d[:k0] - ((k1 - k0) * s_a + (q.k - k0) * s_b) / rho
    out[k0:k1] = (k0 * s_b - (q.k - k0) * s_a) / rho
    return out


@dataclass(frozen=True)
class ReducedFactor:
    """Low-rank factor with ``Ttilde^T Ttilde = A^T (I - J) A``.

    ``rows`` are the original row indices of ``A`` (the alpha and beta
    scenarios) that contribute; the interior regime yields an empty factor.
    """

    ttilde: np.ndarray
    rows: np.ndarray


def reduced_factor_from_sets(A: np.ndarray, k: int, k0: int, k1: int,
                             rows_alpha: np.ndarray, rows_beta: np.ndarray,
                             kind: str) -> ReducedFactor:
    """Reduced factor given the alpha/beta scenario row indices directly.

    General regime: one row per beta scenario plus a scaled-average row
    for the whole alpha block (dropped when alpha is empty).  Boundary
    regime: the single normalized sum of the alpha and beta rows.
    """
    n = A.shape[1]
    if kind == INTERIOR:
        return ReducedFactor(np.zeros((0, n)), np.zeros(0, dtype=np.intp))
    rows = np.concatenate([rows_alpha, rows_beta])
    if kind == BOUNDARY:
        ttilde = A[rows].sum(axis=0, keepdims=True) / np.sqrt(k1)
        return ReducedFactor(ttilde, rows)
    rho = float(k * k - 2 * k * k0 + k0 * k1)
    sum_alpha = A[rows_alpha].sum(axis=0) if k0 > 0 else np.zeros(n)
    sum_beta = A[rows_beta].sum(axis=0)
    t_beta = A[rows_beta] + ((k - k0) / rho) * sum_alpha - (k0 / rho) * sum_beta
    if k0 == 0:
        return ReducedFactor(np.ascontiguousarray(t_beta), rows)
    head = np.sqrt(k0) * (((k1 - k0) / rho) * sum_alpha + ((k - k0) / rho) * sum_beta)
    ttilde = np.vstack([head[None, :], t_beta])
    return ReducedFactor(ttilde, rows)


def build_reduced_factor(A, proj: TopKProjection, case: JacobianCase) -> ReducedFactor:
    """Assemble the reduced factor for constraint matrix ``A`` at ``proj``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != proj.ybar.size:
        raise ValueError(f"A must have {proj.ybar.size} rows, got shape {A.shape}")
    k0, k1 = proj.pair.k0, proj.pair.k1
    return reduced_factor_from_sets(A, proj.k, k0, k1, proj.perm[:k0],
                                    proj.perm[k0:k1], case.kind)
