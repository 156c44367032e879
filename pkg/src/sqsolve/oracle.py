"""Slow, independent reference implementations used by tests only.

Nothing here shares kernels with the fast paths: the projection oracle
enumerates every candidate index pair, the Newton oracle materializes the
dense matrix, and the regression references work directly from sorted
scenario values.  Each oracle result carries a machine-checked certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projection import TopKProjection
from .topk import IndexPair, Partition

__all__ = [
    "OracleReport",
    "brute_force_project",
    "dense_q_matrix",
    "dense_jacobian_matrix",
    "projection_matrix_from_b",
    "dense_newton_matrix",
    "subgradient_reference",
    "analytic_qr_intercept",
]


@dataclass(frozen=True)
class OracleReport:
    """Oracle payload plus the optimality slacks it was checked against."""

    value: object
    certificate: dict[str, float]


def brute_force_project(y, k: int) -> OracleReport:
    """Projection onto the nonpositive top-k-sum set by full enumeration.

    Every pair ``(k0, k1)`` with ``0 <= k0 <= k-1 <= k1 <= m`` is solved
    for its two multipliers and checked against all optimality
    inequalities; exactly one candidate passes for a valid input.  Cost is
    O(m^2), intended for m <= 200.
    """
    v = np.asarray(y, dtype=float)
    m = v.size
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    perm = np.argsort(-v, kind="stable")
    s = v[perm]
    psums = np.concatenate([[0.0], np.cumsum(s)])
    tk = float(psums[k])
    if tk <= 0.0:
        vk = s[k - 1]
        k0 = int(np.count_nonzero(s > vk))
        k1 = int(np.count_nonzero(s >= vk))
        proj = TopKProjection(
            ybar=v.copy(), k=k, pair=IndexPair(k0, k1), lambda_bar=0.0,
            theta_bar=float(vk), part=Partition(k0, k1, m), perm=perm,
            mu_beta=np.zeros(k1 - k0), topk_value=tk,
        )
        return OracleReport(proj, {"topk_of_input": tk})

    k0g, k1g = np.meshgrid(np.arange(k), np.arange(k, m + 1), indexing="ij")
    k0f, k1f = k0g.astype(float), k1g.astype(float)
    rho = k * k - 2.0 * k * k0f + k0f * k1f
    s_a = psums[k0g]
    s_b = psums[k1g] - s_a
    lam = ((k1f - k0f) * s_a + (k - k0f) * s_b) / rho
    theta = (k0f * s_b - (k - k0f) * s_a) / rho

    above = np.where(k0g > 0, s[np.maximum(k0g - 1, 0)], np.inf)
    below = np.where(k1g < m, s[np.minimum(k1g, m - 1)], -np.inf)
    # same slack treatment as the fast path: bound checks that hold with
    # equality at degenerate inputs get relative roundoff room
    tol = 1e-11 * (1.0 + np.abs(theta) + np.abs(lam))
    valid = (
        (lam > 0.0)
        & (above - lam > theta)
        & (theta > below)
        & (s[k1g - 1] >= theta - tol)
        & (s[k0g] - lam <= theta + tol)
    )
    hits = np.argwhere(valid)
    if hits.size == 0:
        raise RuntimeError("no candidate index pair satisfies the optimality system")
    i, j = hits[0]
    k0, k1 = int(k0g[i, j]), int(k1g[i, j])
    lam_v, theta_v = float(lam[i, j]), float(theta[i, j])

    sbar = s.copy()
    sbar[:k0] -= lam_v
    sbar[k0:k1] = theta_v
    ybar = np.empty(m)
    ybar[perm] = sbar
    mu_beta = np.clip((s[k0:k1] - theta_v) / lam_v, 0.0, 1.0)
    mu = np.zeros(m)
    mu[:k0] = 1.0
    mu[k0:k1] = mu_beta

    certificate = {
        "topk_of_projection": float(np.sum(np.sort(sbar)[::-1][:k])),
        "stationarity": float(np.max(np.abs(sbar - s + lam_v * mu))),
        "mu_lower": float(mu_beta.min(initial=0.0)),
        "mu_upper": float(1.0 - mu_beta.max(initial=0.0)),
        "mu_sum_gap": float(mu_beta.sum() - (k - k0)),
        "lambda": lam_v,
        "order_above": float((sbar[k0 - 1] - theta_v) if k0 > 0 else np.inf),
        "order_below": float((theta_v - sbar[k1]) if k1 < m else np.inf),
    }
    proj = TopKProjection(
        ybar=ybar, k=k, pair=IndexPair(k0, k1), lambda_bar=lam_v,
        theta_bar=theta_v, part=Partition(k0, k1, m), perm=perm,
        mu_beta=mu_beta, topk_value=tk,
    )
    return OracleReport(proj, certificate)


def dense_q_matrix(k: int, k0: int, k1: int, boundary: bool = False) -> np.ndarray:
    """Dense k1 x k1 matrix Q = I - J restricted to the leading block."""
    if boundary:
        return np.full((k1, k1), 1.0 / k1)
    rho = float(k * k - 2 * k * k0 + k0 * k1)
    nb = k1 - k0
    q = np.zeros((k1, k1))
    q[:k0, :k0] = (k1 - k0) / rho
    q[:k0, k0:] = (k - k0) / rho
    q[k0:, :k0] = (k - k0) / rho
    q[k0:, k0:] = -k0 / rho
    q[k0:, k0:] += np.eye(nb)
    return q


def dense_jacobian_matrix(m: int, k: int, k0: int, k1: int, kind: str) -> np.ndarray:
    """Full m x m projection Jacobian in sorted coordinates."""
    j = np.eye(m)
    if kind == "interior":
        return j
    j[:k1, :k1] -= dense_q_matrix(k, k0, k1, boundary=(kind == "boundary"))
    return j


def projection_matrix_from_b(k0: int, mu_beta) -> np.ndarray:
    """Row-space projector B^T (B B^T)^{-1} B of the constraint basis.

    ``B`` stacks the multiplier row ``[1_alpha, mu_beta]`` over the chain
    of adjacent differences on beta; its row space, and hence this
    projector, does not depend on the admissible ``mu_beta`` chosen.
    """
    mu_beta = np.asarray(mu_beta, dtype=float)
    nb = mu_beta.size
    first = np.concatenate([np.ones(k0), mu_beta])[None, :]
    if nb > 1:
        c = np.zeros((nb - 1, k0 + nb))
        for i in range(nb - 1):
            c[i, k0 + i] = 1.0
            c[i, k0 + i + 1] = -1.0
        b = np.vstack([first, c])
    else:
        b = first
    return b.T @ np.linalg.solve(b @ b.T, b)


def dense_newton_matrix(problem, lam, mu, sigma: float, m_scale: float,
                        x) -> np.ndarray:
    """Materialized Newton matrix, assembled without low-rank shortcuts."""
    from .jacobian import classify
    from .projection import project_topk

    x = np.asarray(x, dtype=float)
    n = problem.n
    v_mat = np.diag(problem.objective.hess_diag() + m_scale / sigma)
    w = x + np.asarray(mu, dtype=float) / sigma
    outside = ~problem.box.contains(w)
    v_mat += sigma * np.diag(outside.astype(float))
    lam = np.asarray(lam, dtype=float)
    for blk, (lo, hi) in zip(problem.blocks, problem.block_offsets()):
        vals = blk.values(x) + lam[lo:hi] / sigma
        proj = project_topk(vals, blk.k)
        case = classify(vals, blk.k, proj)
        if case.kind == "interior":
            continue
        k0, k1 = proj.pair.k0, proj.pair.k1
        q = dense_q_matrix(blk.k, k0, k1, boundary=(case.kind == "boundary"))
        a_sorted = blk.A[proj.perm[:k1]]
        v_mat += sigma * a_sorted.T @ q @ a_sorted
    return v_mat


def subgradient_reference(features, response, tau: float, iters: int = 4000,
                          ref_value: float | None = None, box=None,
                          seed: int = 0) -> tuple[float, np.ndarray]:
    """Projected subgradient baseline for the tail-mean regression objective.

    Minimizes ``mean of the k largest residuals b - A x`` plus ``x^T
    mean(A)`` with diminishing steps (Polyak steps when a reference value
    is known).  Accuracy target is only ~1e-3; the point is independence
    from the Newton machinery, not speed.
    """
    a = np.asarray(features, dtype=float)
    b = np.asarray(response, dtype=float)
    m = b.size
    k = (1.0 - tau) * m
    if abs(k - round(k)) > 1e-9:
        raise ValueError(f"(1 - tau) * m must be an integer, got {k}")
    k = int(round(k))
    n = a.shape[1] if a.ndim == 2 else 0
    abar = a.mean(axis=0) if n else np.zeros(0)

    def objective(x):
        resid = b - (a @ x if n else 0.0)
        top = np.partition(resid, m - k)[m - k:]
        return float(np.sum(top) / k + (x @ abar if n else 0.0))

    x = np.zeros(n)
    best_val = objective(x)
    best_x = x.copy()
    if n == 0:
        return best_val, best_x
    step0 = 1.0 / max(1.0, float(np.linalg.norm(abar)) + np.abs(a).max())
    for t in range(1, iters + 1):
        resid = b - a @ x
        idx = np.argpartition(-resid, k - 1)[:k]
        g = abar - a[idx].sum(axis=0) / k
        gnorm2 = float(g @ g)
        if gnorm2 == 0.0:
            break
        val = objective(x)
        if ref_value is not None and val > ref_value:
            step = (val - ref_value) / gnorm2
        else:
            step = step0 / np.sqrt(t)
        x = x - step * g
        if box is not None:
            x = np.clip(x, box.lower, box.upper)
        val = objective(x)
        if val < best_val:
            best_val, best_x = val, x.copy()
    return best_val, best_x


def analytic_qr_intercept(b, tau: float) -> float:
    """Optimal level for the featureless tail regression: the top-k mean."""
    b = np.asarray(b, dtype=float)
    m = b.size
    k = (1.0 - tau) * m
    if abs(k - round(k)) > 1e-9:
        raise ValueError(f"(1 - tau) * m must be an integer, got {k}")
    k = int(round(k))
    return float(np.mean(np.sort(b)[::-1][:k]))
