"""Semismooth Newton solver for the augmented Lagrangian subproblems.

For fixed multipliers ``(lam, mu)`` and penalty ``sigma`` the subproblem
objective in ``x`` is

    f(x) + sigma/2 * dist^2(G(x) + lam/sigma, B)
         + sigma/2 * dist^2(x + mu/sigma, X)
         + m_scale/(2 sigma) * ||x - x_anchor||^2

where ``G`` stacks the affine scenario maps, ``B`` the product of top-k-sum
sets and ``X`` the box.  The distance residual of each block is supported
on the alpha/beta scenarios of its projection, so gradients touch at most
``k1`` rows of each block matrix, and the Newton matrix

    V = hess(f) + sigma * Ttilde^T Ttilde + sigma * (I - J_X) + m_scale/sigma * I

carries one low-rank factor per active block.  When the factors have fewer
total rows than ``n`` the system is solved in that reduced space through
the Sherman-Morrison-Woodbury identity, otherwise directly in ``n`` space;
both paths give the same result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .jacobian import (
    INTERIOR,
    ReducedFactor,
    build_reduced_factor,
    classify,
    classify_values,
    reduced_factor_from_sets,
)
from .model import Problem
from .projection import (
    ValueProjection,
    next_hint,
    project_box,
    project_topk_values,
    project_topk_with_hint,
)
from .timing import Timers

__all__ = [
    "Subproblem",
    "NewtonSystem",
    "NewtonSolveError",
    "solve_newton_system",
    "SsnResult",
    "minimize_subproblem",
]


class NewtonSolveError(RuntimeError):
    """Raised when the Newton matrix cannot be factorized."""


@dataclass
class NewtonSystem:
    """Diagonal-plus-low-rank representation of the Newton matrix.

    ``ddiag`` must be positive for the reduced solve to apply; ``factors``
    holds one reduced factor per constraint block (empty for inactive
    blocks) and ``active`` flags which blocks contributed.
    """

    ddiag: np.ndarray
    factors: list[ReducedFactor]
    sigma: float
    active: np.ndarray

    @property
    def total_rows(self) -> int:
        return sum(f.ttilde.shape[0] for f in self.factors)

    def stacked_factor(self) -> np.ndarray:
        mats = [f.ttilde for f in self.factors if f.ttilde.shape[0] > 0]
        if not mats:
            return np.zeros((0, self.ddiag.size))
        return np.vstack(mats)

    def dense(self) -> np.ndarray:
        tt = self.stacked_factor()
        return np.diag(self.ddiag) + self.sigma * tt.T @ tt


def solve_newton_system(system: NewtonSystem, rhs, timers: Timers | None = None) -> np.ndarray:
    """Solve ``V d = rhs`` in the cheaper of reduced or full space.

    The reduced path factorizes the r x r matrix
    ``I/sigma + Ttilde D^-1 Ttilde^T`` (SPD whenever ``D > 0``); the direct
    path factorizes ``D + sigma Ttilde^T Ttilde``.  Reduced is used when
    the total factor row count is below ``n``.
    """
    if timers is None:
        return _solve_newton(system, rhs)
    with timers.section("linear_solve"):
        return _solve_newton(system, rhs)


def _solve_newton(system: NewtonSystem, rhs) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=float)
    d = system.ddiag
    n = d.size
    tt = system.stacked_factor()
    r = tt.shape[0]
    if r == 0:
        if np.any(d <= 0):
            raise NewtonSolveError(
                "singular diagonal with no low-rank term; sigma or the proximal "
                "scale leaves the Newton matrix rank-deficient"
            )
        return rhs / d
    if r < n:
        if np.any(d <= 0):
            raise NewtonSolveError(
                "reduced solve needs a positive diagonal; check the proximal scale"
            )
        tt_d = tt / d
        core = tt_d @ tt.T
        core[np.diag_indices_from(core)] += 1.0 / system.sigma
        try:
            chol = cho_factor(core, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NewtonSolveError(f"reduced core factorization failed: {exc}") from exc
        w = cho_solve(chol, tt @ (rhs / d), check_finite=False)
        return rhs / d - tt_d.T @ w
    dense = system.sigma * (tt.T @ tt)
    dense[np.diag_indices_from(dense)] += d
    try:
        chol = cho_factor(dense, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NewtonSolveError(f"direct factorization failed: {exc}") from exc
    return cho_solve(chol, rhs, check_finite=False)


@dataclass
class _BlockState:
    v: np.ndarray
    proj: ValueProjection
    resid_sq: float
    _residual: np.ndarray | None = None

    def residual(self) -> np.ndarray:
        if self._residual is None:
            self._residual = self.proj.residual(self.v)
        return self._residual


@dataclass
class _Eval:
    """Cached evaluation of the subproblem objective at a point."""

    x: np.ndarray
    value: float
    blocks: list[_BlockState]
    w: np.ndarray
    z: np.ndarray


class Subproblem:
    """Augmented Lagrangian inner problem for fixed multipliers and penalty.

    One instance per outer iteration and per thread: it owns the per-block
    partial-sort hints that are updated as projections are computed.
    """

    def __init__(self, problem: Problem, lam, mu, sigma: float, m_scale: float,
                 x_anchor, hints: list[int] | None = None,
                 timers: Timers | None = None):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.problem = problem
        self.sigma = float(sigma)
        self.m_scale = float(m_scale)
        self.x_anchor = np.asarray(x_anchor, dtype=float).copy()
        self.mu = np.asarray(mu, dtype=float).copy()
        lam = np.asarray(lam, dtype=float)
        self.lam_blocks = [lam[lo:hi].copy() for (lo, hi) in problem.block_offsets()]
        if hints is None:
            hints = [min(blk.k + 10, blk.m) for blk in problem.blocks]
        self.hints = hints
        self.timers = timers

    def evaluate(self, x) -> _Eval:
        x = np.asarray(x, dtype=float)
        prob, sigma = self.problem, self.sigma
        value = prob.objective.value(x)
        blocks: list[_BlockState] = []
        for i, blk in enumerate(prob.blocks):
            v = blk.values(x) + self.lam_blocks[i] / sigma
            proj = project_topk_values(v, blk.k, self.hints[i], timers=self.timers)
            self.hints[i] = min(next_hint(proj.k1), blk.m)
            resid_sq = proj.residual_sq()
            value += 0.5 * sigma * resid_sq
            blocks.append(_BlockState(v=v, proj=proj, resid_sq=resid_sq))
        w = x + self.mu / sigma
        z = project_box(w, prob.box)
        value += 0.5 * sigma * float(np.sum((w - z) ** 2))
        if self.m_scale > 0.0:
            dx = x - self.x_anchor
            value += 0.5 * self.m_scale / sigma * float(dx @ dx)
        return _Eval(x=x, value=float(value), blocks=blocks, w=w, z=z)

    def value(self, x) -> float:
        return self.evaluate(x).value

    def gradient_from(self, ev: _Eval) -> np.ndarray:
        """Gradient at ``ev.x`` reusing the cached projections."""
        if self.timers is None:
            return self._gradient_from(ev)
        with self.timers.section("gradient"):
            return self._gradient_from(ev)

    def _gradient_from(self, ev: _Eval) -> np.ndarray:
        sigma = self.sigma
        g = self.problem.objective.grad(ev.x)
        for blk, st in zip(self.problem.blocks, ev.blocks):
            if not st.proj.active:
                continue
            r = st.residual()
            # support is confined to the alpha/beta scenarios
            assert int(np.count_nonzero(r)) <= st.proj.k1
            if st.proj.k1 * 4 < blk.m:
                rows = np.flatnonzero(r)
                g += sigma * (blk.A[rows].T @ r[rows])
            else:
                g += sigma * (blk.A.T @ r)
        g += sigma * (ev.w - ev.z)
        if self.m_scale > 0.0:
            g += (self.m_scale / sigma) * (ev.x - self.x_anchor)
        return g

    def gradient(self, x) -> np.ndarray:
        return self.gradient_from(self.evaluate(x))

    def newton_system(self, ev: _Eval) -> NewtonSystem:
        prob, sigma = self.problem, self.sigma
        ddiag = prob.objective.hess_diag() + self.m_scale / sigma
        ddiag = ddiag + sigma * (~prob.box.contains(ev.w)).astype(float)
        factors: list[ReducedFactor] = []
        active = np.zeros(len(prob.blocks), dtype=bool)
        for i, (blk, st) in enumerate(zip(prob.blocks, ev.blocks)):
            case = classify_values(st.proj)
            factors.append(_block_factor(blk, st, case))
            active[i] = case.kind != INTERIOR
        return NewtonSystem(ddiag=ddiag, factors=factors, sigma=sigma, active=active)

    def recover_primal(self, ev: _Eval) -> tuple[np.ndarray, np.ndarray]:
        """Scenario variables and box variable induced by ``ev.x``."""
        if ev.blocks:
            y = np.concatenate([st.v - st.residual() for st in ev.blocks])
        else:
            y = np.zeros(0)
        return y, ev.z


def _block_factor(blk, st: _BlockState, case) -> ReducedFactor:
    """Reduced factor via value thresholds, falling back to a full sort when
    degenerate roundoff blurs the block boundaries."""
    vp = st.proj
    if case.kind == INTERIOR:
        return reduced_factor_from_sets(blk.A, vp.k, vp.k0, vp.k1,
                                        np.zeros(0, dtype=np.intp),
                                        np.zeros(0, dtype=np.intp), case.kind)
    sets = vp.index_sets(st.v)
    if sets is not None:
        return reduced_factor_from_sets(blk.A, vp.k, vp.k0, vp.k1,
                                        sets[0], sets[1], case.kind)
    proj = project_topk_with_hint(st.v, blk.k, min(vp.k1 + 1, blk.m))
    return build_reduced_factor(blk.A, proj, classify(st.v, blk.k, proj))


@dataclass
class SsnResult:
    x: np.ndarray
    iterations: int
    converged: bool
    final: _Eval
    grad_norm: float
    backtracks: int = 0
    resorts: int = 0
    stalled: bool = False
    steps: list[tuple[float, float, float]] = field(default_factory=list)


def minimize_subproblem(sub: Subproblem, x0, grad_tol: float = 0.0,
                        tol_fn=None, max_iter: int = 200, ls_shrink: float = 0.5,
                        ls_slope: float = 1e-4, max_backtracks: int = 50,
                        collect_steps: bool = False) -> SsnResult:
    """Newton iteration with backtracking line search on the subproblem.

    Stops when the gradient 2-norm falls below ``tol_fn(eval)`` when given,
    else below ``grad_tol``.  Monotone descent is enforced by the line
    search; if no float-representable decrease exists the loop exits early
    with ``stalled`` set and the best iterate found.
    """
    eps = np.finfo(float).eps
    x = np.asarray(x0, dtype=float).copy()
    ev = sub.evaluate(x)
    backtracks = 0
    resorts = 0
    steps: list[tuple[float, float, float]] = []
    best_gnorm = np.inf
    no_progress = 0
    for t in range(max_iter):
        g = sub.gradient_from(ev)
        gnorm = float(np.linalg.norm(g))
        tol = tol_fn(ev) if tol_fn is not None else grad_tol
        if gnorm <= tol:
            return SsnResult(x=x, iterations=t, converged=True, final=ev,
                             grad_norm=gnorm, backtracks=backtracks,
                             resorts=resorts, steps=steps)
        system = sub.newton_system(ev)
        d = _newton_direction(sub, system, g)
        gd = float(g @ d)
        if gd >= 0.0:
            d = -g
            gd = -gnorm * gnorm
        # decreases smaller than the float resolution of the objective are
        # accepted at full step, so the Newton contraction can continue past
        # the point where the line search can certify descent
        slack = 8.0 * eps * (1.0 + abs(ev.value))
        step = 1.0
        accepted = None
        for _ in range(max_backtracks + 1):
            trial = sub.evaluate(x + step * d)
            resorts += _total_resorts(trial)
            if trial.value <= ev.value + ls_slope * step * gd + slack:
                accepted = trial
                break
            backtracks += 1
            step *= ls_shrink
        if accepted is None:
            return SsnResult(x=x, iterations=t + 1, converged=False, final=ev,
                             grad_norm=gnorm, backtracks=backtracks,
                             resorts=resorts, stalled=True, steps=steps)
        if np.all(np.abs(accepted.x - x) <= eps * (1.0 + np.abs(x))):
            return SsnResult(x=accepted.x, iterations=t + 1, converged=False,
                             final=accepted, grad_norm=gnorm,
                             backtracks=backtracks, resorts=resorts,
                             stalled=True, steps=steps)
        # progress means either a certified objective decrease or a new best
        # gradient norm; ten consecutive slack-only steps is a float-limit
        # stall (gradient norms alone may be non-monotone under Newton steps)
        if gnorm < (1.0 - 1e-3) * best_gnorm:
            best_gnorm = gnorm
            no_progress = 0
        elif accepted.value < ev.value - slack:
            no_progress = 0
        else:
            no_progress += 1
            if no_progress >= 10:
                return SsnResult(x=accepted.x, iterations=t + 1, converged=False,
                                 final=accepted, grad_norm=gnorm,
                                 backtracks=backtracks, resorts=resorts,
                                 stalled=True, steps=steps)
        if collect_steps:
            steps.append((step, gd, accepted.value - ev.value))
        x, ev = accepted.x, accepted
    g = sub.gradient_from(ev)
    return SsnResult(x=x, iterations=max_iter, converged=False, final=ev,
                     grad_norm=float(np.linalg.norm(g)), backtracks=backtracks,
                     resorts=resorts, steps=steps)


def _newton_direction(sub: Subproblem, system: NewtonSystem, g: np.ndarray) -> np.ndarray:
    try:
        return solve_newton_system(system, -g, timers=sub.timers)
    except NewtonSolveError:
        scale = float(np.max(system.ddiag)) if system.ddiag.size else 0.0
        ridge = 1e-12 * (1.0 + scale + system.sigma)
        for _ in range(12):
            patched = NewtonSystem(ddiag=system.ddiag + ridge, factors=system.factors,
                                   sigma=system.sigma, active=system.active)
            try:
                return solve_newton_system(patched, -g, timers=sub.timers)
            except NewtonSolveError:
                ridge *= 100.0
        raise


def _total_resorts(ev: _Eval) -> int:
    return sum(st.proj.resorts for st in ev.blocks)
