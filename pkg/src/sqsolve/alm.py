"""Outer augmented Lagrangian loop with inexact subproblem solves.

Each outer iteration minimizes the penalized subproblem to an accuracy
driven by two summable sequences (a fixed geometric budget and an
iterate-change rule), recovers the scenario and box variables from the
subproblem solution, updates the multipliers, and tests the normalized
KKT residuals.  The penalty grows only while the primal residual stalls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .model import Problem, Residuals, kkt_residuals
from .newton import Subproblem, minimize_subproblem
from .timing import Timers

__all__ = [
    "AlmSettings",
    "IterateState",
    "TraceEntry",
    "AlmResult",
    "default_m_scale",
    "solve",
    "dual_feasibility",
    "next_penalty",
]


@dataclass(frozen=True)
class AlmSettings:
    """Targets, penalty schedule and inner-solve policy.

    ``m_scale_factor`` scales the proximal matrix ``M = factor * sigma * I``;
    ``None`` picks the default 1e-6 (see :func:`default_m_scale`) and 0.0
    disables the proximal term.  Setting ``inner_tol`` bypasses the
    inexactness schedules with a fixed gradient tolerance.
    """

    tol: float = 1e-8
    sigma0: float = 1.0
    sigma_growth: float = 2.0
    sigma_max: float = 1e8
    max_outer: int = 200
    eps0: float = 10.0
    eps_decay: float = 0.5
    delta0: float = 0.5
    delta_decay: float = 0.5
    m_scale_factor: float | None = None
    inner_tol: float | None = None
    inner_tol_floor: float = 1e-13
    max_inner: int = 200
    ls_shrink: float = 0.5
    ls_slope: float = 1e-4
    max_backtracks: int = 50
    primal_decrease: float = 0.5

    def __post_init__(self):
        if self.tol <= 0 or self.sigma0 <= 0 or self.sigma_growth < 1:
            raise ValueError("tol and sigma0 must be positive, sigma_growth >= 1")


@dataclass
class IterateState:
    """Primal-dual iterate; ``y`` and ``lam`` stack the blocks in order."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    sigma: float
    outer_iter: int


@dataclass(frozen=True)
class TraceEntry:
    outer: int
    sigma: float
    inner_iterations: int
    grad_norm: float
    eta_p: float
    eta_d: float
    eta_r: float
    eta: float
    dual_feas: float
    objective: float
    seconds: float
    beta_sizes: tuple[int, ...]
    resorts: int
    backtracks: int
    timing_split: dict[str, float] = field(default_factory=dict)


@dataclass
class AlmResult:
    state: IterateState
    residuals: Residuals
    trace: list[TraceEntry]
    converged: bool
    inner_iterations: int
    seconds: float
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.state.x

    def objective(self, problem: Problem) -> float:
        return problem.objective.value(self.state.x)


def default_m_scale(problem: Problem, sigma: float, factor: float | None) -> float:
    """Proximal scale M = m_scale * I, default 1e-6 * sigma.

    The proximal term exists to keep the Newton diagonal positive when the
    objective curvature and the box term both vanish; a tiny multiple of
    sigma achieves that without damping the outer iteration (a full
    sigma-sized proximal weight freezes progress on flat objectives).
    """
    if factor is not None:
        return factor * sigma
    return 1e-6 * sigma


def next_penalty(sigma: float, eta_p: float, prev_eta_p: float | None,
                 settings: AlmSettings) -> float:
    """Grow the penalty only when the primal residual stalls above target.

    Once the primal residual is at the requested tolerance there is nothing
    for a larger penalty to improve, and growing it anyway stiffens the
    subproblems to the point where dual progress freezes; hence the
    ``eta_p > tol`` guard.
    """
    if (prev_eta_p is not None
            and eta_p > settings.tol
            and eta_p > settings.primal_decrease * prev_eta_p):
        return min(sigma * settings.sigma_growth, settings.sigma_max)
    return sigma


def dual_feasibility(problem: Problem, state: IterateState) -> float:
    """Normalized dual stationarity residual at the current multipliers."""
    grad_f = problem.objective.grad(state.x)
    acc = grad_f + state.mu
    for blk, (lo, hi) in zip(problem.blocks, problem.block_offsets()):
        acc = acc + blk.A.T @ state.lam[lo:hi]
    return float(np.linalg.norm(acc) / (1.0 + np.linalg.norm(grad_f)))


def solve(problem: Problem, settings: AlmSettings = AlmSettings(),
          warm: IterateState | None = None) -> AlmResult:
    """Run the augmented Lagrangian method on ``problem``.

    ``warm`` restarts from a previous state (multipliers, penalty and
    primal point); shapes must match the problem.  When the iteration cap
    is reached the best available iterate and its residuals are returned
    with ``converged=False``.
    """
    n = problem.n
    mtot = problem.total_scenarios
    if warm is not None:
        if warm.x.size != n or warm.lam.size != mtot or warm.mu.size != n:
            raise ValueError("warm-start state does not match the problem shapes")
        x = warm.x.astype(float).copy()
        lam = np.maximum(warm.lam.astype(float), 0.0)
        mu = warm.mu.astype(float).copy()
        sigma = float(warm.sigma)
    else:
        x = np.zeros(n)
        lam = np.zeros(mtot)
        mu = np.zeros(n)
        sigma = settings.sigma0

    timers = Timers()
    t0 = perf_counter()
    hints = [min(blk.k + 10, blk.m) for blk in problem.blocks]
    trace: list[TraceEntry] = []
    prev_eta_p: float | None = None
    ref: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    residuals = Residuals(np.inf, np.inf, np.inf)
    converged = False
    inner_total = 0
    y = np.zeros(mtot)
    z = x.copy()
    outer_done = 0

    grad_scale = 1.0 + float(np.linalg.norm(problem.objective.grad(x)))
    eps_nu = settings.eps0
    delta_nu = settings.delta0 * settings.delta_decay

    timer_mark: dict[str, float] = {}
    for nu in range(settings.max_outer):
        m_scale = default_m_scale(problem, sigma, settings.m_scale_factor)
        sub = Subproblem(problem, lam, mu, sigma, m_scale, x_anchor=x,
                         hints=hints, timers=timers)
        if ref is None:
            ev0 = sub.evaluate(x)
            y0, z0 = sub.recover_primal(ev0)
            ref = (x.copy(), y0, z0)

        if settings.inner_tol is not None:
            tol_fn = None
            grad_tol = settings.inner_tol
        else:
            grad_tol = 0.0
            tol_fn = _make_tol_fn(sub, ref, eps_nu, delta_nu, sigma, m_scale,
                                  settings.inner_tol_floor * grad_scale)

        res = minimize_subproblem(
            sub, x, grad_tol=grad_tol, tol_fn=tol_fn,
            max_iter=settings.max_inner, ls_shrink=settings.ls_shrink,
            ls_slope=settings.ls_slope, max_backtracks=settings.max_backtracks,
        )
        inner_total += res.iterations
        x = res.x
        ev = res.final
        y, z = sub.recover_primal(ev)

        lam = _dual_update(sub, ev, sigma)
        mu = mu + sigma * (x - z)
        residuals = kkt_residuals(problem, x, y, z, lam, mu)
        state = IterateState(x=x, y=y, z=z, lam=lam, mu=mu, sigma=sigma,
                             outer_iter=nu + 1)
        dfeas = dual_feasibility(problem, state)
        totals = timers.as_dict()
        split = {name: totals.get(name, 0.0) - timer_mark.get(name, 0.0)
                 for name in ("sort", "projection", "gradient", "linear_solve")}
        timer_mark = totals
        trace.append(TraceEntry(
            outer=nu,
            sigma=sigma,
            inner_iterations=res.iterations,
            grad_norm=res.grad_norm,
            eta_p=residuals.eta_p,
            eta_d=residuals.eta_d,
            eta_r=residuals.eta_r,
            eta=residuals.eta,
            dual_feas=dfeas,
            objective=problem.objective.value(x),
            seconds=perf_counter() - t0,
            beta_sizes=tuple(st.proj.k1 - st.proj.k0 for st in ev.blocks),
            resorts=res.resorts,
            backtracks=res.backtracks,
            timing_split=split,
        ))
        outer_done = nu + 1
        if residuals.eta <= settings.tol:
            converged = True
            break
        sigma = next_penalty(sigma, residuals.eta_p, prev_eta_p, settings)
        prev_eta_p = residuals.eta_p
        ref = (x.copy(), y.copy(), z.copy())
        eps_nu *= settings.eps_decay
        delta_nu *= settings.delta_decay

    state = IterateState(x=x, y=y, z=z, lam=lam, mu=mu, sigma=sigma,
                         outer_iter=outer_done)
    return AlmResult(
        state=state,
        residuals=residuals,
        trace=trace,
        converged=converged,
        inner_iterations=inner_total,
        seconds=perf_counter() - t0,
        timings=timers.as_dict(),
    )


def _make_tol_fn(sub: Subproblem, ref, eps_nu: float, delta_nu: float,
                 sigma: float, m_scale: float, floor: float):
    ref_x, ref_y, ref_z = ref
    sqrt_m = np.sqrt(m_scale)

    def tol_fn(ev) -> float:
        rule = eps_nu / sigma
        if sqrt_m > 0.0:
            y_t, z_t = sub.recover_primal(ev)
            delta = np.sqrt(
                float(np.sum((ev.x - ref_x) ** 2))
                + float(np.sum((y_t - ref_y) ** 2))
                + float(np.sum((z_t - ref_z) ** 2))
            )
            rule = min(rule, delta_nu * sqrt_m * delta / sigma)
        return max(rule, floor)

    return tol_fn


def _dual_update(sub: Subproblem, ev, sigma: float) -> np.ndarray:
    """lam <- max(lam + sigma (G(x) - y), 0), block by block.

    Equals ``sigma * (v - proj(v))`` with ``v = G(x) + lam/sigma``, which is
    nonnegative by construction of the residual.
    """
    parts = [sigma * st.residual() for st in ev.blocks]
    return np.concatenate(parts) if parts else np.zeros(0)
