"""Synthetic instance generation and quantile-regression problem building.

Synthetic problems follow a fixed recipe: scenario matrices are normal
draws normalized to unit column infinity-norm, offsets are shifted so that
one sampled box point is feasible for every block and lands on the
boundary of each block it would otherwise violate.  Quantile regression at
level ``tau`` is posed over ``(coefficients, level)`` with a single
superquantile block on the residuals; a grid of levels is solved in order
with warm starts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .alm import AlmSettings, IterateState, solve
from .model import (
    ConstraintBlock,
    LinearObjective,
    Problem,
    QuadraticObjective,
    superquantile,
)
from .projection import Box
from .topk import topk_sum

__all__ = [
    "SynthSpec",
    "generate_synthetic",
    "QrSpec",
    "build_quantile_regression",
    "qr_coefficients",
    "PathEntry",
    "solve_path",
    "load_quantile_csv",
]


@dataclass(frozen=True)
class SynthSpec:
    """Shape, risk level, objective kind and seed of a synthetic instance."""

    m: int
    n: int
    L: int = 1
    k_fraction: float = 0.01
    objective: str = "linear"
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.L < 1:
            raise ValueError("m, n and L must be positive")
        if not 0.0 < self.k_fraction <= 1.0:
            raise ValueError("k_fraction must lie in (0, 1]")
        if self.objective not in ("linear", "quad"):
            raise ValueError(f"objective must be 'linear' or 'quad', got {self.objective!r}")

    @property
    def k(self) -> int:
        return max(1, int(np.ceil(self.k_fraction * self.m)))


def generate_synthetic(spec: SynthSpec) -> tuple[Problem, np.ndarray]:
    """Deterministically generate a feasible instance and its witness point.

    Seeding: one child stream per consumer, spawned in a fixed order from
    the spec seed (objective, witness points, then one per block; within a
    block the matrix is drawn before the offset; within the objective the
    linear term before the curvature).  The witness is the sampled box
    point whose worst normalized constraint value is smallest; each block's
    offset is shifted down just enough to make the witness feasible, so
    binding blocks sit exactly on their boundary.
    """
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(2 + spec.L)
    rng_obj = np.random.default_rng(children[0])
    rng_wit = np.random.default_rng(children[1])

    m, n, L, k = spec.m, spec.n, spec.L, spec.k

    c = rng_obj.normal(0.0, 1.0, size=n)
    if spec.objective == "quad":
        objective = QuadraticObjective(cdiag=np.abs(rng_obj.normal(0.0, 1.0, size=n)), c=c)
    else:
        objective = LinearObjective(c=c)

    n_points = max(1, int(np.ceil(np.log(m * L))))
    points = -1.0 + 2.0 * rng_wit.random((n_points, n))

    mats, offs = [], []
    tvals = np.empty((L, n_points))
    for ell in range(L):
        rng = np.random.default_rng(children[2 + ell])
        a = rng.normal(0.0, 10.0, size=(m, n))
        colmax = np.abs(a).max(axis=0)
        a /= np.where(colmax > 0, colmax, 1.0)
        b = rng.normal(0.0, 1.0, size=m)
        vals = points @ a.T + b
        for p in range(n_points):
            tvals[ell, p] = topk_sum(vals[p], k)
        mats.append(a)
        offs.append(b)

    p_star = int(np.argmin(np.max(tvals / k, axis=0)))
    witness = points[p_star]

    blocks = []
    for ell in range(L):
        shift = max(tvals[ell, p_star], 0.0) / k
        blocks.append(ConstraintBlock(A=mats[ell], b=offs[ell] - shift, k=k))

    box = Box(lower=-np.ones(n), upper=np.ones(n))
    problem = Problem(objective=objective, blocks=tuple(blocks), box=box)

    worst = max(topk_sum(blk.values(witness), k) for blk in problem.blocks)
    if worst > 1e-10:
        raise RuntimeError(f"generated witness violates a constraint by {worst:.3e}")
    return problem, witness


@dataclass(frozen=True)
class QrSpec:
    """Data and level grid for a quantile-regression solution path."""

    features: np.ndarray
    response: np.ndarray
    tau_grid: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.response, dtype=float)
        a = np.asarray(self.features, dtype=float)
        if a.size == 0:
            a = np.zeros((b.size, 0))
        elif a.ndim == 1:
            a = a[:, None]
        if a.shape[0] != b.size:
            raise ValueError("features and response must agree in length")
        taus = tuple(float(t) for t in self.tau_grid)
        if any(not 0.0 < t < 1.0 for t in taus):
            raise ValueError("every tau must lie in (0, 1)")
        if any(t2 <= t1 for t1, t2 in zip(taus, taus[1:])):
            raise ValueError("tau_grid must be strictly increasing")
        object.__setattr__(self, "features", a)
        object.__setattr__(self, "response", b)
        object.__setattr__(self, "tau_grid", taus)

    @property
    def m(self) -> int:
        return self.response.size

    @property
    def n_features(self) -> int:
        return self.features.shape[1] if self.features.size else 0


def _tail_count(tau: float, m: int) -> int:
    k = (1.0 - tau) * m
    if abs(k - round(k)) > 1e-9 * m:
        raise ValueError(f"(1 - tau) * m = {k} is not an integer; adjust tau or m")
    k = int(round(k))
    if not 1 <= k <= m:
        raise ValueError(f"tau = {tau} leaves no scenarios in the tail")
    return k


def build_quantile_regression(spec: QrSpec, tau: float) -> Problem:
    """Pose quantile regression at level ``tau`` as a superquantile program.

    Decision variables are ``(coefficients, level)``; one block demands the
    tail mean of ``response - features @ coef - level`` be nonpositive and
    the objective moves the level down against the mean prediction.  For
    ``tau > 0.5`` the problem is built at level ``1 - tau`` on sign-flipped
    data, which shares the same optimal coefficients; map the level back
    with :func:`qr_coefficients`.
    """
    a, b = spec.features, spec.response
    m, nf = spec.m, spec.n_features
    if tau > 0.5:
        a, b = -a, -b
        tau = 1.0 - tau
    k = _tail_count(tau, m)
    a_block = np.hstack([-a, -np.ones((m, 1))]) if nf else -np.ones((m, 1))
    abar = a.mean(axis=0) if nf else np.zeros(0)
    c = np.concatenate([abar, [1.0]])
    objective = LinearObjective(c=c)
    block = ConstraintBlock(A=a_block, b=b, k=k)
    box = Box(lower=np.full(nf + 1, -np.inf), upper=np.full(nf + 1, np.inf))
    return Problem(objective=objective, blocks=(block,), box=box)


def qr_coefficients(spec: QrSpec, tau: float, x_solver: np.ndarray
                    ) -> tuple[np.ndarray, float, float]:
    """Map a solver point back to (coefficients, level, objective) at ``tau``.

    For ``tau <= 0.5`` this just splits the solver vector.  For reversed
    problems the coefficients carry over and the level is recomputed as the
    tail mean of the original residuals, which restores the original-form
    objective as well.
    """
    coef = np.asarray(x_solver[:-1], dtype=float)
    if tau <= 0.5:
        level = float(x_solver[-1])
    else:
        resid = spec.response - (spec.features @ coef if spec.n_features else 0.0)
        level = superquantile(resid, _tail_count(tau, spec.m))
    abar = spec.features.mean(axis=0) if spec.n_features else np.zeros(0)
    objective = level + float(coef @ abar)
    return coef, level, objective


@dataclass
class PathEntry:
    tau: float
    coefficients: np.ndarray
    level: float
    objective: float
    eta: float
    converged: bool
    outer_iterations: int
    inner_iterations: int
    seconds: float
    timings: dict[str, float] = field(default_factory=dict)
    error: str | None = None


def solve_path(spec: QrSpec, settings: AlmSettings = AlmSettings(),
               warm_start: bool = True) -> list[PathEntry]:
    """Solve the level grid in order, warm-starting each solve from the last.

    Per-level failures are recorded in the entry and the path continues.
    """
    entries: list[PathEntry] = []
    state: IterateState | None = None
    for tau in spec.tau_grid:
        t0 = perf_counter()
        try:
            problem = build_quantile_regression(spec, tau)
            result = solve(problem, settings, warm=state if warm_start else None)
        except Exception as exc:  # record and continue with the next level
            entries.append(PathEntry(
                tau=tau, coefficients=np.zeros(spec.n_features), level=np.nan,
                objective=np.nan, eta=np.inf, converged=False,
                outer_iterations=0, inner_iterations=0,
                seconds=perf_counter() - t0, error=str(exc)))
            state = None
            continue
        coef, level, objective = qr_coefficients(spec, tau, result.state.x)
        entries.append(PathEntry(
            tau=tau,
            coefficients=coef,
            level=level,
            objective=objective,
            eta=result.residuals.eta,
            converged=result.converged,
            outer_iterations=result.state.outer_iter,
            inner_iterations=result.inner_iterations,
            seconds=result.seconds,
            timings=dict(result.timings),
        ))
        state = result.state if warm_start else None
    return entries


def load_quantile_csv(path, response: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read regression data from a CSV with a header row.

    The named column is the response; every other column must be numeric
    and becomes a feature.  Parse failures report the offending row and
    column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if response not in header:
            raise ValueError(
                f"{path}: response column {response!r} not in header {header}")
        r_idx = header.index(response)
        f_idx = [i for i in range(len(header)) if i != r_idx]
        feats: list[list[float]] = []
        resp: list[float] = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for i in (*f_idx, r_idx):
                cell = row[i].strip()
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {row_no}, column {header[i]!r}: "
                        f"could not parse {cell!r} as a number") from None
            feats.append(parsed[:-1])
            resp.append(parsed[-1])
    features = np.asarray(feats, dtype=float)
    if features.size == 0:
        features = features.reshape(len(resp), len(f_idx))
    return features, np.asarray(resp, dtype=float), [header[i] for i in f_idx]
