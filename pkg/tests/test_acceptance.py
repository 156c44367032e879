"""Acceptance suite: one test per release criterion.

Each test prints a single PASS line when its criterion holds (run with
``pytest -s`` to see them); tolerances are fixed here, not configurable.
"""

import time

import numpy as np
import pytest

from sqsolve.alm import AlmSettings, IterateState, dual_feasibility, solve
from sqsolve.instances import (
    QrSpec,
    SynthSpec,
    build_quantile_regression,
    generate_synthetic,
    qr_coefficients,
    solve_path,
)
from sqsolve.jacobian import (
    GENERAL,
    build_reduced_factor,
    classify,
    jacobian_apply,
    q_blocks,
)
from sqsolve.model import (
    ConstraintBlock,
    LinearObjective,
    Problem,
    QuadraticObjective,
    kkt_residuals,
)
from sqsolve.newton import NewtonSystem, Subproblem, solve_newton_system
from sqsolve.oracle import (
    analytic_qr_intercept,
    brute_force_project,
    dense_jacobian_matrix,
    dense_q_matrix,
    subgradient_reference,
)
from sqsolve.problem_io import build_report
from sqsolve.projection import Box, project_topk, project_topk_with_hint
from sqsolve.jacobian import ReducedFactor
from sqsolve.topk import topk_sum


def report(name: str, detail: str = ""):
    print(f"PASS {name}" + (f" ({detail})" if detail else ""))


def test_criterion_01_projection_matches_oracle():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(10_000):
        m = int(rng.integers(1, 201))
        scale = 10.0 ** rng.integers(-2, 3)
        y = rng.normal(size=m) * scale + rng.normal() * scale
        k = int(rng.integers(1, m + 1))
        fast = project_topk(y, k)
        slow = brute_force_project(y, k).value
        worst = max(worst, float(np.abs(fast.ybar - slow.ybar).max()))
        assert worst <= 1e-9
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    report("criterion 1: projection == enumeration oracle on 1e4 instances",
           f"max gap {worst:.1e}, {elapsed:.1f}s")


def test_criterion_02_closed_form_special_cases():
    rng = np.random.default_rng(1002)
    for _ in range(1000):
        m = int(rng.integers(1, 120))
        y = rng.normal(size=m) * 10.0 ** rng.integers(-2, 3)
        p1 = project_topk(y, 1).ybar
        assert np.array_equal(p1, np.minimum(y, 0.0))
        pm = project_topk(y, m).ybar
        assert np.array_equal(pm, y - max(float(np.sum(y)), 0.0) / m)
    report("criterion 2: k=1 and k=m closed forms match exactly on 1e3 vectors")


def test_criterion_03_jacobian_finite_differences():
    rng = np.random.default_rng(1003)
    checked = 0
    worst = 0.0
    while checked < 1000:
        m = int(rng.integers(2, 30))
        k = int(rng.integers(1, m + 1))
        y = rng.normal(size=m) * 2
        proj = project_topk(y, k)
        case = classify(y, k, proj)
        if not case.differentiable:
            continue
        d = rng.normal(size=m)
        d /= np.linalg.norm(d)
        h = 1e-6 * (1.0 + np.linalg.norm(y))
        fd = (project_topk(y + h * d, k).ybar - project_topk(y - h * d, k).ybar) / (2 * h)
        jd_sorted = jacobian_apply(case, q_blocks(proj), d[proj.perm])
        jd = np.empty(m)
        jd[proj.perm] = jd_sorted
        rel = np.linalg.norm(fd - jd) / max(1.0, np.linalg.norm(jd))
        worst = max(worst, rel)
        assert rel <= 1e-5
        checked += 1
    report("criterion 3: Jacobian matches finite differences at 1e3 points",
           f"max rel err {worst:.1e}")


def test_criterion_04_q_algebra():
    worst_idem = 0.0
    for k in range(1, 51):
        for k0 in range(0, k):
            for k1 in range(k, 61):
                q = dense_q_matrix(k, k0, k1)
                assert np.array_equal(q, q.T)
                gap = float(np.abs(q @ q - q).max())
                worst_idem = max(worst_idem, gap)
                assert gap <= 1e-12
    rng = np.random.default_rng(1004)
    worst_fac = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 40))
        n = int(rng.integers(1, 10))
        k = int(rng.integers(1, m + 1))
        y = rng.normal(size=m) * 3
        a = rng.normal(size=(m, n))
        proj = project_topk(y, k)
        case = classify(y, k, proj)
        factor = build_reduced_factor(a, proj, case)
        dense_j = dense_jacobian_matrix(m, k, proj.pair.k0, proj.pair.k1, case.kind)
        want = a[proj.perm].T @ (np.eye(m) - dense_j) @ a[proj.perm]
        got = factor.ttilde.T @ factor.ttilde
        norm_a2 = max(1.0, np.linalg.norm(a, 2) ** 2)
        gap = float(np.abs(want - got).max()) / norm_a2
        worst_fac = max(worst_fac, gap)
        assert gap <= 1e-10
    report("criterion 4: Q symmetric/idempotent and factor matches dense product",
           f"idem {worst_idem:.1e}, factor {worst_fac:.1e}")


def test_criterion_05_smw_equivalence():
    rng = np.random.default_rng(1005)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        r = int(rng.integers(0, n + 2))
        ddiag = np.abs(rng.normal(size=n)) + 0.05
        tt = rng.normal(size=(r, n))
        sigma = float(10.0 ** rng.uniform(-2, 2))
        system = NewtonSystem(ddiag=ddiag, factors=[ReducedFactor(tt, np.arange(r))],
                              sigma=sigma, active=np.array([r > 0]))
        rhs = rng.normal(size=n)
        got = solve_newton_system(system, rhs)
        want = np.linalg.solve(np.diag(ddiag) + sigma * tt.T @ tt, rhs)
        rel = float(np.linalg.norm(got - want) / max(1e-30, np.linalg.norm(want)))
        worst = max(worst, rel)
        assert rel <= 1e-8
    report("criterion 5: reduced-space solve == dense solve on 1e3 systems",
           f"max rel err {worst:.1e}")


def _random_subproblem(rng):
    n = int(rng.integers(1, 8))
    L = int(rng.integers(1, 3))
    blocks = []
    for _ in range(L):
        m = int(rng.integers(1, 30))
        blocks.append(ConstraintBlock(A=rng.normal(size=(m, n)),
                                      b=rng.normal(size=m),
                                      k=int(rng.integers(1, m + 1))))
    if rng.integers(0, 2):
        obj = QuadraticObjective(cdiag=np.abs(rng.normal(size=n)) + 0.05,
                                 c=rng.normal(size=n))
    else:
        obj = LinearObjective(c=rng.normal(size=n))
    prob = Problem(objective=obj, blocks=tuple(blocks),
                   box=Box(lower=-np.ones(n), upper=np.ones(n)))
    sub = Subproblem(prob,
                     lam=np.abs(rng.normal(size=prob.total_scenarios)),
                     mu=rng.normal(size=n),
                     sigma=float(10.0 ** rng.uniform(-1, 1)),
                     m_scale=float(rng.random()),
                     x_anchor=rng.normal(size=n))
    return sub, n


def test_criterion_06_subproblem_gradient_check():
    rng = np.random.default_rng(1006)
    worst = 0.0
    for _ in range(1000):
        sub, n = _random_subproblem(rng)
        x = rng.normal(size=n)
        ev = sub.evaluate(x)
        g = sub.gradient_from(ev)
        # support containment of every block residual
        for st in ev.blocks:
            r = st.residual()
            assert np.all(r >= 0.0)
            assert int(np.count_nonzero(r)) <= st.proj.k1
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        h = 1e-6 * (1.0 + np.linalg.norm(x))
        fd = (sub.value(x + h * d) - sub.value(x - h * d)) / (2 * h)
        rel = abs(fd - g @ d) / max(1.0, abs(g @ d))
        worst = max(worst, rel)
        assert rel <= 1e-5
    report("criterion 6: subproblem gradient matches central differences",
           f"max rel err {worst:.1e}")


def _tiny_instances():
    max_le_zero = Problem(
        objective=LinearObjective(c=np.array([1.0, 1.0])),
        blocks=(ConstraintBlock(A=np.eye(2), b=np.zeros(2), k=1),),
        box=Box(lower=-np.ones(2), upper=np.ones(2)),
    )
    sum_le_zero = Problem(
        objective=LinearObjective(c=np.array([-1.0, -1.0])),
        blocks=(ConstraintBlock(A=np.eye(2), b=np.zeros(2), k=2),),
        box=Box(lower=-np.ones(2), upper=np.ones(2)),
    )
    return max_le_zero, sum_le_zero


def test_criterion_07_dual_feasibility_identity():
    prob, _ = _tiny_instances()
    settings = AlmSettings(tol=1e-8, m_scale_factor=0.0, inner_tol=1e-12,
                           max_outer=30)
    result = solve(prob, settings)
    assert result.converged
    worst = max(entry.dual_feas for entry in result.trace)
    assert worst <= 1e-6
    report("criterion 7: exact subproblems with M=0 stay dual feasible",
           f"max dual residual {worst:.1e} over {len(result.trace)} iterations")


def test_criterion_08_analytic_instances():
    prob1, prob2 = _tiny_instances()
    t0 = time.perf_counter()
    r1 = solve(prob1, AlmSettings(tol=1e-8))
    r2 = solve(prob2, AlmSettings(tol=1e-8))
    elapsed = time.perf_counter() - t0
    assert r1.converged and r1.residuals.eta <= 1e-8
    assert r2.converged and r2.residuals.eta <= 1e-8
    obj1 = prob1.objective.value(r1.state.x)
    obj2 = prob2.objective.value(r2.state.x)
    assert obj1 == pytest.approx(-2.0, abs=1e-8)
    assert obj2 == pytest.approx(0.0, abs=1e-8)
    assert elapsed < 1.0
    report("criterion 8: analytic instances reach -2 and 0 at 1e-8",
           f"{elapsed * 1000:.0f} ms")


def test_criterion_09_desk_scale_synthetic():
    lines = []
    for kind in ("linear", "quad"):
        spec = SynthSpec(m=2 ** 14, n=2 ** 7, L=1, k_fraction=0.01,
                         objective=kind, seed=7)
        prob, _ = generate_synthetic(spec)
        settings = AlmSettings(tol=1e-8, max_outer=40)
        t0 = time.perf_counter()
        result = solve(prob, settings)
        elapsed = time.perf_counter() - t0
        assert result.converged
        assert result.residuals.eta <= 1e-8
        assert result.state.outer_iter <= 40
        assert elapsed <= 60.0
        res = kkt_residuals(prob, result.state.x, result.state.y,
                            result.state.z, result.state.lam, result.state.mu)
        rep = build_report(prob, result, settings, res)
        for key in ("sort", "gradient", "linear_solve"):
            assert key in rep["timing_percent"]
        lines.append(f"{kind}: eta {result.residuals.eta:.1e}, "
                     f"{result.state.outer_iter} outer, {elapsed:.1f}s")
    report("criterion 9: 2^14 x 2^7 instances solve to 1e-8 with timing report",
           "; ".join(lines))


def test_criterion_10_inequality_projection_optimality():
    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(2, 60))
        k = int(rng.integers(1, m + 1))
        g = np.sort(rng.normal(size=m) * 2)[::-1]
        ybar = project_topk(g, k).ybar
        lhs = float(np.sum(np.maximum(g - ybar, 0.0) ** 2))
        z = rng.normal(size=(1000, m))
        shift = np.maximum([topk_sum(row, k) for row in z], 0.0) / k
        feasible = z - shift[:, None] - rng.random((1000, 1))
        rhs = np.sum(np.maximum(g[None, :] - feasible, 0.0) ** 2, axis=1)
        gap = float((lhs - rhs).max())
        worst = max(worst, gap)
        assert gap <= 1e-10
    report("criterion 10: projection optimal for the one-sided distance too",
           f"max violation {worst:.1e}")


def test_criterion_11_quantile_regression():
    # analytic intercept-only optimum
    response = np.array([4.0, 3.0, 2.0, 1.0])
    spec0 = QrSpec(features=np.zeros((4, 0)), response=response, tau_grid=(0.75,))
    prob = build_quantile_regression(spec0, 0.75)
    result = solve(prob, AlmSettings(tol=1e-10))
    _, level, objective = qr_coefficients(spec0, 0.75, result.state.x)
    want = analytic_qr_intercept(response, 0.75)
    assert abs(objective - want) <= 1e-8
    assert abs(level - want) <= 1e-8

    # small random problems against the subgradient reference
    rng = np.random.default_rng(1011)
    for _ in range(4):
        m = 40 * int(rng.integers(1, 6))
        nf = int(rng.integers(1, 4))
        tau = float(rng.choice([0.25, 0.5, 0.75]))
        a = rng.normal(size=(m, nf))
        b = a @ rng.normal(size=nf) + rng.normal(size=m) * 0.5
        spec = QrSpec(features=a, response=b, tau_grid=(tau,))
        res = solve(build_quantile_regression(spec, tau), AlmSettings(tol=1e-9))
        assert res.converged
        _, _, obj = qr_coefficients(spec, tau, res.state.x)
        ref, _ = subgradient_reference(a, b, tau, iters=4000, ref_value=obj)
        assert abs(ref - obj) <= 1e-3 * max(1.0, abs(obj))

    # 22-level grid at m = 1e5: warm-started path vs cold solves
    rng = np.random.default_rng(1012)
    m = 100_000
    a = rng.normal(size=(m, 4))
    b = a @ np.array([1.0, -0.5, 0.25, 2.0]) + rng.standard_t(3, size=m)
    taus = (0.001, 0.01) + tuple(np.round(np.arange(0.025, 0.501, 0.025), 3))
    assert len(taus) == 22
    spec = QrSpec(features=a, response=b, tau_grid=taus)
    warm = solve_path(spec, AlmSettings(tol=1e-4), warm_start=True)
    assert all(e.converged and e.eta <= 1e-4 for e in warm)
    cold = solve_path(spec, AlmSettings(tol=1e-4), warm_start=False)
    assert all(e.converged for e in cold)
    warm_median = float(np.median([e.outer_iterations for e in warm]))
    cold_median = float(np.median([e.outer_iterations for e in cold]))
    assert warm_median <= cold_median
    report("criterion 11: quantile regression analytic/reference/path checks",
           f"warm median {warm_median:g} <= cold median {cold_median:g} outer iterations")


def test_criterion_12_generator_contract():
    rng = np.random.default_rng(1012)
    worst = 0.0
    for seed in range(100):
        spec = SynthSpec(
            m=int(rng.integers(16, 200)),
            n=int(rng.integers(2, 12)),
            L=int(rng.integers(1, 4)),
            k_fraction=float(rng.choice([0.01, 0.1, 0.25])),
            objective=str(rng.choice(["linear", "quad"])),
            seed=seed,
        )
        prob, witness = generate_synthetic(spec)
        for blk in prob.blocks:
            assert np.array_equal(np.abs(blk.A).max(axis=0), np.ones(spec.n))
            t = topk_sum(blk.values(witness), blk.k)
            worst = max(worst, t)
            assert t <= 1e-10
    report("criterion 12: 100 seeded instances have exact unit columns and "
           "feasible witnesses", f"max violation {worst:.1e}")
