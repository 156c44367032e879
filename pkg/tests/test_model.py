import numpy as np
import pytest

from sqsolve.model import (
    ConstraintBlock,
    LinearObjective,
    Problem,
    QuadraticObjective,
    dual_objective,
    kkt_residuals,
    polar_cone_gap,
    superquantile,
)
from sqsolve.projection import Box
from sqsolve.topk import topk_sum


def tiny_min_instance():
    # minimize x1 + x2 over [-1,1]^2 with max(x) <= 0
    return Problem(
        objective=LinearObjective(c=np.array([1.0, 1.0])),
        blocks=(ConstraintBlock(A=np.eye(2), b=np.zeros(2), k=1),),
        box=Box(lower=-np.ones(2), upper=np.ones(2)),
    )


def test_objective_values_and_grads():
    lin = LinearObjective(c=np.array([1.0, 2.0]))
    x = np.array([1.0, 1.0])
    assert lin.value(x) == 3.0
    np.testing.assert_array_equal(lin.grad(x), [1.0, 2.0])
    np.testing.assert_array_equal(lin.hess_diag(), [0.0, 0.0])

    quad = QuadraticObjective(cdiag=np.array([2.0, 0.0]), c=np.array([0.0, 1.0]))
    assert quad.value(x) == 2.0
    np.testing.assert_array_equal(quad.grad(x), [2.0, 1.0])
    np.testing.assert_array_equal(quad.hess_diag(), [2.0, 0.0])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(31)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        obj = QuadraticObjective(cdiag=np.abs(rng.normal(size=n)), c=rng.normal(size=n))
        x = rng.normal(size=n)
        g = obj.grad(x)
        fd = np.empty(n)
        h = 1e-6
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd[i] = (obj.value(x + e) - obj.value(x - e)) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-8, atol=1e-7)


def test_objective_validation():
    with pytest.raises(ValueError):
        QuadraticObjective(cdiag=np.array([-1.0]), c=np.array([0.0]))
    with pytest.raises(ValueError):
        ConstraintBlock(A=np.eye(2), b=np.zeros(2), k=3)
    with pytest.raises(ValueError):
        Problem(
            objective=LinearObjective(c=np.zeros(3)),
            blocks=(ConstraintBlock(A=np.eye(2), b=np.zeros(2), k=1),),
            box=Box(lower=-np.ones(3), upper=np.ones(3)),
        )


def test_kkt_zero_at_analytic_optimum():
    prob = tiny_min_instance()
    x = np.array([-1.0, -1.0])
    y = x.copy()
    z = x.copy()
    lam = np.zeros(2)
    mu = np.array([-1.0, -1.0])
    res = kkt_residuals(prob, x, y, z, lam, mu)
    assert res.eta <= 1e-12
    np.testing.assert_allclose(dual_objective(prob, lam, mu), -2.0, atol=1e-14)


def test_kkt_dual_residual_with_zero_duals():
    prob = tiny_min_instance()
    x = np.array([-0.5, -0.5])
    res = kkt_residuals(prob, x, x, x, np.zeros(2), np.zeros(2))
    c = np.array([1.0, 1.0])
    expected = np.linalg.norm(c) / (1.0 + np.linalg.norm(c))
    np.testing.assert_allclose(res.eta_d, expected, rtol=1e-14)


def test_box_support_function_is_l1_norm():
    # dual objective with an in-cone lam isolates the box term
    prob = tiny_min_instance()
    rng = np.random.default_rng(32)
    for _ in range(50):
        mu = rng.normal(size=2)
        val = dual_objective(prob, np.zeros(2), mu)
        np.testing.assert_allclose(val, -np.abs(mu).sum(), atol=1e-14)


def _sample_cone_member(rng, m, k):
    # nonnegative w with max(w) <= sum(w)/k: lift all entries just enough
    if k >= m:
        return np.full(m, float(rng.random()))
    w = rng.random(m)
    delta = max(0.0, (k * w.max() - w.sum()) / (m - k))
    return w + delta


def test_polar_cone_gap():
    rng = np.random.default_rng(33)
    for _ in range(200):
        m = int(rng.integers(2, 20))
        k = int(rng.integers(1, m + 1))
        lam_blk = rng.random() * _sample_cone_member(rng, m, k)
        slack = polar_cone_gap(lam_blk, k)
        assert slack <= max(1.0, lam_blk.max(initial=0.0)) * 1e-12
    assert polar_cone_gap(np.array([1.0, 0.0]), 2) == 0.5
    assert polar_cone_gap(np.array([-1.0, 1.0]), 1) == 1.0


def test_dual_infeasible_multiplier_gives_minus_inf():
    prob = tiny_min_instance()
    lam = np.array([2.0, -1.0])
    assert dual_objective(prob, lam, np.zeros(2)) == -np.inf


def test_unbounded_box_sign_mismatch():
    prob = Problem(
        objective=LinearObjective(c=np.array([1.0])),
        blocks=(ConstraintBlock(A=np.ones((1, 1)), b=np.zeros(1), k=1),),
        box=Box(lower=np.array([-np.inf]), upper=np.array([np.inf])),
    )
    assert dual_objective(prob, np.zeros(1), np.array([1.0])) == -np.inf
    assert dual_objective(prob, np.zeros(1), np.array([0.0])) == 0.0


def test_weak_duality():
    rng = np.random.default_rng(34)
    tried = 0
    for _ in range(500):
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 15))
        k = int(rng.integers(1, m + 1))
        prob = Problem(
            objective=QuadraticObjective(cdiag=np.abs(rng.normal(size=n)) + 0.1,
                                         c=rng.normal(size=n)),
            blocks=(ConstraintBlock(A=rng.normal(size=(m, n)), b=rng.normal(size=m), k=k),),
            box=Box(lower=-np.ones(n), upper=np.ones(n)),
        )
        # feasible primal point, or skip
        x = np.clip(rng.normal(size=n), -1, 1)
        if topk_sum(prob.blocks[0].values(x), k) > 0:
            continue
        # admissible multipliers
        lam = rng.random() * _sample_cone_member(rng, m, k)
        mu = rng.normal(size=n) * 0.5
        dval = dual_objective(prob, lam, mu)
        if not np.isfinite(dval):
            continue
        pval = prob.objective.value(x)
        scale = max(1.0, abs(pval))
        assert dval <= pval + 1e-10 * scale
        tried += 1
    assert tried > 100


def test_superquantile_matches_variational_form():
    # tail mean == min over t of { t + mean of positive excess / (1 - tau) },
    # attained at the k-th largest value
    rng = np.random.default_rng(35)
    for _ in range(300):
        m = int(rng.integers(1, 40))
        k = int(rng.integers(1, m + 1))
        v = rng.normal(size=m) * 3
        t = np.sort(v)[::-1][k - 1]
        variational = t + np.sum(np.maximum(v - t, 0.0)) / k
        np.testing.assert_allclose(superquantile(v, k), variational, rtol=1e-10, atol=1e-12)
        # constraint equivalence
        assert (topk_sum(v, k) <= 0) == (variational <= 1e-15 * max(1, np.abs(v).max()) + 0)


def test_residuals_nonnegative_and_max():
    prob = tiny_min_instance()
    rng = np.random.default_rng(36)
    for _ in range(50):
        x = rng.normal(size=2)
        y = rng.normal(size=2)
        z = rng.normal(size=2)
        lam = np.abs(rng.normal(size=2))
        mu = rng.normal(size=2)
        res = kkt_residuals(prob, x, y, z, lam, mu)
        assert res.eta_p >= 0 and res.eta_d >= 0 and res.eta_r >= 0
        assert res.eta == max(res.eta_p, res.eta_d, res.eta_r)
