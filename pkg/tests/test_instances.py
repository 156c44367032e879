import numpy as np
import pytest

from sqsolve.alm import AlmSettings, solve
from sqsolve.instances import (
    QrSpec,
    SynthSpec,
    build_quantile_regression,
    generate_synthetic,
    load_quantile_csv,
    qr_coefficients,
    solve_path,
)
from sqsolve.model import QuadraticObjective, superquantile
from sqsolve.oracle import analytic_qr_intercept, subgradient_reference
from sqsolve.topk import topk_sum


def test_generator_deterministic():
    spec = SynthSpec(m=64, n=8, L=1, k_fraction=0.25, objective="linear", seed=42)
    p1, w1 = generate_synthetic(spec)
    p2, w2 = generate_synthetic(spec)
    np.testing.assert_array_equal(w1, w2)
    np.testing.assert_array_equal(p1.objective.c, p2.objective.c)
    for b1, b2 in zip(p1.blocks, p2.blocks):
        np.testing.assert_array_equal(b1.A, b2.A)
        np.testing.assert_array_equal(b1.b, b2.b)


def test_generator_unit_column_norms():
    for seed in range(5):
        spec = SynthSpec(m=50, n=6, L=2, k_fraction=0.1, objective="quad", seed=seed)
        prob, _ = generate_synthetic(spec)
        for blk in prob.blocks:
            np.testing.assert_array_equal(np.abs(blk.A).max(axis=0), np.ones(6))


def test_generator_witness_feasible_many_seeds():
    rng = np.random.default_rng(0)
    for seed in range(60):
        m = int(rng.integers(20, 120))
        n = int(rng.integers(2, 10))
        L = int(rng.integers(1, 4))
        spec = SynthSpec(m=m, n=n, L=L,
                         k_fraction=float(rng.choice([0.01, 0.1, 0.3])),
                         objective=str(rng.choice(["linear", "quad"])), seed=seed)
        prob, witness = generate_synthetic(spec)
        assert np.all(np.abs(witness) <= 1.0)
        for blk in prob.blocks:
            assert topk_sum(blk.values(witness), blk.k) <= 1e-10


def test_generator_quadratic_objective_kind():
    spec = SynthSpec(m=32, n=4, k_fraction=0.5, objective="quad", seed=3)
    prob, _ = generate_synthetic(spec)
    assert isinstance(prob.objective, QuadraticObjective)
    assert np.all(prob.objective.cdiag >= 0)


def test_generator_validation():
    with pytest.raises(ValueError):
        SynthSpec(m=0, n=4, k_fraction=0.1)
    with pytest.raises(ValueError):
        SynthSpec(m=4, n=4, k_fraction=0.0)
    with pytest.raises(ValueError):
        SynthSpec(m=4, n=4, k_fraction=0.5, objective="cubic")


def test_qr_intercept_only_topquarter():
    spec = QrSpec(features=np.zeros((4, 0)), response=np.array([4.0, 3.0, 2.0, 1.0]),
                  tau_grid=(0.75,))
    prob = build_quantile_regression(spec, 0.75)
    result = solve(prob, AlmSettings(tol=1e-10))
    assert result.converged
    coef, level, objective = qr_coefficients(spec, 0.75, result.state.x)
    assert objective == pytest.approx(4.0, abs=1e-8)
    assert level == pytest.approx(analytic_qr_intercept(spec.response, 0.75), abs=1e-8)


def test_qr_intercept_only_median():
    spec = QrSpec(features=np.zeros((4, 0)), response=np.array([4.0, 3.0, 2.0, 1.0]),
                  tau_grid=(0.5,))
    prob = build_quantile_regression(spec, 0.5)
    result = solve(prob, AlmSettings(tol=1e-10))
    _, _, objective = qr_coefficients(spec, 0.5, result.state.x)
    assert objective == pytest.approx(3.5, abs=1e-8)


def test_qr_rejects_noninteger_tail():
    spec = QrSpec(features=np.zeros((5, 0)), response=np.arange(5.0), tau_grid=(0.5,))
    with pytest.raises(ValueError):
        build_quantile_regression(spec, 0.3)


def test_qr_reversal_above_half():
    rng = np.random.default_rng(61)
    m, nf = 40, 3
    a = rng.normal(size=(m, nf))
    b = a @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=m)
    spec = QrSpec(features=a, response=b, tau_grid=(0.75,))
    prob = build_quantile_regression(spec, 0.75)
    # reversed problem carries tail count tau*m of the flipped data
    assert prob.blocks[0].k == int(round(0.75 * m))
    result = solve(prob, AlmSettings(tol=1e-9))
    assert result.converged
    coef, level, objective = qr_coefficients(spec, 0.75, result.state.x)
    # direct (unreversed) solve of the same problem for comparison: build at
    # tau'=0.75 manually via the original-form block
    direct = build_quantile_regression(
        QrSpec(features=-a, response=-b, tau_grid=(0.25,)), 0.25)
    # consistency: level is the tail mean of original residuals
    resid = b - a @ coef
    np.testing.assert_allclose(level, superquantile(resid, int(round(0.25 * m))),
                               rtol=1e-12)
    # objective value must beat any nearby perturbation (local optimality in
    # the original form)
    for _ in range(20):
        other = coef + rng.normal(size=nf) * 0.05
        other_obj = superquantile(b - a @ other, int(round(0.25 * m))) + \
            other @ a.mean(axis=0)
        assert objective <= other_obj + 1e-7


def test_qr_matches_subgradient_reference():
    # the mapped solution minimizes the original-form objective for any tau,
    # so the reference always runs on the original data
    rng = np.random.default_rng(62)
    for trial in range(6):
        m = 20 * int(rng.integers(2, 8))
        nf = int(rng.integers(1, 4))
        tau = float(rng.choice([0.25, 0.5, 0.75, 0.9]))
        a = rng.normal(size=(m, nf))
        b = a @ rng.normal(size=nf) + rng.normal(size=m) * 0.3
        spec = QrSpec(features=a, response=b, tau_grid=(tau,))
        prob = build_quantile_regression(spec, tau)
        result = solve(prob, AlmSettings(tol=1e-9))
        assert result.converged
        _, _, objective = qr_coefficients(spec, tau, result.state.x)
        ref_val, _ = subgradient_reference(a, b, tau, iters=4000,
                                           ref_value=objective)
        assert abs(ref_val - objective) <= 2e-3 * max(1.0, abs(objective))


def test_solve_path_single_tau_equals_cold():
    rng = np.random.default_rng(63)
    a = rng.normal(size=(60, 2))
    b = a @ np.array([0.5, -0.25]) + rng.normal(size=60) * 0.2
    spec = QrSpec(features=a, response=b, tau_grid=(0.5,))
    entries = solve_path(spec, AlmSettings(tol=1e-8))
    assert len(entries) == 1
    assert entries[0].converged
    prob = build_quantile_regression(spec, 0.5)
    cold = solve(prob, AlmSettings(tol=1e-8))
    np.testing.assert_allclose(entries[0].coefficients, cold.state.x[:-1], atol=1e-6)


def test_solve_path_grid_in_order_with_warm_start():
    rng = np.random.default_rng(64)
    m = 200
    a = rng.normal(size=(m, 2))
    b = a @ np.array([1.0, 2.0]) + rng.normal(size=m)
    grid = (0.05, 0.1, 0.25, 0.5)
    spec = QrSpec(features=a, response=b, tau_grid=grid)
    entries = solve_path(spec, AlmSettings(tol=1e-6))
    assert [e.tau for e in entries] == list(grid)
    assert all(e.converged for e in entries)
    assert all(e.eta <= 1e-6 for e in entries)
    # the tail mean over a smaller tail is larger: levels grow with tau
    levels = [e.level for e in entries]
    assert all(l1 <= l2 + 1e-9 for l1, l2 in zip(levels, levels[1:]))


def test_tau_grid_validation():
    with pytest.raises(ValueError):
        QrSpec(features=np.zeros((4, 0)), response=np.arange(4.0), tau_grid=(0.5, 0.25))
    with pytest.raises(ValueError):
        QrSpec(features=np.zeros((4, 0)), response=np.arange(4.0), tau_grid=(1.5,))


def test_load_quantile_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x1,y,x2\n1.0,2.0,3.0\n4.0,5.0,6.0\n")
    features, response, names = load_quantile_csv(path, "y")
    np.testing.assert_array_equal(features, [[1.0, 3.0], [4.0, 6.0]])
    np.testing.assert_array_equal(response, [2.0, 5.0])
    assert names == ["x1", "x2"]


def test_load_quantile_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,y\n1.0,2.0\noops,3.0\n")
    with pytest.raises(ValueError, match="row 3"):
        load_quantile_csv(path, "y")
    with pytest.raises(ValueError, match="response column"):
        load_quantile_csv(path, "z")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(ValueError, match="header"):
        load_quantile_csv(tmp_path / "empty.csv", "y")
