import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lassosse.model import LtiSystem, build_stacked_model, generate_random_instance, simulate
from lassosse.oracle import exact_decode
from lassosse.solvers import (
    DivergenceError,
    SolverConfig,
    UnrecoverableStateError,
    block_hard_threshold,
    default_lambda,
    ista_step,
    lasso_objective,
    lipschitz_constant,
    refine_state,
    resolve_config,
    soft_threshold,
    solve_block_sparse,
    solve_lasso,
    subgradient_residuals,
    write_trace,
)

from conftest import three_sensors

finite = st.floats(-1e6, 1e6, allow_nan=False)


def window_instance(n, p, s, tau, seed, noise=0.0):
    from lassosse.model import InstanceConfig

    sys, x0, sc = generate_random_instance(n, p, s, tau, InstanceConfig(noise_bound=noise), seed=seed)
    model = build_stacked_model(sys, tau)
    y, a, x = simulate(sys, x0, sc, tau, seed=seed).window(0, tau)
    return model, y, a, x


class TestSoftThreshold:
    @pytest.mark.parametrize("w,theta,expected", [
        (3.0, 1.0, 2.0), (-3.0, 1.0, -2.0), (0.5, 1.0, 0.0), (1.0, 1.0, 0.0), (2.0, 0.0, 2.0),
    ])
    def test_cases(self, w, theta, expected):
        assert soft_threshold(w, theta) == expected

    def test_vector(self):
        np.testing.assert_array_equal(soft_threshold([3.0, -0.2, -4.0], 1.0), [2.0, 0.0, -3.0])

    def test_negative_theta(self):
        with pytest.raises(ValueError):
            soft_threshold(1.0, -1.0)

    @given(finite, finite, st.floats(0, 1e3))
    def test_nonexpansive(self, u, v, theta):
        assert abs(soft_threshold(u, theta) - soft_threshold(v, theta)) <= abs(u - v) * (1 + 1e-12) + 1e-9


class TestBlockHard:
    def test_keeps_largest(self):
        a = np.array([1.0, 0.0, 3.0, 1.0, 0.0, 0.0])  # p=3, tau=2
        np.testing.assert_array_equal(block_hard_threshold(a, 3, 2, 1), [0, 0, 3, 0, 0, 0])

    def test_tie_lowest_index(self):
        a = np.array([1.0, 1.0, 1.0])
        np.testing.assert_array_equal(block_hard_threshold(a, 3, 1, 2), [1, 1, 0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 10**6))
    def test_block_count(self, p, tau, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(p * tau)
        s = int(rng.integers(0, p + 1))
        out = block_hard_threshold(a, p, tau, s).reshape(tau, p)
        assert np.count_nonzero(np.any(out != 0, axis=0)) == s


class TestObjective:
    def test_cases(self):
        m = three_sensors()
        y = np.array([1.0, 1.0, 6.0])
        assert lasso_objective(m, y, [1.0], [0.0, 0.0, 5.0], 0.1) == pytest.approx(0.5)
        assert lasso_objective(m, np.zeros(3), [0.0], np.zeros(3), 1.0) == 0.0

    def test_naive_recompute(self, small_instance):
        model, y, _, _ = small_instance
        rng = np.random.default_rng(3)
        x, a = rng.standard_normal(model.n), rng.standard_normal(model.rows)
        total = 0.0
        for i in range(model.rows):
            pred = sum(model.omega[i, j] * x[j] for j in range(model.n)) + a[i]
            total += 0.5 * (y[i] - pred) ** 2 + 0.3 * abs(a[i])
        assert lasso_objective(model, y, x, a, 0.3) == pytest.approx(total, rel=1e-12)


class TestIstaStep:
    def test_dense_formula(self, small_instance):
        model, y, _, _ = small_instance
        cfg = resolve_config(model, y, SolverConfig(lam=0.05))
        rng = np.random.default_rng(0)
        x, a = rng.standard_normal(model.n), rng.standard_normal(model.rows)
        big = np.hstack([model.omega, np.eye(model.rows)])
        z = np.concatenate([x, a])
        w = z - cfg.step_size * big.T @ (big @ z - y)
        x1, a1 = ista_step(model, y, x, a, cfg)
        np.testing.assert_allclose(x1, w[:model.n], atol=1e-12)
        expected = [math.copysign(max(abs(v) - cfg.step_size * 0.05, 0.0), v) for v in w[model.n:]]
        np.testing.assert_allclose(a1, expected, atol=1e-12)

    def test_truth_is_nearly_fixed(self, small_instance):
        model, y, a, x = small_instance
        cfg = resolve_config(model, y, SolverConfig(lam=1e-9))
        x1, a1 = ista_step(model, y, x, a, cfg)
        np.testing.assert_allclose(x1, x, atol=1e-9)
        np.testing.assert_allclose(a1, a, atol=1e-8)

    def test_needs_step(self, small_instance):
        model, y, _, _ = small_instance
        with pytest.raises(ValueError):
            ista_step(model, y, np.zeros(model.n), np.zeros(model.rows), SolverConfig(lam=1.0))


class TestSolveLasso:
    def test_attack_free(self):
        rng = np.random.default_rng(4)
        sys = LtiSystem(rng.standard_normal((3, 3)), rng.standard_normal((5, 3)))
        model = build_stacked_model(sys, 2)
        x = rng.standard_normal(3)
        y = model.omega @ x
        est = solve_lasso(model, y, SolverConfig(lam=default_lambda(model, y, 1e-2)))
        assert est.support_hat == frozenset()
        np.testing.assert_allclose(est.x_hat, np.linalg.pinv(model.omega) @ y, atol=1e-8)

    def test_three_sensors(self):
        model = three_sensors()
        y = np.array([1.0, 1.0, 6.0])
        est = solve_lasso(model, y, SolverConfig(lam=0.01))
        assert est.support_hat == {2}
        assert refine_state(model, y, est.support_hat) == pytest.approx([1.0])

    @pytest.mark.parametrize("seed", range(6))
    def test_agrees_with_oracle(self, seed):
        from lassosse.analysis import report_for_attack

        model, y, a, x = window_instance(3, 5, 1, 2, seed)
        if not report_for_attack(model, a).strict_holds:
            pytest.skip("condition fails for this draw")
        est = solve_lasso(model, y, SolverConfig(lam=default_lambda(model, y, 1e-4)))
        ref = exact_decode(model, y, 1)
        assert est.support_hat == frozenset(model.sensor_rows(ref.support).tolist())
        np.testing.assert_allclose(refine_state(model, y, est.support_hat), ref.x_exact, rtol=1e-8)

    def test_objective_field(self, small_instance):
        model, y, _, _ = small_instance
        est = solve_lasso(model, y, SolverConfig(lam=0.01))
        assert est.objective == pytest.approx(lasso_objective(model, y, est.x_hat, est.a_hat, 0.01), rel=1e-14)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10**6))
    def test_ista_descent(self, seed):
        model, y, _, _ = window_instance(4, 6, 2, 2, seed)
        lam = default_lambda(model, y, 1e-2)
        cfg = resolve_config(model, y, SolverConfig(lam=lam))
        x, a = np.zeros(model.n), np.zeros(model.rows)
        prev = lasso_objective(model, y, x, a, lam)
        for _ in range(100):
            x, a = ista_step(model, y, x, a, cfg)
            cur = lasso_objective(model, y, x, a, lam)
            assert cur <= prev + 1e-12 * max(1.0, abs(prev))
            prev = cur

    def test_fixed_point_residuals(self, small_instance):
        model, y, _, _ = small_instance
        lam = 0.02
        est = solve_lasso(model, y, SolverConfig(lam=lam, tolerance=1e-13))
        res = subgradient_residuals(model, y, est, lam)
        assert max(res.values()) <= 1e-6

    def test_fista_matches_ista(self, small_instance):
        model, y, _, _ = small_instance
        f = solve_lasso(model, y, SolverConfig(lam=0.02, tolerance=1e-13))
        i = solve_lasso(model, y, SolverConfig(lam=0.02, tolerance=1e-13, acceleration=False, max_iters=500_000))
        assert abs(f.objective - i.objective) <= 1e-8 * max(1.0, abs(i.objective))

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence(self, small_instance):
        model, y, _, _ = small_instance
        with pytest.raises(DivergenceError):
            solve_lasso(model, y, SolverConfig(lam=0.01, step_size=50.0, acceleration=False))

    def test_wrong_length(self, small_instance):
        model, y, _, _ = small_instance
        with pytest.raises(ValueError):
            solve_lasso(model, y[:-1], SolverConfig(lam=0.01))

    def test_unobservable_warns(self):
        model = build_stacked_model(LtiSystem(np.eye(2), [[1.0, 0.0]]), 2)
        with pytest.warns(RuntimeWarning):
            solve_lasso(model, np.ones(2), SolverConfig(lam=0.1, max_iters=10))

    def test_trace_csv(self, small_instance, tmp_path):
        model, y, _, _ = small_instance
        est = solve_lasso(model, y, SolverConfig(lam=0.02, max_iters=50), trace=True)
        path = tmp_path / "t.csv"
        write_trace(path, est)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["iter", "objective", "delta", "support_size"]
        assert len(rows) == est.iterations + 1


class TestHelpers:
    def test_default_lambda(self):
        model = three_sensors()
        assert default_lambda(model, np.zeros(3)) == 0.0
        y = np.array([1.0, 1.0, 6.0])
        assert default_lambda(model, y) == pytest.approx(1e-3 * 8.0)
        assert default_lambda(model, 2 * y, 0.5) == pytest.approx(2 * default_lambda(model, y, 0.5))
        with pytest.raises(ValueError):
            default_lambda(model, y, 1.5)

    @pytest.mark.parametrize("seed", range(5))
    def test_lipschitz(self, seed):
        model, _, _, _ = window_instance(5, 7, 1, 3, seed)
        assert lipschitz_constant(model) == pytest.approx(np.linalg.norm(model.omega, 2) ** 2 + 1, rel=1e-8)

    def test_refine(self, small_instance):
        model, y, a, x = small_instance
        support = frozenset(np.flatnonzero(a).tolist())
        np.testing.assert_allclose(refine_state(model, y, support), x, rtol=1e-8)
        safe = [i for i in range(model.rows) if i not in support]
        noisy = y + 1e-3 * np.random.default_rng(0).standard_normal(y.size)
        np.testing.assert_allclose(refine_state(model, noisy, support),
                                   np.linalg.pinv(model.omega[safe]) @ noisy[safe], atol=1e-10)

    def test_refine_rank_deficient(self):
        model = three_sensors()
        with pytest.raises(UnrecoverableStateError):
            refine_state(model, np.ones(3), {0, 1, 2})

    def test_block_sparse_example(self):
        model = three_sensors()
        est = solve_block_sparse(model, np.array([1.0, 1.0, 6.0]), 1)
        assert est.support_hat == {2}
        assert est.x_hat == pytest.approx([1.0], abs=1e-6)
