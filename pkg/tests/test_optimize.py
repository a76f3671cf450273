import numpy as np
import pytest

from gibbsinit import problems as P
from gibbsinit.errors import GibbsInitError
from gibbsinit.objective import Domain, Objective
from gibbsinit.optimize import (GDConfig, Trajectory, classify_stationary, estimate_lipschitz,
                                fd_hessian, gd_run, gd_run_batch, success_test)


def sq(d=1, w=5.0):
    return Objective(Domain.box(-w, w, d), lambda t: float(t @ t), lambda t: 2 * t,
                     batch_value_fn=lambda X: np.sum(X * X, axis=1),
                     batch_grad_fn=lambda X: 2 * X)


def st_basin_oracle(t0, d=5, step=0.05, iters=50):
    """Scalar GD on one coordinate of the 1/(2d)-normalized ST function, by hand."""
    t = t0
    for _ in range(iters):
        t = min(max(t - step * (4 * t ** 3 - 32 * t + 5) / (2.0 * d), -5.0), 5.0)
    return t


class TestGD:
    def test_geometric_contraction(self):
        tr = gd_run(sq(), np.array([1.0]), GDConfig(0.1, 50))
        assert tr.final[0] == pytest.approx(0.8 ** 50, rel=1e-12)

    def test_st_from_minus_three(self):
        F = P.st_objective(P.STSpec(5))
        tr = gd_run(F, np.full(5, -3.0), GDConfig(0.05, 50))
        assert abs(tr.final_value - (-39.165)) < 0.01

    def test_zero_step(self):
        F = P.st_objective(P.STSpec(2))
        t0 = np.array([1.0, -2.0])
        tr = gd_run(F, t0, GDConfig(0.0, 10))
        np.testing.assert_array_equal(tr.final, t0)
        assert tr.final_value == F.value(t0)

    def test_divergence_flag(self):
        calls = {"n": 0}

        def g(t):
            calls["n"] += 1
            return np.array([np.nan]) if calls["n"] > 3 else 2 * t

        obj = Objective(Domain.box(-5, 5, 1), lambda t: float(t @ t), g)
        tr = gd_run(obj, np.array([1.0]), GDConfig(0.1, 10))
        assert tr.diverged and tr.final[0] == pytest.approx(0.8 ** 3)

    def test_batch_matches_single(self, rng):
        F = P.st_objective(P.STSpec(3))
        X = rng.uniform(-5, 5, (20, 3))
        fin, vals, div = gd_run_batch(F, X, GDConfig(0.05, 30))
        for k in range(20):
            tr = gd_run(F, X[k], GDConfig(0.05, 30))
            np.testing.assert_allclose(fin[k], tr.final, atol=1e-12)
        assert not div.any()

    def test_trajectory_recorded(self):
        tr = gd_run(sq(), np.array([1.0]), GDConfig(0.1, 5, record_trajectory=True))
        assert len(tr.values) == 6 and tr.values[0] == 1.0
        assert '"final_value"' in tr.to_json()

    def test_bad_config(self):
        with pytest.raises(GibbsInitError):
            GDConfig(-1.0, 5)

    def test_st_basin_boundary(self):
        # grid of GD runs under the d=5 normalization; each coordinate evolves alone
        F = P.st_objective(P.STSpec(5))
        grid = np.linspace(-5, 5, 10_000)
        fin, _, _ = gd_run_batch(F, np.repeat(grid[:, None], 5, axis=1), GDConfig(0.05, 50))
        left = fin[:, 0] < P.ST_ROOTS[1]
        edge = grid[np.argmax(~left)]
        assert np.all(left[grid < edge]) and not np.any(left[grid >= edge])
        assert abs(edge - P.ST_ROOTS[1]) <= grid[1] - grid[0]
        for k in (0, 2500, 5100, 9999):
            assert fin[k, 0] == pytest.approx(st_basin_oracle(grid[k]), abs=1e-9)
        assert np.mean(left) == pytest.approx((P.ST_ROOTS[1] + 5) / 10, abs=1e-3)


class TestStationary:
    def test_quadratic_min(self):
        assert classify_stationary(sq(2), np.zeros(2)) == "local_min"

    def test_st_local_max(self):
        F = P.st_objective(P.STSpec(1))
        assert classify_stationary(F, np.array([P.ST_ROOTS[1]])) == "saddle_or_max"

    def test_st_global_min(self):
        F = P.st_objective(P.STSpec(5))
        assert classify_stationary(F, np.full(5, P.ST_ARGMIN)) == "local_min"

    def test_nonstationary_and_boundary(self):
        assert classify_stationary(sq(1), np.array([1.0])) == "nonstationary"
        obj = Objective(Domain.box(0, 1, 1), lambda t: 0.0, lambda t: np.zeros(1))
        assert classify_stationary(obj, np.array([1.0])) == "boundary"

    def test_fd_hessian(self):
        obj = Objective(Domain.box(-2, 2, 2), lambda t: float(t[0] ** 2 * t[1] + 3 * t[1] ** 2),
                        batch_value_fn=lambda X: X[:, 0] ** 2 * X[:, 1] + 3 * X[:, 1] ** 2)
        H = fd_hessian(obj, np.array([0.5, 1.0]))
        np.testing.assert_allclose(H, [[2.0, 1.0], [1.0, 6.0]], atol=1e-6)

    def test_lipschitz(self, rng):
        assert estimate_lipschitz(sq(3), rng, 20) == pytest.approx(2.0, rel=1e-4)


class TestSuccess:
    def test_exact_value(self):
        tr = Trajectory(np.zeros(1), np.zeros(1), -1.0)
        assert success_test(tr, np.zeros(1), -1.0, "value_gap", 1e-9)

    def test_threshold_encoding(self):
        # "value < -32" written as value_gap against f_star = -32 - tol
        tol = 1e-9
        hit = Trajectory(np.zeros(1), np.zeros(1), -32.5)
        miss = Trajectory(np.zeros(1), np.zeros(1), -31.9)
        assert success_test(hit, None, -32.0 - tol, "value_gap", tol)
        assert not success_test(miss, None, -32.0 - tol, "value_gap", tol)

    def test_wrong_basin(self):
        F = P.st_objective(P.STSpec(5))
        start = np.array([-3.0, -3.0, -3.0, -3.0, 3.0])
        tr = gd_run(F, start, GDConfig(0.05, 50))
        assert not success_test(tr, np.full(5, P.ST_ARGMIN), P.ST_MIN_VALUE, "value_gap", 0.5)

    def test_point_distance(self):
        tr = Trajectory(np.zeros(2), np.array([1.0, 1.0]), 0.0)
        assert success_test(tr, np.array([1.0, 1.1]), 0.0, "point_distance", 0.2)

    def test_bad(self):
        tr = Trajectory(np.zeros(1), np.zeros(1), 0.0)
        with pytest.raises(GibbsInitError):
            success_test(tr, np.zeros(1), 0.0, "value_gap", 0.0)
        with pytest.raises(GibbsInitError):
            success_test(tr, np.zeros(1), 0.0, "other", 1.0)
