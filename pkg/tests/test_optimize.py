import numpy as np
import pytest

from subnetmle.optimize import InitError, MinimizeOptions, minimize


def quadratic_1d(x):
    return (x[0] - 3.0) ** 2, np.array([2.0 * (x[0] - 3.0)])


def rosenbrock(x):
    f = 100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2
    g = np.array([
        -400.0 * x[0] * (x[1] - x[0] ** 2) - 2.0 * (1.0 - x[0]),
        200.0 * (x[1] - x[0] ** 2),
    ])
    return f, g


class TestMinimize:
    def test_convex_quadratic(self):
        res = minimize(quadratic_1d, np.array([10.0]), MinimizeOptions(gtol=1e-9))
        assert res.converged
        assert res.x[0] == pytest.approx(3.0, abs=1e-8)

    def test_rosenbrock(self):
        res = minimize(rosenbrock, np.array([-1.2, 1.0]))
        assert res.converged
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-4)

    def test_stationary_start_returns_immediately(self):
        res = minimize(quadratic_1d, np.array([3.0]))
        assert res.iterations == 0
        assert res.reason == "gtol"
        assert res.x[0] == 3.0

    def test_accepted_values_monotone(self):
        res = minimize(rosenbrock, np.array([-1.2, 1.0]))
        values = np.array(res.accepted_values)
        assert np.all(np.diff(values) <= 0)

    def test_nonfinite_start_raises(self):
        def bad(x):
            return np.inf, np.zeros_like(x)

        with pytest.raises(InitError):
            minimize(bad, np.array([0.0]))

    def test_iteration_cap_reported(self):
        res = minimize(rosenbrock, np.array([-1.2, 1.0]),
                       MinimizeOptions(max_iter=3))
        assert res.iterations == 3
        assert res.reason == "maxiter"
        assert not res.converged

    def test_nonfinite_trial_points_are_rejected(self):
        # objective is a well with a cliff; trials beyond the cliff return inf
        def cliff(x):
            if abs(x[0]) > 2.0:
                return np.inf, np.array([np.nan])
            return x[0] ** 2, np.array([2.0 * x[0]])

        res = minimize(cliff, np.array([1.9]),
                       MinimizeOptions(initial_radius=50.0, gtol=1e-9))
        assert res.converged
        assert res.x[0] == pytest.approx(0.0, abs=1e-6)

    def test_determinism(self):
        r1 = minimize(rosenbrock, np.array([-1.2, 1.0]))
        r2 = minimize(rosenbrock, np.array([-1.2, 1.0]))
        assert np.array_equal(r1.x, r2.x)
        assert r1.fun == r2.fun
        assert r1.iterations == r2.iterations
