"""The oracles themselves: grid minimizer, finite differences, probes."""

import numpy as np
import pytest

from conftest import random_instance
from elman_alm.auglag import AlDuals, al_value
from elman_alm.bcd import OneDimProblem, phi_value, solve_1d
from elman_alm.model import Activation, Dims, LiftedPoint
from elman_alm.verify import dstationary_probe, fd_gradient, grid_minimize_1d

RELU = Activation.relu()


class TestGridMinimize:
    def test_shifted_quadratic(self):
        u, val = grid_minimize_1d(lambda x: (x - 3.0) ** 2, 0.0, 10.0, 1e-3, 1e-7)
        assert u == pytest.approx(3.0, abs=1e-6)
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_cross_checks_closed_form(self):
        prob = OneDimProblem(1.0, 1.0, 0.0, gamma=1.0, mu=0.0, lambda6=0.0)
        sol = solve_1d(prob, RELU)
        u, val = grid_minimize_1d(lambda z: phi_value(prob, RELU, z), -5, 5, 1e-3, 1e-8)
        assert u == pytest.approx(sol.u_star, abs=1e-6)
        assert val == pytest.approx(sol.value, abs=1e-10)

    def test_tied_minima_value_agreement(self):
        # Double well with equal minima: either argmin is acceptable, the
        # values must match.
        f = lambda x: (x * x - 1.0) ** 2
        u, val = grid_minimize_1d(f, -2.0, 2.0, 1e-3, 1e-7)
        assert abs(abs(u) - 1.0) <= 1e-6
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_scalar_only_phi_supported(self):
        calls = []

        def phi(x):
            if np.ndim(x) > 0:
                raise TypeError("scalar only")
            calls.append(x)
            return float((x - 0.5) ** 2)

        u, _ = grid_minimize_1d(phi, -2.0, 2.0, 1e-2, 1e-6)
        assert u == pytest.approx(0.5, abs=1e-5)

    def test_rejects_bad_bracket(self):
        with pytest.raises(ValueError):
            grid_minimize_1d(lambda x: x * x, 1.0, -1.0)


class TestFdGradient:
    def test_linear_exact(self, rng):
        # exact up to subtraction roundoff at the 1e-6 step
        a = rng.normal(size=6)
        grad = fd_gradient(lambda x: float(a @ x), rng.normal(size=6))
        np.testing.assert_allclose(grad, a, atol=1e-9)

    def test_quadratic_accuracy(self, rng):
        m = rng.normal(size=(5, 5))
        h = m.T @ m + np.eye(5)
        x0 = rng.normal(size=5)
        grad = fd_gradient(lambda x: 0.5 * float(x @ h @ x), x0)
        np.testing.assert_allclose(grad, h @ x0, atol=1e-9 * (1 + np.abs(h @ x0).max()))

    def test_cross_module_al_gradient(self, rng):
        dims = Dims(2, 2, 3, 4)
        point, duals, lam, x, y = random_instance(rng, dims, kink_free=True)
        from elman_alm.auglag import grad_z
        from elman_alm.model import RnnParams

        def f(z):
            return al_value(
                LiftedPoint(RnnParams.from_flat(z, dims), point.hidden, point.preact),
                duals, lam, x, y, RELU,
            )

        fd = fd_gradient(f, point.params.to_flat())
        analytic = grad_z(point, duals, lam, x, y).grad
        assert np.linalg.norm(fd - analytic) <= 1e-6 * (1 + np.linalg.norm(analytic))

    def test_nonfinite_reported_with_coordinate(self):
        def f(x):
            return float("nan") if x[1] > 0.5 else float(x @ x)

        with pytest.raises(ValueError, match="coordinate 1"):
            fd_gradient(f, np.array([0.0, 0.5]))


class TestDstationaryProbe:
    def test_nonstationary_point_is_negative(self, rng):
        dims = Dims(2, 2, 2, 3)
        point, duals, lam, x, y = random_instance(rng, dims)
        probe = dstationary_probe(point, duals, lam, x, y, RELU, probe_count=5)
        assert probe < -1e-3

    def test_smooth_stationary_point_nonnegative(self, rng):
        # Zero duals, zero coupling: the AL reduces to the regularized loss;
        # its unconstrained minimizer over (a-block, h, u) with other blocks
        # zero is the ridge readout point.
        dims = Dims(2, 1, 2, 3)
        from elman_alm.model import RnnParams

        lamvals = (0.3, 0.2, 0.25, 0.15, 0.4, 0.3)
        from elman_alm.auglag import RegWeights

        lam = RegWeights(*lamvals)
        y = rng.normal(size=(1, 3))
        x = rng.normal(size=(2, 3))
        duals = AlDuals.zero(6, 1.0, 0.1)
        from elman_alm.bcd import BcdConfig, bcd_solve

        params = RnnParams.zeros(dims)
        start = LiftedPoint(params, np.zeros(6), np.zeros(6))
        cfg = BcdConfig(mu=0.5, max_inner=3000, big_gamma=1e9)
        res = bcd_solve(start, AlDuals.zero(6, 1.0, 1e-300), lam, x, y, cfg, RELU)
        probe = dstationary_probe(res.point, AlDuals.zero(6, 1.0, 1e-300), lam, x, y, RELU, probe_count=8)
        assert probe >= -1e-6
