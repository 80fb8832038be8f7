"""AL value forms, analytic gradients vs finite differences, Lipschitz
constants, and the stationarity residual."""

import math

import numpy as np
import pytest

from conftest import ALL_ACTIVATIONS, random_instance, random_params, random_point
from elman_alm.auglag import (
    AlDuals,
    RegWeights,
    al_split,
    al_value,
    grad_h,
    grad_z,
    kkt_residual,
    lipschitz_bounds,
)
from elman_alm.model import (
    Activation,
    Dims,
    LiftedPoint,
    RnnParams,
    constraint_residuals,
    forward,
    loss,
    regularizer,
)
from elman_alm.verify import fd_gradient

DIMS = Dims(2, 2, 3, 4)


class TestRegWeights:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            RegWeights(0.0, 1, 1, 1, 1, 1)
        with pytest.raises(ValueError):
            RegWeights(1, 1, 1, 1, 1, -0.1)

    def test_zero_l6_allowed_for_diagnostics(self):
        lam = RegWeights(1, 1, 1, 1, 1, 0.0)
        assert lam.l6 == 0.0

    def test_tau_schedule(self):
        lam = RegWeights.from_tau(1.2, Dims(5, 3, 4, 9), l6=1e-8)
        assert lam.l1 == pytest.approx(1.2 / 12)
        assert lam.l2 == pytest.approx(1.2 / 16)
        assert lam.l3 == pytest.approx(1.2 / 20)
        assert lam.l4 == pytest.approx(1.2 / 4)
        assert lam.l5 == pytest.approx(1.2 / 3)
        assert lam.l6 == 1e-8


class TestAlValue:
    def test_feasible_zero_duals_equals_objective(self, rng):
        act = Activation.relu()
        params = random_params(rng, DIMS, 0.6)
        x = rng.normal(size=(2, 4))
        y = rng.normal(size=(2, 4))
        h, u, _ = forward(params, x, act)
        point = LiftedPoint(params, h, u)
        lam = RegWeights(0.3, 0.2, 0.25, 0.15, 0.4, 0.05)
        duals = AlDuals.zero(12, 2.0, 0.1)
        expected = loss(point, y, DIMS) + regularizer(point, lam)
        assert al_value(point, duals, lam, x, y, act) == pytest.approx(expected, rel=1e-12)

    def test_lower_bound(self, rng):
        act = Activation.relu()
        for _ in range(100):
            point, duals, lam, x, y = random_instance(rng, DIMS, gamma=rng.uniform(0.5, 3))
            bound = -(duals.xi @ duals.xi) / (2 * duals.gamma) - (
                duals.zeta @ duals.zeta
            ) / (2 * duals.gamma)
            assert al_value(point, duals, lam, x, y, act) >= bound - 1e-10

    def test_completed_square_form_agrees(self, rng):
        for act in ALL_ACTIVATIONS:
            point, duals, lam, x, y = random_instance(rng, DIMS)
            c1, c2 = constraint_residuals(point, x, act)
            g = duals.gamma
            alt = (
                loss(point, y, DIMS)
                + regularizer(point, lam)
                + 0.5 * g * np.sum((c1 + duals.xi / g) ** 2)
                + 0.5 * g * np.sum((c2 + duals.zeta / g) ** 2)
                - (duals.xi @ duals.xi) / (2 * g)
                - (duals.zeta @ duals.zeta) / (2 * g)
            )
            assert al_value(point, duals, lam, x, y, act) == pytest.approx(alt, rel=1e-10)

    def test_smooth_nonsmooth_split(self, rng):
        for act in ALL_ACTIVATIONS:
            point, duals, lam, x, y = random_instance(rng, DIMS)
            g, q = al_split(point, duals, lam, x, y, act)
            total = al_value(point, duals, lam, x, y, act)
            assert g + q == pytest.approx(total, abs=1e-12 * max(1, abs(total)))


class TestGradZ:
    def test_matches_finite_differences(self, rng):
        act = Activation.relu()
        for _ in range(20):
            point, duals, lam, x, y = random_instance(rng, DIMS, kink_free=True)
            gz = grad_z(point, duals, lam, x, y)

            def f(z):
                return al_value(
                    LiftedPoint(RnnParams.from_flat(z, DIMS), point.hidden, point.preact),
                    duals, lam, x, y, act,
                )

            fd = fd_gradient(f, point.params.to_flat())
            assert np.linalg.norm(gz.grad - fd) <= 1e-6 * (1 + np.linalg.norm(gz.grad))

    def test_zero_state_reduces_to_ridge_gradient(self, rng):
        # h = u = xi = 0 kills q1 outright and zeroes the W columns of Psi,
        # so the W slice of the gradient is the bare ridge term; once V and b
        # also vanish, Psi w = 0 and the whole w gradient is 2 Lambda1 w.
        params = random_params(rng, DIMS)
        point = LiftedPoint(params, np.zeros(12), np.zeros(12))
        duals = AlDuals.zero(12, 1.3, 0.1)
        lam = RegWeights(0.3, 0.2, 0.25, 0.15, 0.4, 0.05)
        x = rng.normal(size=(2, 4))
        y = rng.normal(size=(2, 4))
        gz = grad_z(point, duals, lam, x, y)
        assert np.abs(gz.q1).max() == 0.0
        np.testing.assert_allclose(
            gz.grad_w[:9], 2 * lam.l2 * params.w_block()[:9], rtol=1e-12
        )
        bare = params.copy()
        bare.v_mat[:] = 0.0
        bare.b_vec[:] = 0.0
        gz2 = grad_z(LiftedPoint(bare, np.zeros(12), np.zeros(12)), duals, lam, x, y)
        lam1_diag = np.concatenate([np.full(9, lam.l2), np.full(6, lam.l3), np.full(3, lam.l4)])
        np.testing.assert_allclose(gz2.grad_w, 2 * lam1_diag * bare.w_block(), rtol=1e-12)

    def test_q1_minimum_eigenvalue_floor(self, rng):
        point, duals, lam, x, y = random_instance(rng, DIMS)
        gz = grad_z(point, duals, lam, x, y)
        eig = np.linalg.eigvalsh(gz.q1_dense())
        assert eig.min() >= 2 * min(lam.l2, lam.l3, lam.l4) - 1e-10
        eig2 = np.linalg.eigvalsh(gz.q2_dense())
        assert eig2.min() >= 2 * min(lam.l1, lam.l5) - 1e-10

    def test_spd_cholesky(self, rng):
        for _ in range(10):
            point, duals, lam, x, y = random_instance(rng, DIMS, gamma=rng.uniform(0.2, 5))
            gz = grad_z(point, duals, lam, x, y)
            np.linalg.cholesky(gz.q1_dense())
            np.linalg.cholesky(gz.q2_dense())


class TestGradH:
    def test_matches_finite_differences(self, rng):
        for act in ALL_ACTIVATIONS:
            for _ in range(5):
                point, duals, lam, x, y = random_instance(rng, DIMS, kink_free=True)
                gh = grad_h(point, duals, lam, x, y, act)

                def f(hv):
                    return al_value(
                        LiftedPoint(point.params, hv, point.preact), duals, lam, x, y, act
                    )

                fd = fd_gradient(f, point.hidden)
                assert np.linalg.norm(gh.grad - fd) <= 1e-6 * (1 + np.linalg.norm(gh.grad))

    def test_penalty_only_slices(self, rng):
        act = Activation.relu()
        point, duals, lam, x, y = random_instance(rng, DIMS)
        point.params.w_mat[:] = 0.0
        point.params.a_mat[:] = 0.0
        duals = AlDuals(duals.xi, np.zeros(12), duals.gamma, duals.eps)
        gh = grad_h(point, duals, lam, x, y, act)
        expect = duals.gamma * (point.hidden - np.maximum(point.preact, 0.0))
        np.testing.assert_allclose(gh.grad, expect, rtol=1e-10, atol=1e-12)

    def test_d1_minus_d2_is_recursion_gram(self, rng):
        point, duals, lam, x, y = random_instance(rng, DIMS)
        gh = grad_h(point, duals, lam, x, y, Activation.relu())
        np.testing.assert_allclose(
            gh.d1 - gh.d2, duals.gamma * point.params.w_mat.T @ point.params.w_mat,
            rtol=1e-12, atol=1e-14,
        )

    def test_d_matrices_spd(self, rng):
        for _ in range(10):
            point, duals, lam, x, y = random_instance(rng, DIMS)
            gh = grad_h(point, duals, lam, x, y, Activation.relu())
            np.linalg.cholesky(gh.d1)
            np.linalg.cholesky(gh.d2)


class TestLipschitzBounds:
    def test_worked_example(self):
        # xi = zeta = 0, gamma = 1, l2 = 1, T = 2, level = 1:
        # delta = 1 and delta5 = sqrt(1 * 1 / 1) + sqrt(2) = 1 + sqrt(2).
        duals = AlDuals.zero(2, 1.0, 0.1)
        lam = RegWeights(1, 1, 1, 1, 1, 1)
        x = np.zeros((1, 2))
        y = np.zeros((1, 2))
        lip = lipschitz_bounds(duals, lam, x, y, level=1.0)
        assert lip.delta == pytest.approx(1.0)
        assert lip.delta5 == pytest.approx(1 + math.sqrt(2))
        assert lip.l2_const == pytest.approx(1 + math.sqrt(2))

    def test_monotone_in_level(self, rng):
        duals = AlDuals(rng.normal(size=12), rng.normal(size=12), 1.5, 0.1)
        lam = RegWeights(0.3, 0.2, 0.25, 0.15, 0.4, 0.05)
        x = rng.normal(size=(2, 4))
        y = rng.normal(size=(2, 4))
        lo = lipschitz_bounds(duals, lam, x, y, level=1.0)
        hi = lipschitz_bounds(duals, lam, x, y, level=10.0)
        assert hi.l1_const > lo.l1_const
        assert hi.l2_const > lo.l2_const

    def test_zero_l6_rejected(self, rng):
        duals = AlDuals.zero(12, 1.0, 0.1)
        lam = RegWeights(1, 1, 1, 1, 1, 0.0)
        with pytest.raises(ValueError, match="l6"):
            lipschitz_bounds(duals, lam, np.zeros((2, 4)), np.zeros((2, 4)), level=1.0)

    def test_level_below_lower_bound_rejected(self, rng):
        duals = AlDuals(np.ones(12), np.ones(12), 1.0, 0.1)
        lam = RegWeights(1, 1, 1, 1, 1, 1)
        with pytest.raises(ValueError, match="delta"):
            lipschitz_bounds(duals, lam, np.zeros((2, 4)), np.zeros((2, 4)), level=-100.0)

    def _level_set_pairs(self, rng, count):
        act = Activation.relu()
        lam = RegWeights(0.3, 0.2, 0.25, 0.15, 0.4, 0.05)
        x = rng.normal(size=(DIMS.n, DIMS.t_len))
        y = rng.normal(size=(DIMS.m, DIMS.t_len))
        duals = AlDuals(0.5 * rng.normal(size=12), 0.5 * rng.normal(size=12), 1.5, 0.1)
        pairs = []
        for _ in range(count):
            base = random_point(rng, DIMS, scale=0.8)
            other_h = base.hidden + 0.5 * rng.normal(size=12)
            other_u = base.preact + 0.5 * rng.normal(size=12)
            pairs.append((base, LiftedPoint(base.params, other_h, other_u)))
        return act, lam, x, y, duals, pairs

    def test_gradient_lipschitz_inequalities(self, rng):
        act, lam, x, y, duals, pairs = self._level_set_pairs(rng, 50)
        violations = 0
        for base, other in pairs:
            level = max(
                al_value(base, duals, lam, x, y, act),
                al_value(other, duals, lam, x, y, act),
            )
            lip = lipschitz_bounds(duals, lam, x, y, level=level)
            gz_base = grad_z(base, duals, lam, x, y).grad
            gz_other = grad_z(other, duals, lam, x, y).grad
            move = math.sqrt(
                float(np.sum((other.hidden - base.hidden) ** 2))
                + float(np.sum((other.preact - base.preact) ** 2))
            )
            if np.linalg.norm(gz_other - gz_base) > lip.l1_const * move + 1e-9:
                violations += 1
            # L2 claim: same (z, h), different u.
            u_only = LiftedPoint(base.params, base.hidden, other.preact)
            level2 = max(level, al_value(u_only, duals, lam, x, y, act))
            lip2 = lipschitz_bounds(duals, lam, x, y, level=level2)
            gh_base = grad_h(base, duals, lam, x, y, act).grad
            gh_other = grad_h(u_only, duals, lam, x, y, act).grad
            du = np.linalg.norm(other.preact - base.preact)
            if np.linalg.norm(gh_other - gh_base) > lip2.l2_const * du + 1e-9:
                violations += 1
        assert violations == 0


def _tiny_kkt_instance():
    """1-step scalar network satisfying the stationarity system exactly.

    All weights solved by hand: with x1 = 1, every lambda = 0.25, u = h = 1,
    the multiplier chain fixes xi = 0.25, zeta = 0.75, A = sqrt(1.5), c = A,
    y = 2.25 A, V x1 + b = 4 xi = 1 = u.
    """
    lam = RegWeights(0.25, 0.25, 0.25, 0.25, 0.25, 0.25)
    a_val = math.sqrt(1.5)
    xi = np.array([0.25])
    zeta = np.array([0.75])
    params = RnnParams(
        np.zeros((1, 1)),
        np.array([[0.5]]),
        np.array([[a_val]]),
        np.array([0.5]),
        np.array([a_val]),
    )
    point = LiftedPoint(params, np.array([1.0]), np.array([1.0]))
    x = np.array([[1.0]])
    y = np.array([[2.25 * a_val]])
    return point, xi, zeta, lam, x, y


class TestKktResidual:
    def test_hand_constructed_kkt_point(self):
        point, xi, zeta, lam, x, y = _tiny_kkt_instance()
        res = kkt_residual(point, xi, zeta, lam, x, y, Activation.relu())
        assert res <= 1e-8
        c1, c2 = constraint_residuals(point, x, Activation.relu())
        assert np.abs(c1).max() <= 1e-12 and np.abs(c2).max() <= 1e-12

    def test_zero_duals_at_plain_stationary_point(self, rng):
        # h = u = 0, A = W = V = b = 0, c = mean(y) / (1 + l5) is stationary
        # for the regularized objective alone.
        lam = RegWeights(0.3, 0.2, 0.25, 0.15, 0.4, 0.05)
        y = rng.normal(size=(2, 4))
        c_star = y.mean(axis=1) / (1 + lam.l5)
        params = RnnParams(np.zeros((3, 3)), np.zeros((3, 2)), np.zeros((2, 3)), np.zeros(3), c_star)
        point = LiftedPoint(params, np.zeros(12), np.zeros(12))
        x = rng.normal(size=(2, 4))
        res = kkt_residual(point, np.zeros(12), np.zeros(12), lam, x, y, Activation.relu())
        assert res <= 1e-10

    def test_hidden_unit_permutation_invariance(self, rng):
        act = Activation.relu()
        point, duals, lam, x, y = random_instance(rng, DIMS)
        xi, zeta = duals.xi, duals.zeta
        base = kkt_residual(point, xi, zeta, lam, x, y, act)
        perm = rng.permutation(DIMS.r)
        p = point.params
        permuted = RnnParams(
            p.w_mat[np.ix_(perm, perm)], p.v_mat[perm], p.a_mat[:, perm],
            p.b_vec[perm], p.c_vec,
        )
        h_mat = point.hidden_mat()[perm]
        u_mat = point.preact_mat()[perm]
        xi_mat = xi.reshape((DIMS.r, DIMS.t_len), order="F")[perm]
        zeta_mat = zeta.reshape((DIMS.r, DIMS.t_len), order="F")[perm]
        point2 = LiftedPoint(permuted, h_mat.ravel(order="F"), u_mat.ravel(order="F"))
        res2 = kkt_residual(
            point2, xi_mat.ravel(order="F"), zeta_mat.ravel(order="F"), lam, x, y, act
        )
        assert res2 == pytest.approx(base, rel=1e-10)

    def test_kink_interval_absorbs_multiplier(self):
        # Zero-parameter 1-step instance: the w block contributes -xi through
        # the bias row, the h block contributes zeta, and the u coordinate is
        # smooth_u = xi projected against the interval [min(0,-zeta), max(0,-zeta)].
        lam = RegWeights(1, 1, 1, 1, 1, 0.5)
        params = RnnParams.zeros(Dims(1, 1, 1, 1))
        point = LiftedPoint(params, np.zeros(1), np.zeros(1))
        x = np.zeros((1, 1))
        y = np.zeros((1, 1))
        res_inside = kkt_residual(point, np.array([0.4]), np.array([0.5]), lam, x, y, Activation.relu())
        assert res_inside == pytest.approx(math.sqrt(0.4**2 + 0.5**2), rel=1e-12)
        res_outside = kkt_residual(point, np.array([-0.4]), np.array([0.5]), lam, x, y, Activation.relu())
        assert res_outside == pytest.approx(math.sqrt(0.4**2 + 0.5**2 + 0.4**2), rel=1e-12)
