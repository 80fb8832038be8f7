"""Shared builders for randomized test instances and quadratic oracles."""

import numpy as np
import pytest

from elman_alm.auglag import AlDuals, RegWeights
from elman_alm.model import Activation, LiftedPoint, RnnParams


def random_params(rng, dims, scale=1.0):
    return RnnParams(
        scale * rng.normal(size=(dims.r, dims.r)),
        scale * rng.normal(size=(dims.r, dims.n)),
        scale * rng.normal(size=(dims.m, dims.r)),
        scale * rng.normal(size=dims.r),
        scale * rng.normal(size=dims.m),
    )


def random_point(rng, dims, scale=1.0, kink_free=False):
    """Random lifted point; kink_free pushes u entries away from 0."""
    params = random_params(rng, dims, scale)
    hidden = scale * rng.normal(size=dims.r * dims.t_len)
    preact = scale * rng.normal(size=dims.r * dims.t_len)
    if kink_free:
        small = np.abs(preact) < 1e-3
        preact[small] += np.sign(preact[small] + 0.5) * 0.5
    return LiftedPoint(params, hidden, preact)


def random_instance(rng, dims, gamma=1.5, eps=0.1, scale=1.0, kink_free=False):
    """(point, duals, lambdas, x, y) with everything O(scale)."""
    point = random_point(rng, dims, scale, kink_free)
    rt = dims.r * dims.t_len
    duals = AlDuals(
        scale * rng.normal(size=rt), scale * rng.normal(size=rt), gamma, eps
    )
    lambdas = RegWeights(*rng.uniform(0.05, 0.5, size=5), rng.uniform(0.01, 0.2))
    x = scale * rng.normal(size=(dims.n, dims.t_len))
    y = scale * rng.normal(size=(dims.m, dims.t_len))
    return point, duals, lambdas, x, y


def quadratic_argmin(f, x0, step=0.05):
    """Exact minimizer of a quadratic f via finite differences.

    Central differences are exact for quadratics (odd error terms vanish),
    so the Hessian column j is (grad(x0 + step e_j) - grad(x0)) / step and
    the minimizer solves H d = -g.  Only f evaluations are used, keeping the
    oracle independent of any analytic gradient formulas.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    dim = x0.size

    def grad_at(x):
        g = np.empty(dim)
        probe = x.copy()
        for i in range(dim):
            probe[i] = x[i] + step
            f_plus = f(probe)
            probe[i] = x[i] - step
            f_minus = f(probe)
            probe[i] = x[i]
            g[i] = (f_plus - f_minus) / (2.0 * step)
        return g

    g0 = grad_at(x0)
    hess = np.empty((dim, dim))
    for j in range(dim):
        probe = x0.copy()
        probe[j] += step
        hess[:, j] = (grad_at(probe) - g0) / step
    hess = 0.5 * (hess + hess.T)
    return x0 + np.linalg.solve(hess, -g0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


ALL_ACTIVATIONS = [
    Activation.relu(),
    Activation.leaky_relu(0.1),
    Activation.leaky_relu(0.5),
    Activation.elu(),
]
