"""Independent numerical oracles: brute-force 1-D minimization, finite
differences, and directional-stationarity probes.

Nothing here reuses the closed-form solver formulas; these routines exist so
the tests can check those formulas against function evaluations alone.
"""

from __future__ import annotations

import math

import numpy as np

from .auglag import al_value
from .model import LiftedPoint

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _eval_grid(phi, xs: np.ndarray) -> np.ndarray:
    """Evaluate phi on a grid, falling back to a scalar loop."""
    try:
        vals = np.asarray(phi(xs), dtype=np.float64)
        if vals.shape == xs.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([float(phi(x)) for x in xs], dtype=np.float64)


def _golden_section(phi, lo: float, hi: float, tol: float):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = float(phi(c)), float(phi(d))
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = float(phi(c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = float(phi(d))
    u = c if fc <= fd else d
    return u, float(phi(u))


def grid_minimize_1d(phi, lo: float, hi: float, coarse_step: float = 1e-3, refine_tol: float = 1e-7):
    """Global scan plus refinement; returns (argmin, value) with argument
    accuracy about refine_tol.

    A coarse grid locates the best cell; repeated fine scans shrink the
    window (robust to kinks between local minima) before a final
    golden-section polish.
    """
    if not lo < hi:
        raise ValueError("lo must be below hi")
    xs = np.arange(lo, hi + 0.5 * coarse_step, coarse_step)
    vals = _eval_grid(phi, xs)
    i = int(np.argmin(vals))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, xs.size - 1)]
    while (b - a) > 200.0 * refine_tol:
        xs = np.linspace(a, b, 401)
        vals = _eval_grid(phi, xs)
        i = int(np.argmin(vals))
        a, b = xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]
    return _golden_section(phi, a, b, refine_tol)


def fd_gradient(f, x: np.ndarray, step_rule=None) -> np.ndarray:
    """Central-difference gradient with per-coordinate step 1e-6 (1 + |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    if step_rule is None:
        step_rule = lambda xi: 1e-6 * (1.0 + abs(xi))
    grad = np.empty_like(x)
    probe = x.copy()
    for i in range(x.size):
        h = step_rule(x[i])
        probe[i] = x[i] + h
        f_plus = float(f(probe))
        probe[i] = x[i] - h
        f_minus = float(f(probe))
        probe[i] = x[i]
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"non-finite evaluation while differencing coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def dstationary_probe(
    point,
    duals,
    lambdas,
    x_series,
    y_series,
    act,
    probe_count: int = 20,
    seed: int = 0,
    steps=(1e-4, 1e-5, 1e-6),
) -> float:
    """Most negative one-sided directional-derivative estimate of the AL at
    the point, over all +-coordinate directions and probe_count random unit
    directions.

    Forward differences with shrinking steps only: the activation kink makes
    two-sided differencing invalid.  A d-stationary point should report a
    value no more negative than discretization noise.
    """
    dims = point.dims_for(np.asarray(x_series).shape[0])
    s0 = point.to_flat()
    f0 = al_value(point, duals, lambdas, x_series, y_series, act)

    def value_at(vec):
        return al_value(
            LiftedPoint.from_flat(vec, dims), duals, lambdas, x_series, y_series, act
        )

    rng = np.random.default_rng(seed)
    directions = []
    for i in range(s0.size):
        e = np.zeros(s0.size)
        e[i] = 1.0
        directions.append(e)
        directions.append(-e)
    for _ in range(probe_count):
        d = rng.normal(size=s0.size)
        directions.append(d / np.linalg.norm(d))

    worst = math.inf
    for d in directions:
        estimate = None
        for lam in steps:
            slope = (value_at(s0 + lam * d) - f0) / lam
            estimate = slope
        worst = min(worst, estimate)
    return worst
