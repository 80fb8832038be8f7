"""Inner solver: cyclic exact block minimization of the augmented Lagrangian.

One sweep updates z (weights), then h (hidden states), then u
(pre-activations).  The z and h subproblems are strongly convex quadratics
solved through Cholesky factorizations of their small Kronecker factors; the
u subproblem separates into rT one-dimensional piecewise problems with a
proximal term (mu/2)||u - u_prev||^2 and is solved exactly per coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from threadpoolctl import threadpool_limits

from .auglag import (
    LipschitzBounds,
    al_value,
    grad_h,
    lipschitz_bounds,
    _lambda_diag_a,
    _lambda_diag_w,
    _readout_design,
)
from .model import (
    Activation,
    LiftedPoint,
    NumericsError,
    PsiOperator,
    RnnParams,
)


@dataclass(frozen=True)
class BcdConfig:
    """Inner-solver knobs: proximal weight mu, sweep cap, and the level bound
    big_gamma that gates warm starts (must dominate the initial AL value)."""

    mu: float
    max_inner: int = 500
    big_gamma: float = 100.0

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ValueError("mu must be strictly positive")
        if self.max_inner < 1:
            raise ValueError("max_inner must be at least 1")
        if not math.isfinite(self.big_gamma):
            raise ValueError("big_gamma must be finite")

    def check_start(self, start_value: float):
        """big_gamma must upper bound the AL value at the initial point."""
        if start_value > self.big_gamma:
            raise ValueError(
                f"initial AL value {start_value:.6g} exceeds big_gamma "
                f"{self.big_gamma:.6g}; raise big_gamma or shrink the init"
            )


@dataclass(frozen=True)
class OneDimProblem:
    """Coefficients of the scalar u subproblem
    phi(u) = (g/2)(u-t1)^2 + (g/2)(t2-sigma(u))^2 + (mu/2)(u-t3)^2 + l6 u^2."""

    theta1: float
    theta2: float
    theta3: float
    gamma: float
    mu: float
    lambda6: float

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError("gamma must be strictly positive")
        if self.mu < 0.0 or self.lambda6 < 0.0:
            raise ValueError("mu and lambda6 must be nonnegative")


@dataclass(frozen=True)
class OneDimSolution:
    u_star: float
    u_plus: float
    u_minus: float
    value: float


def phi_value(problem: OneDimProblem, act: Activation, u):
    """Vectorized objective of the scalar subproblem."""
    u = np.asarray(u, dtype=np.float64)
    return (
        0.5 * problem.gamma * (u - problem.theta1) ** 2
        + 0.5 * problem.gamma * (problem.theta2 - act.apply(u)) ** 2
        + 0.5 * problem.mu * (u - problem.theta3) ** 2
        + problem.lambda6 * u * u
    )


def _phi_arrays(theta1, theta2, theta3, gamma, mu, lambda6, act, u):
    return (
        0.5 * gamma * (u - theta1) ** 2
        + 0.5 * gamma * (theta2 - act.apply(u)) ** 2
        + 0.5 * mu * (u - theta3) ** 2
        + lambda6 * u * u
    )


def _relu_family_candidates(theta1, theta2, theta3, gamma, mu, lambda6, act):
    """Vectorized (u_plus, u_minus) for relu/leaky_relu.

    On u >= 0 both activations are the identity, so u_plus is the positive
    part of the shared quadratic's minimizer.  On u <= 0 the quadratic
    changes with the negative slope; the minimizer is kept only when its own
    numerator is negative (it must land in the feasible half-line).
    """
    num_plus = gamma * theta1 + gamma * theta2 + mu * theta3
    den_plus = 2.0 * gamma + 2.0 * lambda6 + mu
    u_plus = np.where(num_plus > 0.0, num_plus / den_plus, 0.0)

    if act.kind == "relu":
        num_minus = gamma * theta1 + mu * theta3
        den_minus = gamma + 2.0 * lambda6 + mu
    else:
        slope = act.slope
        num_minus = gamma * theta1 + gamma * slope * theta2 + mu * theta3
        den_minus = gamma + gamma * slope * slope + 2.0 * lambda6 + mu
    u_minus = np.where(num_minus < 0.0, num_minus / den_minus, 0.0)
    return u_plus, u_minus


def _elu_bracket(problem: OneDimProblem) -> float:
    """Provable lower bracket for the negative-side ELU minimizer."""
    g, mu, l6 = problem.gamma, problem.mu, problem.lambda6
    spread = (
        g * abs(problem.theta1) + g * (abs(problem.theta2) + 1.0) + mu * abs(problem.theta3)
    ) / (g + mu + 2.0 * l6)
    return -(1.0 + spread) - 5.0


def _elu_phi_prime(problem: OneDimProblem, u: float) -> float:
    g, mu, l6 = problem.gamma, problem.mu, problem.lambda6
    eu = math.exp(u)
    return (
        (g + mu + 2.0 * l6) * u
        - g * problem.theta1
        - mu * problem.theta3
        - g * (problem.theta2 + 1.0) * eu
        + g * eu * eu
    )


def _elu_phi_second(problem: OneDimProblem, u: float) -> float:
    g = problem.gamma
    eu = math.exp(u)
    return (
        2.0 * g * eu * eu
        - g * (problem.theta2 + 1.0) * eu
        + problem.mu
        + g
        + 2.0 * problem.lambda6
    )


def _bisect_phi_prime(problem, lo, hi, tol=1e-12, max_iter=200) -> float:
    """Root of phi' on a convex piece [lo, hi] with phi'(lo) < 0 < phi'(hi)."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        d = _elu_phi_prime(problem, mid)
        if abs(d) <= tol or (hi - lo) < 1e-16:
            return mid
        if d < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _elu_negative_minimizer(problem: OneDimProblem) -> float:
    """Exact-to-tolerance minimizer of phi over (-inf, 0] for the ELU.

    The second derivative in z = e^u is the quadratic
    psi(z) = 2 g z^2 - g (theta2 + 1) z + (mu + g + 2 l6), so its roots in
    (0, 1) split the bracket into at most three pieces of fixed convexity;
    each convex piece is minimized by bisection on phi'.
    """
    g = problem.gamma
    lower = _elu_bracket(problem)
    breaks = [lower, 0.0]
    a, b, c = 2.0 * g, -g * (problem.theta2 + 1.0), g + problem.mu + 2.0 * problem.lambda6
    disc = b * b - 4.0 * a * c
    if disc > 0.0:
        sq = math.sqrt(disc)
        for z in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)):
            if 0.0 < z < 1.0:
                u = math.log(z)
                if lower < u < 0.0:
                    breaks.append(u)
    breaks = sorted(set(breaks))

    act = Activation.elu()
    candidates = [lower, 0.0]
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        mid_curv = _elu_phi_second(problem, 0.5 * (lo + hi))
        if mid_curv < 0.0:
            continue
        d_lo = _elu_phi_prime(problem, lo)
        d_hi = _elu_phi_prime(problem, hi)
        if d_lo >= 0.0:
            candidates.append(lo)
        elif d_hi <= 0.0:
            candidates.append(hi)
        else:
            candidates.append(_bisect_phi_prime(problem, lo, hi))
    values = [float(phi_value(problem, act, u)) for u in candidates]
    return candidates[int(np.argmin(values))]


def solve_1d(problem: OneDimProblem, act: Activation) -> OneDimSolution:
    """Global minimizer of the scalar u subproblem; ties go to u_plus."""
    if act.kind in ("relu", "leaky_relu"):
        up, um = _relu_family_candidates(
            problem.theta1,
            problem.theta2,
            problem.theta3,
            problem.gamma,
            problem.mu,
            problem.lambda6,
            act,
        )
        u_plus, u_minus = float(up), float(um)
    else:
        num_plus = (
            problem.gamma * problem.theta1
            + problem.gamma * problem.theta2
            + problem.mu * problem.theta3
        )
        den_plus = 2.0 * problem.gamma + 2.0 * problem.lambda6 + problem.mu
        u_plus = num_plus / den_plus if num_plus > 0.0 else 0.0
        u_minus = _elu_negative_minimizer(problem)
    v_plus = float(phi_value(problem, act, u_plus))
    v_minus = float(phi_value(problem, act, u_minus))
    if v_plus <= v_minus:
        return OneDimSolution(u_plus, u_plus, u_minus, v_plus)
    return OneDimSolution(u_minus, u_plus, u_minus, v_minus)


def _finite_or_raise(arr, label):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values encountered in {label}")


def _spd_solve(mat: np.ndarray, rhs: np.ndarray, label: str) -> np.ndarray:
    """Cholesky solve with one jittered retry to absorb roundoff-level
    indefiniteness; anything worse is a genuine numerical failure."""
    _finite_or_raise(mat, label)
    _finite_or_raise(rhs, label + " rhs")
    try:
        return cho_solve(cho_factor(mat, lower=True), rhs)
    except LinAlgError:
        jitter = 1e-12 * np.trace(mat) / mat.shape[0]
        try:
            bumped = mat + jitter * np.eye(mat.shape[0])
            return cho_solve(cho_factor(bumped, lower=True), rhs)
        except LinAlgError as exc:
            raise NumericsError(
                f"Cholesky failed for {label} even after jitter {jitter:.3g} "
                f"(size {mat.shape[0]})"
            ) from exc


def update_z(point, duals, lambdas, x_series, y_series) -> RnnParams:
    """Exact minimizer of L over the weight block z with (h, u) fixed.

    Solves U_w K1 = M G and U_a K2 = (2/T) Y H~ where U_w = [W | V | b],
    U_a = [A | c], M stacks xi + gamma u per step, and K1, K2 are the small
    Kronecker factors of the normal matrices.
    """
    x_series = np.asarray(x_series, dtype=np.float64)
    y_series = np.asarray(y_series, dtype=np.float64)
    dims = point.dims_for(x_series.shape[0])
    psi = PsiOperator(point.hidden, x_series, dims)
    gamma = duals.gamma

    k1 = gamma * psi.gram_factor() + 2.0 * np.diag(_lambda_diag_w(lambdas, dims))
    m_mat = (duals.xi + gamma * point.preact).reshape((dims.r, dims.t_len), order="F")
    rhs_w = m_mat @ psi.g_mat
    u_w = _spd_solve(k1, rhs_w.T, "z-update recursion block").T

    design = _readout_design(point)
    k2 = (2.0 / dims.t_len) * (design.T @ design) + 2.0 * np.diag(
        _lambda_diag_a(lambdas, dims)
    )
    rhs_a = (2.0 / dims.t_len) * (y_series @ design)
    u_a = _spd_solve(k2, rhs_a.T, "z-update readout block").T

    r, n = dims.r, dims.n
    return RnnParams(
        u_w[:, :r].copy(),
        u_w[:, r : r + n].copy(),
        u_a[:, :r].copy(),
        u_w[:, r + n].copy(),
        u_a[:, r].copy(),
    )


def update_h(point, duals, lambdas, x_series, y_series, act) -> np.ndarray:
    """Exact minimizer of L over h with (z, u) fixed; one factorization of D1
    covers steps 1..T-1 and one of D2 covers the last step."""
    hg = grad_h(point, duals, lambdas, x_series, y_series, act)
    t_len = point.t_len
    h_new = np.empty((point.params.r, t_len))
    if t_len > 1:
        h_new[:, :-1] = _spd_solve(hg.d1, hg.rhs[:, :-1], "h-update interior steps")
    h_new[:, -1] = _spd_solve(hg.d2, hg.rhs[:, -1], "h-update final step")
    return h_new.ravel(order="F")


def update_u(point, duals, lambdas, mu, act, u_prev, x_series) -> np.ndarray:
    """Exact minimizer of L + (mu/2)||u - u_prev||^2 over u with (z, h) fixed.

    Separates per coordinate with theta1 = (Psi(h) w)_i - xi_i / gamma,
    theta2 = h_i + zeta_i / gamma, theta3 = u_prev_i.
    """
    x_series = np.asarray(x_series, dtype=np.float64)
    dims = point.dims_for(x_series.shape[0])
    psi = PsiOperator(point.hidden, x_series, dims)
    gamma = duals.gamma
    theta1 = psi.apply(point.params.w_block()) - duals.xi / gamma
    theta2 = point.hidden + duals.zeta / gamma
    theta3 = np.asarray(u_prev, dtype=np.float64)

    if act.kind in ("relu", "leaky_relu"):
        up, um = _relu_family_candidates(
            theta1, theta2, theta3, gamma, mu, lambdas.l6, act
        )
        v_plus = _phi_arrays(theta1, theta2, theta3, gamma, mu, lambdas.l6, act, up)
        v_minus = _phi_arrays(theta1, theta2, theta3, gamma, mu, lambdas.l6, act, um)
        return np.where(v_plus <= v_minus, up, um)

    out = np.empty_like(theta1)
    for i in range(theta1.size):
        sol = solve_1d(
            OneDimProblem(theta1[i], theta2[i], theta3[i], gamma, mu, lambdas.l6), act
        )
        out[i] = sol.u_star
    return out


@dataclass(frozen=True)
class SweepTrace:
    """AL values after each block of one sweep plus the full step norm."""

    sweep: int
    l_after_z: float
    l_after_h: float
    l_after_u: float
    step_norm: float


@dataclass
class BcdResult:
    point: LiftedPoint
    iters: int
    lip: LipschitzBounds
    trace: list
    converged: bool
    threshold: float
    start_value: float


def bcd_solve(start, duals, lambdas, x_series, y_series, cfg, act) -> BcdResult:
    """Sweep z -> h -> u until the step norm drops below
    eps / max{L1, L2, mu} or the sweep cap is reached.

    The Lipschitz constants are frozen from the AL value at the start point
    (the level the whole trajectory stays under, since every block update
    decreases L).  A capped run returns the best iterate with converged=False;
    the caller decides policy.
    """
    with threadpool_limits(limits=1):
        return _bcd_solve_single_threaded(
            start, duals, lambdas, x_series, y_series, cfg, act
        )


def _bcd_solve_single_threaded(start, duals, lambdas, x_series, y_series, cfg, act):
    # The factor sizes here (r+n+1 at most) lose badly to BLAS thread
    # handoff, hence the single-thread pin in the public entry point.
    x_series = np.asarray(x_series, dtype=np.float64)
    y_series = np.asarray(y_series, dtype=np.float64)
    start_value = al_value(start, duals, lambdas, x_series, y_series, act)
    if not math.isfinite(start_value):
        raise NumericsError("AL value at the BCD start point is not finite")
    lip = lipschitz_bounds(duals, lambdas, x_series, y_series, level=start_value)
    denom = max(lip.l1_const, lip.l2_const, cfg.mu)
    threshold = duals.eps / denom

    point = start.copy()
    trace: list = []
    converged = False
    iters = 0
    for sweep in range(1, cfg.max_inner + 1):
        iters = sweep
        z_prev = point.params.to_flat()
        h_prev = point.hidden
        u_prev = point.preact

        params_new = update_z(point, duals, lambdas, x_series, y_series)
        point = LiftedPoint(params_new, h_prev, u_prev)
        l_after_z = al_value(point, duals, lambdas, x_series, y_series, act)

        h_new = update_h(point, duals, lambdas, x_series, y_series, act)
        point = LiftedPoint(params_new, h_new, u_prev)
        l_after_h = al_value(point, duals, lambdas, x_series, y_series, act)

        u_new = update_u(point, duals, lambdas, cfg.mu, act, u_prev, x_series)
        point = LiftedPoint(params_new, h_new, u_new)
        l_after_u = al_value(point, duals, lambdas, x_series, y_series, act)
        if not math.isfinite(l_after_u):
            raise NumericsError(f"AL value became non-finite at sweep {sweep}")

        step_norm = math.sqrt(
            float(np.sum((params_new.to_flat() - z_prev) ** 2))
            + float(np.sum((h_new - h_prev) ** 2))
            + float(np.sum((u_new - u_prev) ** 2))
        )
        trace.append(SweepTrace(sweep, l_after_z, l_after_h, l_after_u, step_norm))
        if step_norm <= threshold:
            converged = True
            break
    return BcdResult(point, iters, lip, trace, converged, threshold, start_value)


def iteration_bound(start_val, duals, lip, alphas, mu, eps, use_max_variant=False) -> int:
    """Certified sweep count for meeting the stop rule at tolerance eps.

    alphas are lower bounds on the z/h block strong-convexity constants
    (2 min lambda_1..5 and gamma are always valid).  The default combines
    them with min{a1/2, a2/2, mu/2}, the direction the telescoped descent
    argument supports; the max variant reproduces the looser written form.
    """
    alpha1, alpha2 = alphas
    if not (alpha1 > 0.0 and alpha2 > 0.0):
        raise ValueError("alpha lower bounds must be positive")
    if not eps > 0.0:
        raise ValueError("eps must be strictly positive")
    gamma = duals.gamma
    numer = (
        start_val
        + float(duals.xi @ duals.xi) / (2.0 * gamma)
        + float(duals.zeta @ duals.zeta) / (2.0 * gamma)
    ) * max(lip.l1_const, lip.l2_const, mu) ** 2
    combine = max if use_max_variant else min
    c = combine(0.5 * alpha1, 0.5 * alpha2, 0.5 * mu)
    return int(math.ceil(numer / (c * eps * eps)))
