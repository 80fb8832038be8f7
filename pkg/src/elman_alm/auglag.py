"""Augmented Lagrangian value, analytic block gradients, Lipschitz constants,
and the stationarity (KKT) residual.

The AL function for penalty gamma and multipliers (xi, zeta) is

    L(s) = R(s) + <xi, c1(s)> + <zeta, c2(s)>
           + (gamma/2) ||c1(s)||^2 + (gamma/2) ||c2(s)||^2

with R = loss + regularizer.  L is quadratic in the weight block z and in the
hidden block h, which is what gives the inner solver its closed-form updates;
the corresponding normal-equation matrices carry Kronecker structure
(Q1 = K1 kron I_r, Q2 = K2 kron I_m) and are stored through their small
factors K1, K2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    Dims,
    LiftedPoint,
    PsiOperator,
    ShapeError,
    constraint_residuals,
    loss,
    regularizer,
)


@dataclass(frozen=True)
class RegWeights:
    """Positive regularization weights l1..l6.

    l6 = 0 is tolerated for diagnostics (the AL value and block updates stay
    well defined) but the Lipschitz constants then do not exist and
    lipschitz_bounds() refuses to evaluate.
    """

    l1: float
    l2: float
    l3: float
    l4: float
    l5: float
    l6: float

    def __post_init__(self):
        for name in ("l1", "l2", "l3", "l4", "l5"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.l6 < 0.0:
            raise ValueError("l6 must be nonnegative")

    @property
    def min_w(self) -> float:
        return min(self.l2, self.l3, self.l4)

    @property
    def min_a(self) -> float:
        return min(self.l1, self.l5)

    @property
    def min_z(self) -> float:
        return min(self.l1, self.l2, self.l3, self.l4, self.l5)

    @classmethod
    def from_tau(cls, tau: float, dims: Dims, l6: float = 1e-8) -> "RegWeights":
        """Size-scaled schedule l1 = tau/rm, l2 = tau/r^2, l3 = tau/rn,
        l4 = tau/r, l5 = tau/m with a fixed small l6."""
        r, n, m = dims.r, dims.n, dims.m
        return cls(tau / (r * m), tau / (r * r), tau / (r * n), tau / r, tau / m, l6)


@dataclass
class AlDuals:
    """One outer-iteration state: multipliers (xi, zeta), penalty gamma, tolerance eps."""

    xi: np.ndarray
    zeta: np.ndarray
    gamma: float
    eps: float = 0.0

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.float64)
        self.zeta = np.asarray(self.zeta, dtype=np.float64)
        if self.xi.shape != self.zeta.shape or self.xi.ndim != 1:
            raise ShapeError("xi and zeta must be flat vectors of equal length")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be strictly positive")
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")

    @classmethod
    def zero(cls, rt: int, gamma: float, eps: float) -> "AlDuals":
        return cls(np.zeros(rt), np.zeros(rt), gamma, eps)


def al_value(point, duals, lambdas, x_series, y_series, act) -> float:
    """Evaluate L(s, xi, zeta, gamma)."""
    dims = point.dims_for(np.asarray(x_series).shape[0])
    c1, c2 = constraint_residuals(point, x_series, act)
    value = (
        loss(point, y_series, dims)
        + regularizer(point, lambdas)
        + duals.xi @ c1
        + duals.zeta @ c2
        + 0.5 * duals.gamma * (c1 @ c1 + c2 @ c2)
    )
    return float(value)


def al_split(point, duals, lambdas, x_series, y_series, act):
    """Smooth/nonsmooth decomposition L = g + q.

    g carries R plus the completed-square c1 penalty; q carries the
    completed-square c2 penalty (the only place sigma(u) enters).
    """
    dims = point.dims_for(np.asarray(x_series).shape[0])
    c1, c2 = constraint_residuals(point, x_series, act)
    gamma = duals.gamma
    g = (
        loss(point, y_series, dims)
        + regularizer(point, lambdas)
        + 0.5 * gamma * np.sum((c1 + duals.xi / gamma) ** 2)
        - (duals.xi @ duals.xi) / (2.0 * gamma)
    )
    q = 0.5 * gamma * np.sum((c2 + duals.zeta / gamma) ** 2) - (
        duals.zeta @ duals.zeta
    ) / (2.0 * gamma)
    return float(g), float(q)


def _lambda_diag_w(lambdas, dims: Dims) -> np.ndarray:
    """Diagonal of the small factor of 2*Lambda1 (per block of r rows)."""
    return np.concatenate(
        [
            np.full(dims.r, lambdas.l2),
            np.full(dims.n, lambdas.l3),
            np.array([lambdas.l4]),
        ]
    )


def _lambda_diag_a(lambdas, dims: Dims) -> np.ndarray:
    return np.concatenate([np.full(dims.r, lambdas.l1), np.array([lambdas.l5])])


def _readout_design(point: LiftedPoint) -> np.ndarray:
    """T x (r+1) matrix with rows (h_t^T, 1); sum_t Phi^T Phi = (H~^T H~) kron I_m."""
    h_mat = point.hidden_mat()
    return np.hstack([h_mat.T, np.ones((point.t_len, 1))])


@dataclass
class ZGradient:
    """Gradient of L in z with its normal-equation pieces.

    The full matrices are Q1 = k1 kron I_r and Q2 = k2 kron I_m; q1, q2 and
    grad are explicit vectors.  Use q1_dense()/q2_dense() on small instances.
    """

    k1: np.ndarray
    k2: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    grad_w: np.ndarray
    grad_a: np.ndarray
    dims: Dims

    @property
    def grad(self) -> np.ndarray:
        return np.concatenate([self.grad_w, self.grad_a])

    def q1_dense(self) -> np.ndarray:
        return np.kron(self.k1, np.eye(self.dims.r))

    def q2_dense(self) -> np.ndarray:
        return np.kron(self.k2, np.eye(self.dims.m))


def grad_z(point, duals, lambdas, x_series, y_series) -> ZGradient:
    """Analytic gradient of L with respect to z = (w; a).

    grad_w = Q1 w + q1 with Q1 = gamma Psi^T Psi + 2 Lambda1 and
    q1 = -Psi^T (xi + gamma u); grad_a = Q2 a + q2 with
    Q2 = (2/T) sum_t Phi^T Phi + 2 Lambda2 and q2 = -(2/T) sum_t Phi^T y_t.
    """
    x_series = np.asarray(x_series, dtype=np.float64)
    y_series = np.asarray(y_series, dtype=np.float64)
    dims = point.dims_for(x_series.shape[0])
    psi = PsiOperator(point.hidden, x_series, dims)
    gamma = duals.gamma

    k1 = gamma * psi.gram_factor() + 2.0 * np.diag(_lambda_diag_w(lambdas, dims))
    q1 = -psi.apply_transpose(duals.xi + gamma * point.preact)
    u_w = np.hstack(
        [point.params.w_mat, point.params.v_mat, point.params.b_vec[:, None]]
    )
    grad_w = (u_w @ k1).ravel(order="F") + q1

    design = _readout_design(point)
    k2 = (2.0 / dims.t_len) * (design.T @ design) + 2.0 * np.diag(
        _lambda_diag_a(lambdas, dims)
    )
    q2 = -(2.0 / dims.t_len) * (y_series @ design).ravel(order="F")
    u_a = np.hstack([point.params.a_mat, point.params.c_vec[:, None]])
    grad_a = (u_a @ k2).ravel(order="F") + q2
    return ZGradient(k1, k2, q1, q2, grad_w, grad_a, dims)


@dataclass
class HGradient:
    """Gradient of L in h; grad column t is D1 h_t - d_t (D2 for the last step)."""

    d1: np.ndarray
    d2: np.ndarray
    rhs: np.ndarray
    grad: np.ndarray


def grad_h(point, duals, lambdas, x_series, y_series, act) -> HGradient:
    """Analytic gradient of L with respect to h.

    D1 = gamma W^T W + (2/T) A^T A + gamma I, D2 = (2/T) A^T A + gamma I.
    The right-hand side at t < T is
    W^T (xi_{t+1} + gamma (u_{t+1} - V x_{t+1} - b)) + gamma sigma(u_t)
    - zeta_t + (2/T) A^T (y_t - c), dropping the W^T term at t = T.
    """
    x_series = np.asarray(x_series, dtype=np.float64)
    y_series = np.asarray(y_series, dtype=np.float64)
    dims = point.dims_for(x_series.shape[0])
    p = point.params
    gamma = duals.gamma
    t_len = dims.t_len

    d1 = gamma * (p.w_mat.T @ p.w_mat) + (2.0 / t_len) * (p.a_mat.T @ p.a_mat)
    d1 = d1 + gamma * np.eye(dims.r)
    d2 = (2.0 / t_len) * (p.a_mat.T @ p.a_mat) + gamma * np.eye(dims.r)

    u_mat = point.preact_mat()
    zeta_mat = duals.zeta.reshape((dims.r, t_len), order="F")
    xi_mat = duals.xi.reshape((dims.r, t_len), order="F")
    rhs = gamma * act.apply(u_mat) - zeta_mat + (2.0 / t_len) * (
        p.a_mat.T @ (y_series - p.c_vec[:, None])
    )
    if t_len > 1:
        shifted = xi_mat[:, 1:] + gamma * (
            u_mat[:, 1:] - p.v_mat @ x_series[:, 1:] - p.b_vec[:, None]
        )
        rhs[:, :-1] += p.w_mat.T @ shifted

    h_mat = point.hidden_mat()
    grad_mat = np.empty_like(h_mat)
    if t_len > 1:
        grad_mat[:, :-1] = d1 @ h_mat[:, :-1] - rhs[:, :-1]
    grad_mat[:, -1] = d2 @ h_mat[:, -1] - rhs[:, -1]
    return HGradient(d1, d2, rhs, grad_mat.ravel(order="F"))


@dataclass(frozen=True)
class LipschitzBounds:
    """Level-set gradient Lipschitz constants and their delta ingredients."""

    delta: float
    delta0: float
    delta1: float
    delta2: float
    delta3: float
    delta4: float
    delta5: float
    l1_const: float
    l2_const: float
    level: float

    @property
    def step_scale(self) -> float:
        """max{L1, L2} part of the stop-rule denominator."""
        return max(self.l1_const, self.l2_const)


def lipschitz_bounds(duals, lambdas, x_series, y_series, level: float) -> LipschitzBounds:
    """Constants L1, L2 valid on the AL level set {s : L(s) <= level}.

    delta1 uses the hidden-state bound delta0 inside the Psi norm, which is
    the form the level-set argument actually supports.  Requires l6 > 0 and
    level >= -||xi||^2/2g - ||zeta||^2/2g (otherwise delta < 0).
    """
    if lambdas.l6 <= 0.0:
        raise ValueError(
            "Lipschitz constants are unbounded when l6 = 0 (the u level-set "
            "bound disappears); use l6 > 0"
        )
    x_series = np.asarray(x_series, dtype=np.float64)
    y_series = np.asarray(y_series, dtype=np.float64)
    gamma = duals.gamma
    xi_norm = float(np.linalg.norm(duals.xi))
    zeta_norm = float(np.linalg.norm(duals.zeta))
    t_len = x_series.shape[1]
    r = duals.xi.size // t_len
    m = y_series.shape[0]

    delta = level + xi_norm**2 / (2.0 * gamma) + zeta_norm**2 / (2.0 * gamma)
    if delta < 0.0:
        raise ValueError(
            f"level {level} lies below the AL lower bound, delta = {delta} < 0"
        )
    delta0 = math.sqrt(2.0 * delta / gamma) + math.sqrt(delta / lambdas.l6) + zeta_norm / gamma
    x_sq = float(np.sum(x_series * x_series))
    delta1 = math.sqrt(r * (delta0**2 + x_sq + t_len))
    delta2 = 2.0 * gamma * delta1 * math.sqrt(r * delta / lambdas.min_w)
    delta3 = math.sqrt(r) * xi_norm + gamma * math.sqrt(r * delta / lambdas.l6)
    y_col_max = float(np.max(np.linalg.norm(y_series, axis=0)))
    delta4 = (2.0 * math.sqrt(m) / math.sqrt(t_len)) * (
        2.0 * math.sqrt(m * (delta0**2 + 1.0)) * math.sqrt(delta / lambdas.min_a)
        + y_col_max
    )
    delta5 = math.sqrt(delta * (t_len - 1) / lambdas.l2) + math.sqrt(t_len)

    l1 = math.sqrt(2.0) * max(gamma * delta1, delta2 + delta3 + delta4)
    l2 = gamma * delta5
    return LipschitzBounds(
        delta, delta0, delta1, delta2, delta3, delta4, delta5, l1, l2, level
    )


def _grad_smooth_kkt(point, xi, zeta, lambdas, x_series, y_series):
    """Single-valued part of grad R + J c1^T xi + the h-block of the c2 term."""
    x_series = np.asarray(x_series, dtype=np.float64)
    y_series = np.asarray(y_series, dtype=np.float64)
    dims = point.dims_for(x_series.shape[0])
    p = point.params
    t_len = dims.t_len
    psi = PsiOperator(point.hidden, x_series, dims)

    u_w = np.hstack([p.w_mat, p.v_mat, p.b_vec[:, None]])
    grad_w = 2.0 * (u_w * _lambda_diag_w(lambdas, dims)[None, :]).ravel(
        order="F"
    ) - psi.apply_transpose(xi)

    design = _readout_design(point)
    resid = (p.a_mat @ point.hidden_mat() + p.c_vec[:, None]) - y_series
    u_a = np.hstack([p.a_mat, p.c_vec[:, None]])
    grad_a = (2.0 / t_len) * (resid @ design).ravel(order="F") + 2.0 * (
        u_a * _lambda_diag_a(lambdas, dims)[None, :]
    ).ravel(order="F")

    xi_mat = xi.reshape((dims.r, t_len), order="F")
    zeta_mat = zeta.reshape((dims.r, t_len), order="F")
    grad_h_mat = (2.0 / t_len) * (p.a_mat.T @ resid) + zeta_mat
    if t_len > 1:
        grad_h_mat[:, :-1] -= p.w_mat.T @ xi_mat[:, 1:]
    return grad_w, grad_a, grad_h_mat.ravel(order="F")


def kkt_residual(point, xi, zeta, lambdas, x_series, y_series, act) -> float:
    """Euclidean norm of the minimal-norm element of
    grad R(s) + J c1(s)^T xi + subdiff(zeta^T c2(s)).

    The u-coordinate set at a kink (u_i = 0) is the interval spanned by
    -zeta_i times the one-sided activation slopes; the minimal-norm selection
    projects the smooth part onto that interval coordinatewise.
    """
    xi = np.asarray(xi, dtype=np.float64)
    zeta = np.asarray(zeta, dtype=np.float64)
    grad_w, grad_a, grad_h_vec = _grad_smooth_kkt(
        point, xi, zeta, lambdas, x_series, y_series
    )

    u = point.preact
    smooth_u = 2.0 * lambdas.l6 * u + xi
    slope = act.derivative(u)
    resid_u = smooth_u - zeta * slope
    if not act.is_smooth:
        left, right = act.slopes_at_zero()
        at_kink = u == 0.0
        if np.any(at_kink):
            lo = np.minimum(-zeta * left, -zeta * right)
            hi = np.maximum(-zeta * left, -zeta * right)
            proj = np.clip(-smooth_u, lo, hi)
            resid_u = np.where(at_kink, smooth_u + proj, resid_u)

    total = math.fsum(
        [
            float(grad_w @ grad_w),
            float(grad_a @ grad_a),
            float(grad_h_vec @ grad_h_vec),
            float(resid_u @ resid_u),
        ]
    )
    return math.sqrt(total)
