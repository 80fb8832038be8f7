"""Elman network parameterization, lifting maps, loss, and constraint residuals.

The network is h_t = sigma(W h_{t-1} + V x_t + b), y_hat_t = A h_t + c with
h_0 = 0.  Training works on the lifted variable s = (z; h; u) where
z = (w; a) collects the weights, h stacks the hidden states and u stacks the
pre-activations.  The two equality constraints are

    c1(s) = u - Psi(h) w = 0        (linear recursion)
    c2(s) = h - sigma(u) = 0        (activation)

Vectorization is column-major everywhere: vec(D) stacks the columns of D.
This single convention makes w = vec([W | V | b]) and a = vec([A | c]),
which is what the Kronecker identities below rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Dense materialization of Psi is refused above this many lifted rows;
# use the operator form instead (memory grows like rT * r^2).
DENSE_PSI_LIMIT = 10_000


class ShapeError(ValueError):
    """Raised when operand dimensions do not agree."""


class NumericsError(RuntimeError):
    """Raised when a linear solve or evaluation hits non-finite data."""


def _check(cond, message):
    if not cond:
        raise ShapeError(message)


@dataclass(frozen=True)
class Dims:
    """Problem sizes: input width n, output width m, hidden width r, steps t_len."""

    n: int
    m: int
    r: int
    t_len: int

    def __post_init__(self):
        for name in ("n", "m", "r", "t_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def n_w(self) -> int:
        """Length of the recursion weight block w = vec([W | V | b])."""
        return self.r * self.r + self.r * self.n + self.r

    @property
    def n_a(self) -> int:
        """Length of the readout weight block a = vec([A | c])."""
        return self.m * self.r + self.m


@dataclass(frozen=True)
class Activation:
    """Componentwise activation: relu, leaky_relu (negative slope in (0,1)), or elu."""

    kind: str
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "elu"):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def leaky_relu(cls, slope: float) -> "Activation":
        return cls("leaky_relu", slope)

    @classmethod
    def elu(cls) -> "Activation":
        return cls("elu")

    def apply(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "relu":
            return np.maximum(u, 0.0)
        if self.kind == "leaky_relu":
            return np.maximum(u, self.slope * u)
        return np.where(u >= 0.0, u, np.expm1(u))

    def derivative(self, u):
        """Pointwise slope; the kink at 0 uses the value 0 for relu/leaky_relu."""
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "relu":
            return np.where(u > 0.0, 1.0, 0.0)
        if self.kind == "leaky_relu":
            return np.where(u > 0.0, 1.0, np.where(u < 0.0, self.slope, 0.0))
        return np.where(u >= 0.0, 1.0, np.exp(u))

    def slopes_at_zero(self):
        """One-sided slopes (left, right) at the origin."""
        if self.kind == "relu":
            return 0.0, 1.0
        if self.kind == "leaky_relu":
            return self.slope, 1.0
        return 1.0, 1.0

    @property
    def is_smooth(self) -> bool:
        return self.kind == "elu"

    def label(self) -> str:
        if self.kind == "leaky_relu":
            return f"leaky_relu:{self.slope!r}"
        return self.kind


def parse_activation(label: str) -> Activation:
    """Inverse of Activation.label(); accepts e.g. "relu" or "leaky_relu:0.1"."""
    if ":" in label:
        kind, _, slope = label.partition(":")
        if kind != "leaky_relu":
            raise ValueError(f"unknown activation label {label!r}")
        return Activation.leaky_relu(float(slope))
    return Activation(label)


def _vec(mat) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(mat, dtype=np.float64).ravel(order="F")


@dataclass
class RnnParams:
    """Weight blocks (W, V, A, b, c) with lossless pack/unpack to the flat z."""

    w_mat: np.ndarray
    v_mat: np.ndarray
    a_mat: np.ndarray
    b_vec: np.ndarray
    c_vec: np.ndarray

    def __post_init__(self):
        self.w_mat = np.asarray(self.w_mat, dtype=np.float64)
        self.v_mat = np.asarray(self.v_mat, dtype=np.float64)
        self.a_mat = np.asarray(self.a_mat, dtype=np.float64)
        self.b_vec = np.asarray(self.b_vec, dtype=np.float64)
        self.c_vec = np.asarray(self.c_vec, dtype=np.float64)
        r = self.w_mat.shape[0]
        _check(self.w_mat.shape == (r, r), f"W must be square, got {self.w_mat.shape}")
        _check(self.v_mat.shape[0] == r, "V row count must match W")
        _check(self.a_mat.shape[1] == r, "A column count must match W")
        _check(self.b_vec.shape == (r,), "b length must match hidden width")
        _check(self.c_vec.shape == (self.a_mat.shape[0],), "c length must match A rows")

    @property
    def r(self) -> int:
        return self.w_mat.shape[0]

    @property
    def n(self) -> int:
        return self.v_mat.shape[1]

    @property
    def m(self) -> int:
        return self.a_mat.shape[0]

    @classmethod
    def zeros(cls, dims: Dims) -> "RnnParams":
        return cls(
            np.zeros((dims.r, dims.r)),
            np.zeros((dims.r, dims.n)),
            np.zeros((dims.m, dims.r)),
            np.zeros(dims.r),
            np.zeros(dims.m),
        )

    def w_block(self) -> np.ndarray:
        """w = (vec(W); vec(V); b), length r^2 + rn + r."""
        return np.concatenate([_vec(self.w_mat), _vec(self.v_mat), self.b_vec])

    def a_block(self) -> np.ndarray:
        """a = (vec(A); c), length mr + m."""
        return np.concatenate([_vec(self.a_mat), self.c_vec])

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.w_block(), self.a_block()])

    @classmethod
    def from_blocks(cls, w: np.ndarray, a: np.ndarray, dims: Dims) -> "RnnParams":
        r, n, m = dims.r, dims.n, dims.m
        _check(w.shape == (dims.n_w,), f"w block length {w.shape} != {dims.n_w}")
        _check(a.shape == (dims.n_a,), f"a block length {a.shape} != {dims.n_a}")
        w_mat = w[: r * r].reshape((r, r), order="F")
        v_mat = w[r * r : r * r + r * n].reshape((r, n), order="F")
        b_vec = w[r * r + r * n :].copy()
        a_mat = a[: m * r].reshape((m, r), order="F")
        c_vec = a[m * r :].copy()
        return cls(w_mat, v_mat, a_mat, b_vec, c_vec)

    @classmethod
    def from_flat(cls, z: np.ndarray, dims: Dims) -> "RnnParams":
        z = np.asarray(z, dtype=np.float64)
        _check(z.shape == (dims.n_w + dims.n_a,), "flat z has wrong length")
        return cls.from_blocks(z[: dims.n_w], z[dims.n_w :], dims)

    def copy(self) -> "RnnParams":
        return RnnParams(
            self.w_mat.copy(),
            self.v_mat.copy(),
            self.a_mat.copy(),
            self.b_vec.copy(),
            self.c_vec.copy(),
        )

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(arr))
            for arr in (self.w_mat, self.v_mat, self.a_mat, self.b_vec, self.c_vec)
        )


@dataclass
class LiftedPoint:
    """Full optimization iterate s = (z; h; u)."""

    params: RnnParams
    hidden: np.ndarray
    preact: np.ndarray

    def __post_init__(self):
        self.hidden = np.asarray(self.hidden, dtype=np.float64)
        self.preact = np.asarray(self.preact, dtype=np.float64)
        _check(self.hidden.shape == self.preact.shape, "hidden/preact length mismatch")
        _check(self.hidden.ndim == 1, "hidden must be a flat vector")
        _check(
            self.hidden.size % self.params.r == 0,
            "hidden length must be a multiple of the hidden width",
        )

    @property
    def t_len(self) -> int:
        return self.hidden.size // self.params.r

    def dims_for(self, n: int) -> Dims:
        return Dims(n, self.params.m, self.params.r, self.t_len)

    def hidden_mat(self) -> np.ndarray:
        """Hidden states as an r x T matrix (column t is h_t)."""
        return self.hidden.reshape((self.params.r, self.t_len), order="F")

    def preact_mat(self) -> np.ndarray:
        return self.preact.reshape((self.params.r, self.t_len), order="F")

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.params.to_flat(), self.hidden, self.preact])

    @classmethod
    def from_flat(cls, s: np.ndarray, dims: Dims) -> "LiftedPoint":
        s = np.asarray(s, dtype=np.float64)
        n_z = dims.n_w + dims.n_a
        _check(s.shape == (n_z + 2 * dims.r * dims.t_len,), "flat s has wrong length")
        params = RnnParams.from_flat(s[:n_z], dims)
        rt = dims.r * dims.t_len
        return cls(params, s[n_z : n_z + rt].copy(), s[n_z + rt :].copy())

    def copy(self) -> "LiftedPoint":
        return LiftedPoint(self.params.copy(), self.hidden.copy(), self.preact.copy())


@dataclass
class SequenceDataset:
    """Aligned input series X (n x T) and targets Y (m x T) with a train/test split.

    The training window is t = 1..split, the test window the remaining steps.
    """

    x_series: np.ndarray
    y_series: np.ndarray
    split: int

    def __post_init__(self):
        self.x_series = np.asarray(self.x_series, dtype=np.float64)
        self.y_series = np.asarray(self.y_series, dtype=np.float64)
        _check(self.x_series.ndim == 2 and self.y_series.ndim == 2, "series must be 2-D")
        _check(
            self.x_series.shape[1] == self.y_series.shape[1],
            "X and Y must have the same number of time steps",
        )
        if not 1 <= self.split < self.x_series.shape[1]:
            raise ValueError(
                f"split must satisfy 1 <= split < T, got split={self.split}, "
                f"T={self.x_series.shape[1]}"
            )

    @property
    def n(self) -> int:
        return self.x_series.shape[0]

    @property
    def m(self) -> int:
        return self.y_series.shape[0]

    @property
    def t_total(self) -> int:
        return self.x_series.shape[1]

    @property
    def t_test(self) -> int:
        return self.t_total - self.split

    def train_window(self):
        """(X, Y) restricted to the training steps."""
        return self.x_series[:, : self.split], self.y_series[:, : self.split]


def forward(params: RnnParams, x_series: np.ndarray, act: Activation):
    """Run the nested recursion; returns (hidden, preact, predictions).

    hidden and preact are stacked rT vectors, predictions is m x T.  The
    returned triple is exactly feasible for the lifted constraints.
    """
    x_series = np.asarray(x_series, dtype=np.float64)
    _check(x_series.ndim == 2, "x_series must be n x T")
    _check(
        x_series.shape[0] == params.n,
        f"x_series has {x_series.shape[0]} rows but V expects {params.n}",
    )
    r, t_len = params.r, x_series.shape[1]
    h_mat = np.empty((r, t_len))
    u_mat = np.empty((r, t_len))
    h_prev = np.zeros(r)
    vx = params.v_mat @ x_series + params.b_vec[:, None]
    for t in range(t_len):
        u_t = params.w_mat @ h_prev + vx[:, t]
        h_prev = act.apply(u_t)
        u_mat[:, t] = u_t
        h_mat[:, t] = h_prev
    preds = params.a_mat @ h_mat + params.c_vec[:, None]
    return _vec(h_mat), _vec(u_mat), preds


def phi_map(h_t: np.ndarray, dims: Dims) -> np.ndarray:
    """Readout design matrix [h_t^T kron I_m, I_m]; phi_map(h_t) @ a == A h_t + c."""
    h_t = np.asarray(h_t, dtype=np.float64)
    _check(h_t.shape == (dims.r,), f"h_t length {h_t.shape} != hidden width {dims.r}")
    eye_m = np.eye(dims.m)
    return np.hstack([np.kron(h_t[None, :], eye_m), eye_m])


@dataclass
class PsiOperator:
    """Implicit form of the rT x N_w recursion design matrix.

    Block row t is [h_{t-1}^T kron I_r, x_t^T kron I_r, I_r] with h_0 = 0, so the
    whole matrix equals G kron I_r where row t of G is (h_{t-1}; x_t; 1).  All
    products and the Gram matrix are computed through G; the dense matrix is
    only materialized for small instances.
    """

    hidden: np.ndarray
    x_series: np.ndarray
    dims: Dims
    g_mat: np.ndarray = field(init=False)

    def __post_init__(self):
        self.hidden = np.asarray(self.hidden, dtype=np.float64)
        self.x_series = np.asarray(self.x_series, dtype=np.float64)
        d = self.dims
        _check(
            self.hidden.shape == (d.r * d.t_len,),
            f"hidden length {self.hidden.shape} != r*T = {d.r * d.t_len}",
        )
        _check(
            self.x_series.shape == (d.n, d.t_len),
            f"x_series shape {self.x_series.shape} != ({d.n}, {d.t_len})",
        )
        h_mat = self.hidden.reshape((d.r, d.t_len), order="F")
        h_prev = np.zeros((d.r, d.t_len))
        h_prev[:, 1:] = h_mat[:, :-1]
        ones = np.ones((d.t_len, 1))
        self.g_mat = np.hstack([h_prev.T, self.x_series.T, ones])

    @property
    def width(self) -> int:
        """Number of columns of G, i.e. r + n + 1."""
        return self.dims.r + self.dims.n + 1

    def apply(self, w: np.ndarray) -> np.ndarray:
        """Psi(h) @ w as a stacked rT vector."""
        w = np.asarray(w, dtype=np.float64)
        _check(w.shape == (self.dims.n_w,), "w block has wrong length")
        u_mat = w.reshape((self.dims.r, self.width), order="F") @ self.g_mat.T
        return _vec(u_mat)

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        """Psi(h)^T @ v for a stacked rT vector v."""
        v = np.asarray(v, dtype=np.float64)
        _check(v.shape == (self.hidden.size,), "v must have length rT")
        v_mat = v.reshape((self.dims.r, self.dims.t_len), order="F")
        return _vec(v_mat @ self.g_mat)

    def gram_factor(self) -> np.ndarray:
        """The (r+n+1)-square factor K with Psi^T Psi = K kron I_r."""
        return self.g_mat.T @ self.g_mat

    def operator_norm(self) -> float:
        """Exact spectral norm sqrt(r (||h||^2 + ||X||^2 + T))."""
        return float(
            np.sqrt(
                self.dims.r
                * (
                    self.hidden @ self.hidden
                    + np.sum(self.x_series * self.x_series)
                    + self.dims.t_len
                )
            )
        )

    def dense(self) -> np.ndarray:
        rows = self.dims.r * self.dims.t_len
        if rows > DENSE_PSI_LIMIT:
            raise MemoryError(
                f"refusing to materialize dense Psi with {rows} rows "
                f"(limit {DENSE_PSI_LIMIT}); use the operator form"
            )
        return np.kron(self.g_mat, np.eye(self.dims.r))


def psi_map(hidden: np.ndarray, x_series: np.ndarray, dims: Dims) -> PsiOperator:
    """Operator form of Psi(h); call .dense() for the explicit matrix."""
    return PsiOperator(hidden, x_series, dims)


def loss(point: LiftedPoint, y_series: np.ndarray, dims: Dims) -> float:
    """Mean squared readout error (1/T) sum_t ||y_t - Phi(h_t) a||^2."""
    y_series = np.asarray(y_series, dtype=np.float64)
    _check(y_series.shape == (dims.m, dims.t_len), "y_series shape mismatch")
    resid = y_series - (point.params.a_mat @ point.hidden_mat() + point.params.c_vec[:, None])
    return float(np.sum(resid * resid) / dims.t_len)


def regularizer(point: LiftedPoint, lambdas) -> float:
    """Quadratic penalty l1||A||_F^2 + ... + l5||c||^2 + l6||u||^2.

    `lambdas` is an auglag.RegWeights (duck-typed here to keep this module
    free of upward imports).
    """
    p = point.params
    return float(
        lambdas.l1 * np.sum(p.a_mat * p.a_mat)
        + lambdas.l2 * np.sum(p.w_mat * p.w_mat)
        + lambdas.l3 * np.sum(p.v_mat * p.v_mat)
        + lambdas.l4 * (p.b_vec @ p.b_vec)
        + lambdas.l5 * (p.c_vec @ p.c_vec)
        + lambdas.l6 * (point.preact @ point.preact)
    )


def constraint_residuals(point: LiftedPoint, x_series: np.ndarray, act: Activation):
    """(c1, c2) = (u - Psi(h) w, h - sigma(u)) as stacked rT vectors."""
    dims = point.dims_for(np.asarray(x_series).shape[0])
    psi = PsiOperator(point.hidden, x_series, dims)
    c1 = point.preact - psi.apply(point.params.w_block())
    c2 = point.hidden - act.apply(point.preact)
    return c1, c2
