"""Unlifted training baselines: BPTT gradient plus GD, clipped GD, Nesterov
momentum, mini-batch SGD, and Adam.

All baselines minimize the train-window mean squared error plus the weight
penalties l1..l5 (the lifted-only l6 term has no counterpart here).  The
mini-batch methods sample time indices for the loss while always running the
full forward pass, so hidden states stay exact.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict

import numpy as np
from threadpoolctl import threadpool_limits

from .alm import make_rng, train_test_errors
from .model import Activation, Dims, NumericsError, RnnParams, SequenceDataset

_FIELDS = ("w_mat", "v_mat", "a_mat", "b_vec", "c_vec")


@dataclass(frozen=True)
class OptimizerSpec:
    """First-order method selection and hyperparameters."""

    kind: str
    learning_rate: float
    clip_norm: float | None = None
    momentum: float = 0.9
    batch_size: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gd", "gdc", "gdnm", "sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        if self.kind == "gdc" and not (self.clip_norm and self.clip_norm > 0.0):
            raise ValueError("gdc requires a positive clip_norm")
        if self.kind in ("sgd", "adam") and not (self.batch_size and self.batch_size >= 1):
            raise ValueError(f"{self.kind} requires a positive batch_size")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


class DivergenceError(NumericsError):
    """Loss became non-finite; carries the records accumulated so far."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def _map_params(fn, *params_list) -> RnnParams:
    return RnnParams(*(fn(*(getattr(p, f) for p in params_list)) for f in _FIELDS))


def _zeros_like(params: RnnParams) -> RnnParams:
    return _map_params(np.zeros_like, params)


def _grad_norm(grad: RnnParams) -> float:
    return math.sqrt(
        sum(float(np.sum(getattr(grad, f) ** 2)) for f in _FIELDS)
    )


def bptt_grad(
    params: RnnParams,
    x_series: np.ndarray,
    y_series: np.ndarray,
    lambdas,
    act: Activation,
    time_subset=None,
) -> RnnParams:
    """Reverse-mode gradient of the mean squared error plus weight decay.

    The loss averages ||y_t - y_hat_t||^2 over time_subset (all steps when
    None); the forward recursion always covers the whole horizon.  Kinks use
    slope 0 (matching act.derivative).
    """
    x_series = np.asarray(x_series, dtype=np.float64)
    y_series = np.asarray(y_series, dtype=np.float64)
    t_len = x_series.shape[1]
    r = params.r
    if time_subset is None:
        weights = np.full(t_len, 1.0 / t_len)
    else:
        idx = np.asarray(list(time_subset), dtype=int)
        weights = np.zeros(t_len)
        weights[idx] = 1.0 / idx.size

    h_mat = np.zeros((r, t_len))
    u_mat = np.zeros((r, t_len))
    h_prev = np.zeros(r)
    vx = params.v_mat @ x_series + params.b_vec[:, None]
    for t in range(t_len):
        u_mat[:, t] = params.w_mat @ h_prev + vx[:, t]
        h_prev = act.apply(u_mat[:, t])
        h_mat[:, t] = h_prev

    err = (params.a_mat @ h_mat + params.c_vec[:, None]) - y_series
    d_pred = 2.0 * weights[None, :] * err

    d_a = d_pred @ h_mat.T
    d_c = d_pred.sum(axis=1)
    d_w = np.zeros_like(params.w_mat)
    d_v = np.zeros_like(params.v_mat)
    d_b = np.zeros_like(params.b_vec)
    sig_prime = act.derivative(u_mat)
    du_next = np.zeros(r)
    for t in range(t_len - 1, -1, -1):
        dh = params.a_mat.T @ d_pred[:, t] + params.w_mat.T @ du_next
        du = sig_prime[:, t] * dh
        h_before = h_mat[:, t - 1] if t > 0 else np.zeros(r)
        d_w += np.outer(du, h_before)
        d_v += np.outer(du, x_series[:, t])
        d_b += du
        du_next = du

    return RnnParams(
        d_w + 2.0 * lambdas.l2 * params.w_mat,
        d_v + 2.0 * lambdas.l3 * params.v_mat,
        d_a + 2.0 * lambdas.l1 * params.a_mat,
        d_b + 2.0 * lambdas.l4 * params.b_vec,
        d_c + 2.0 * lambdas.l5 * params.c_vec,
    )


def objective(params: RnnParams, x_series, y_series, lambdas, act) -> float:
    """The quantity the baselines minimize: MSE plus the l1..l5 penalty.

    Diverged weights produce inf/nan without warnings; the training loop
    turns that into DivergenceError.
    """
    x_series = np.asarray(x_series, dtype=np.float64)
    y_series = np.asarray(y_series, dtype=np.float64)
    h_prev = np.zeros(params.r)
    total = 0.0
    t_len = x_series.shape[1]
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(t_len):
            h_prev = act.apply(
                params.w_mat @ h_prev + params.v_mat @ x_series[:, t] + params.b_vec
            )
            e = y_series[:, t] - (params.a_mat @ h_prev + params.c_vec)
            total += float(e @ e)
        penalty = (
            lambdas.l1 * float(np.sum(params.a_mat**2))
            + lambdas.l2 * float(np.sum(params.w_mat**2))
            + lambdas.l3 * float(np.sum(params.v_mat**2))
            + lambdas.l4 * float(params.b_vec @ params.b_vec)
            + lambdas.l5 * float(params.c_vec @ params.c_vec)
        )
        return total / t_len + penalty


def clip_gradient(grad: RnnParams, clip_norm: float) -> RnnParams:
    """Rescale to clip_norm when the stacked norm exceeds it; identity otherwise."""
    norm = _grad_norm(grad)
    if norm <= clip_norm or norm == 0.0:
        return grad
    scale = clip_norm / norm
    return _map_params(lambda g: scale * g, grad)


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    train_err: float
    test_err: float
    wall_ms: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _AdamState:
    m: RnnParams
    v: RnnParams
    step: int = 0


def baseline_train(
    data: SequenceDataset,
    hidden_width: int,
    lambdas,
    opt: OptimizerSpec,
    init,
    act: Activation,
):
    """Run the selected optimizer on the training window.

    Returns (params, records) with one EpochRecord per epoch.  A non-finite
    objective raises DivergenceError carrying the record trail.
    """
    with threadpool_limits(limits=1):
        return _baseline_train_single_threaded(data, hidden_width, lambdas, opt, init, act)


def _baseline_train_single_threaded(data, hidden_width, lambdas, opt, init, act):
    x_tr, y_tr = data.train_window()
    dims = Dims(data.n, data.m, hidden_width, data.split)
    rng = make_rng(opt.seed)
    params = init.draw(dims, rng)

    velocity = _zeros_like(params) if opt.kind == "gdnm" else None
    adam = (
        _AdamState(_zeros_like(params), _zeros_like(params))
        if opt.kind == "adam"
        else None
    )
    records: list[EpochRecord] = []

    def full_grad(at: RnnParams, subset=None) -> RnnParams:
        return bptt_grad(at, x_tr, y_tr, lambdas, act, time_subset=subset)

    def adam_update(grad: RnnParams):
        adam.step += 1
        adam.m = _map_params(
            lambda m, g: opt.beta1 * m + (1.0 - opt.beta1) * g, adam.m, grad
        )
        adam.v = _map_params(
            lambda v, g: opt.beta2 * v + (1.0 - opt.beta2) * g * g, adam.v, grad
        )
        corr1 = 1.0 - opt.beta1**adam.step
        corr2 = 1.0 - opt.beta2**adam.step
        return _map_params(
            lambda p, m, v: p
            - opt.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + opt.adam_eps),
            params,
            adam.m,
            adam.v,
        )

    for epoch in range(1, opt.epochs + 1):
        t_start = time.perf_counter()
        with np.errstate(over="ignore", invalid="ignore"):
            if opt.kind in ("gd", "gdc"):
                grad = full_grad(params)
                if opt.kind == "gdc":
                    grad = clip_gradient(grad, opt.clip_norm)
                params = _map_params(
                    lambda p, g: p - opt.learning_rate * g, params, grad
                )
            elif opt.kind == "gdnm":
                lookahead = _map_params(
                    lambda p, v: p + opt.momentum * v, params, velocity
                )
                grad = full_grad(lookahead)
                velocity = _map_params(
                    lambda v, g: opt.momentum * v - opt.learning_rate * g, velocity, grad
                )
                params = _map_params(lambda p, v: p + v, params, velocity)
            else:
                order = rng.permutation(data.split)
                for lo in range(0, data.split, opt.batch_size):
                    batch = order[lo : lo + opt.batch_size]
                    grad = full_grad(params, subset=batch)
                    if opt.kind == "adam":
                        params = adam_update(grad)
                    else:
                        params = _map_params(
                            lambda p, g: p - opt.learning_rate * g, params, grad
                        )

        obj = objective(params, x_tr, y_tr, lambdas, act)
        train_err, test_err = train_test_errors(params, data, act)
        records.append(
            EpochRecord(
                epoch,
                obj,
                train_err,
                test_err,
                1000.0 * (time.perf_counter() - t_start),
            )
        )
        if not math.isfinite(obj):
            raise DivergenceError(
                f"objective diverged at epoch {epoch}", records
            )
    return params, records
