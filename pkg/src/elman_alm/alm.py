"""Outer loop: multiplier updates, penalty schedule, tolerance shrinkage,
feasibility tracking, and run records.

Each outer iteration approximately minimizes the AL function with the inner
block solver, then updates the multipliers by one dual ascent step, shrinks
the inner tolerance geometrically, and increases the penalty whenever the
constraint violation failed to contract enough.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np
from threadpoolctl import threadpool_limits

from .auglag import AlDuals, RegWeights, al_value, kkt_residual
from .bcd import BcdConfig, bcd_solve
from .model import (
    Activation,
    Dims,
    LiftedPoint,
    NumericsError,
    RnnParams,
    SequenceDataset,
    constraint_residuals,
    forward,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlmConfig:
    """Outer-loop parameters.

    eta1, eta2, eta4 lie in (0,1); eta3 should exceed 1 for the penalty
    growth argument, but the experiment presets use small positive values,
    so eta3 <= 1 is accepted with a logged warning.  Termination is by
    fixed outer count by default; tolerance mode additionally stops once
    both the feasibility and stationarity targets are met.
    """

    gamma0: float
    eps0: float
    eta1: float
    eta2: float
    eta3: float
    eta4: float
    max_outer: int
    gamma_cap: float = 1e12
    feas_tol: float = 1e-6
    kkt_tol: float = 1e-4
    stop_mode: str = "fixed"

    def __post_init__(self):
        if not self.gamma0 > 0.0:
            raise ValueError("gamma0 must be positive")
        if not self.eps0 > 0.0:
            raise ValueError("eps0 must be positive")
        for name in ("eta1", "eta2", "eta4"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not self.eta3 > 0.0:
            raise ValueError("eta3 must be positive")
        if self.eta3 <= 1.0:
            log.warning(
                "eta3 = %g <= 1: outside the range the penalty-growth "
                "analysis assumes; proceeding (experiment presets do this)",
                self.eta3,
            )
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.gamma_cap < self.gamma0:
            raise ValueError("gamma_cap must be at least gamma0")
        if self.stop_mode not in ("fixed", "tolerance"):
            raise ValueError("stop_mode must be 'fixed' or 'tolerance'")


@dataclass
class RunRecord:
    """Per-outer-iteration diagnostics, serialized as one JSONL row."""

    outer_iter: int
    inner_iters: int
    al_value: float
    feas_vio: float
    kkt_res: float
    gamma: float
    eps: float
    xi_norm: float
    zeta_norm: float
    train_err: float
    test_err: float
    wall_ms: float
    inner_converged: bool = True
    bcd_reset: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class InitStrategy:
    """Weight initialization: kind in {normal, he, glorot, lecun}.

    Biases always start at zero.  For 'normal', sd is the standard deviation
    of every weight entry; the fan-based kinds derive a per-matrix sd from
    the matrix shape (fan_in = columns, fan_out = rows).
    """

    kind: str = "normal"
    sd: float = 0.1

    def __post_init__(self):
        if self.kind not in ("normal", "he", "glorot", "lecun"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.kind == "normal" and not self.sd > 0.0:
            raise ValueError("sd must be positive for normal init")

    def _matrix_sd(self, fan_out: int, fan_in: int) -> float:
        if self.kind == "normal":
            return self.sd
        if self.kind == "he":
            return math.sqrt(2.0 / fan_in)
        if self.kind == "glorot":
            return math.sqrt(2.0 / (fan_in + fan_out))
        return math.sqrt(1.0 / fan_in)

    def draw(self, dims: Dims, rng: np.random.Generator) -> RnnParams:
        r, n, m = dims.r, dims.n, dims.m
        w = rng.normal(0.0, self._matrix_sd(r, r), size=(r, r))
        v = rng.normal(0.0, self._matrix_sd(r, n), size=(r, n))
        a = rng.normal(0.0, self._matrix_sd(m, r), size=(m, r))
        return RnnParams(w, v, a, np.zeros(r), np.zeros(m))


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator so that runs are reproducible and streamable."""
    return np.random.Generator(np.random.Philox(seed))


def feasible_init(params0: RnnParams, x_series: np.ndarray, act: Activation) -> LiftedPoint:
    """Lift params0 to an exactly feasible starting point via the recursion."""
    if not params0.is_finite():
        raise NumericsError("initial parameters contain non-finite entries")
    hidden, preact, _ = forward(params0, x_series, act)
    return LiftedPoint(params0.copy(), hidden, preact)


def feas_vio(point: LiftedPoint, x_series: np.ndarray, act: Activation) -> float:
    """max{||u - Psi(h)w||, ||h - sigma(u)||}."""
    c1, c2 = constraint_residuals(point, x_series, act)
    return float(max(np.linalg.norm(c1), np.linalg.norm(c2)))


def update_multipliers(duals: AlDuals, point: LiftedPoint, x_series, act, eta4: float) -> AlDuals:
    """Dual ascent step xi += gamma c1, zeta += gamma c2 and eps *= eta4."""
    c1, c2 = constraint_residuals(point, x_series, act)
    return AlDuals(
        duals.xi + duals.gamma * c1,
        duals.zeta + duals.gamma * c2,
        duals.gamma,
        duals.eps * eta4,
    )


def update_penalty(duals: AlDuals, point_now, point_prev, cfg: AlmConfig, x_series, act) -> float:
    """Keep gamma when the violation contracted by eta1, otherwise raise it to
    max{gamma/eta2, ||xi||^(1+eta3), ||zeta||^(1+eta3)} (capped)."""
    c1_now, c2_now = constraint_residuals(point_now, x_series, act)
    c1_prev, c2_prev = constraint_residuals(point_prev, x_series, act)
    vio_now = max(np.linalg.norm(c1_now), np.linalg.norm(c2_now))
    vio_prev = max(np.linalg.norm(c1_prev), np.linalg.norm(c2_prev))
    if vio_now <= cfg.eta1 * vio_prev:
        return duals.gamma
    candidate = max(
        duals.gamma / cfg.eta2,
        float(np.linalg.norm(duals.xi)) ** (1.0 + cfg.eta3),
        float(np.linalg.norm(duals.zeta)) ** (1.0 + cfg.eta3),
    )
    if candidate > cfg.gamma_cap:
        log.warning(
            "penalty hit the cap %.3g (wanted %.3g); feasibility may stall",
            cfg.gamma_cap,
            candidate,
        )
        candidate = cfg.gamma_cap
    return max(duals.gamma, candidate)


def train_test_errors(params: RnnParams, data: SequenceDataset, act: Activation):
    """Mean squared prediction errors over the train and test windows.

    The recursion runs over the full horizon with the given weights, so the
    hidden state carries across the split boundary.  Diverged weights yield
    inf errors rather than warnings; callers treat non-finite as failure.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        _, _, preds = forward(params, data.x_series, act)
        resid = data.y_series - preds
        sq = np.sum(resid * resid, axis=0)
    t1 = data.split
    train_err = float(np.sum(sq[:t1]) / t1)
    test_err = float(np.sum(sq[t1:]) / (data.t_total - t1))
    return train_err, test_err


@dataclass
class AlmResult:
    point: LiftedPoint
    duals: AlDuals
    records: list = field(default_factory=list)
    aborted: bool = False
    inner_traces: list = field(default_factory=list)

    @property
    def params(self) -> RnnParams:
        return self.point.params


def alm_train(
    data: SequenceDataset,
    hidden_width: int,
    lambdas: RegWeights,
    alm_cfg: AlmConfig,
    bcd_cfg: BcdConfig,
    init: InitStrategy,
    act: Activation,
    seed: int,
    keep_inner_traces: bool = False,
) -> AlmResult:
    """Full training run on the dataset's training window.

    Returns the final lifted point, multipliers, and one RunRecord per outer
    iteration (plus a row 0 for the feasible start).  A non-finite AL value
    aborts the run, keeping the records accumulated so far.  With
    keep_inner_traces the per-sweep AL values of every inner solve are
    retained on the result (memory grows with the sweep budget).
    """
    with threadpool_limits(limits=1):
        return _alm_train_single_threaded(
            data, hidden_width, lambdas, alm_cfg, bcd_cfg, init, act, seed,
            keep_inner_traces,
        )


def _alm_train_single_threaded(
    data, hidden_width, lambdas, alm_cfg, bcd_cfg, init, act, seed,
    keep_inner_traces=False,
):
    x_tr, y_tr = data.train_window()
    dims = Dims(data.n, data.m, hidden_width, data.split)
    rng = make_rng(seed)
    params0 = init.draw(dims, rng)
    s0 = feasible_init(params0, x_tr, act)
    duals = AlDuals.zero(dims.r * dims.t_len, alm_cfg.gamma0, alm_cfg.eps0)

    l0 = al_value(s0, duals, lambdas, x_tr, y_tr, act)
    bcd_cfg.check_start(l0)

    tr0, te0 = train_test_errors(params0, data, act)
    records = [
        RunRecord(
            outer_iter=0,
            inner_iters=0,
            al_value=l0,
            feas_vio=feas_vio(s0, x_tr, act),
            kkt_res=kkt_residual(s0, duals.xi, duals.zeta, lambdas, x_tr, y_tr, act),
            gamma=duals.gamma,
            eps=duals.eps,
            xi_norm=0.0,
            zeta_norm=0.0,
            train_err=tr0,
            test_err=te0,
            wall_ms=0.0,
        )
    ]

    point = s0
    result = AlmResult(point, duals, records)
    for k in range(1, alm_cfg.max_outer + 1):
        t_start = time.perf_counter()
        reset = False
        if k > 1:
            warm_value = al_value(point, duals, lambdas, x_tr, y_tr, act)
            if warm_value <= bcd_cfg.big_gamma:
                start = point
            else:
                start = s0
                reset = True
                log.info(
                    "outer %d: warm start value %.4g exceeds big_gamma %.4g, "
                    "restarting from s0",
                    k,
                    warm_value,
                    bcd_cfg.big_gamma,
                )
        else:
            start = s0

        try:
            inner = bcd_solve(start, duals, lambdas, x_tr, y_tr, bcd_cfg, act)
        except NumericsError:
            log.exception("outer %d: inner solve failed, aborting run", k)
            result.aborted = True
            break
        point_new = inner.point
        if keep_inner_traces:
            result.inner_traces.append(inner.trace)
        if not inner.converged:
            log.warning(
                "outer %d: inner solver hit the sweep cap (%d) above the stop "
                "threshold %.3g; continuing with the best iterate",
                k,
                inner.iters,
                inner.threshold,
            )

        duals_new = update_multipliers(duals, point_new, x_tr, act, alm_cfg.eta4)
        gamma_new = update_penalty(duals_new, point_new, point, alm_cfg, x_tr, act)

        fv = feas_vio(point_new, x_tr, act)
        kkt = kkt_residual(
            point_new, duals_new.xi, duals_new.zeta, lambdas, x_tr, y_tr, act
        )
        tr, te = train_test_errors(point_new.params, data, act)
        l_now = al_value(point_new, duals, lambdas, x_tr, y_tr, act)
        wall_ms = 1000.0 * (time.perf_counter() - t_start)
        records.append(
            RunRecord(
                outer_iter=k,
                inner_iters=inner.iters,
                al_value=l_now,
                feas_vio=fv,
                kkt_res=kkt,
                gamma=duals.gamma,
                eps=duals.eps,
                xi_norm=float(np.linalg.norm(duals_new.xi)),
                zeta_norm=float(np.linalg.norm(duals_new.zeta)),
                train_err=tr,
                test_err=te,
                wall_ms=wall_ms,
                inner_converged=inner.converged,
                bcd_reset=reset,
            )
        )
        if not math.isfinite(l_now):
            log.error("outer %d: AL value is non-finite, aborting", k)
            result.aborted = True
            break

        point = point_new
        duals = AlDuals(duals_new.xi, duals_new.zeta, gamma_new, duals_new.eps)
        result.point = point
        result.duals = duals
        if alm_cfg.stop_mode == "tolerance" and fv <= alm_cfg.feas_tol and kkt <= alm_cfg.kkt_tol:
            log.info("outer %d: tolerance targets met, stopping early", k)
            break
    return result
