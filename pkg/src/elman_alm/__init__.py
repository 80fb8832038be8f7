"""Training Elman recurrent networks through an equality-constrained lifting
solved by an augmented Lagrangian outer loop with closed-form block
coordinate updates, plus BPTT baselines and an experiment harness."""

from .alm import (
    AlmConfig,
    AlmResult,
    InitStrategy,
    RunRecord,
    alm_train,
    feas_vio,
    feasible_init,
    train_test_errors,
)
from .auglag import AlDuals, LipschitzBounds, RegWeights, al_value, kkt_residual
from .baselines import OptimizerSpec, baseline_train, bptt_grad
from .bcd import BcdConfig, OneDimProblem, bcd_solve, iteration_bound, solve_1d
from .data import SyntheticSpec, generate_synthetic, ingest_csv, standardize
from .model import (
    Activation,
    Dims,
    LiftedPoint,
    RnnParams,
    SequenceDataset,
    forward,
)

__all__ = [
    "Activation",
    "AlDuals",
    "AlmConfig",
    "AlmResult",
    "BcdConfig",
    "Dims",
    "InitStrategy",
    "LiftedPoint",
    "LipschitzBounds",
    "OneDimProblem",
    "OptimizerSpec",
    "RegWeights",
    "RnnParams",
    "RunRecord",
    "SequenceDataset",
    "SyntheticSpec",
    "al_value",
    "alm_train",
    "baseline_train",
    "bcd_solve",
    "bptt_grad",
    "feas_vio",
    "feasible_init",
    "forward",
    "generate_synthetic",
    "ingest_csv",
    "iteration_bound",
    "kkt_residual",
    "solve_1d",
    "standardize",
    "train_test_errors",
]

__version__ = "0.1.0"
