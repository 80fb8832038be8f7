"""Experiment presets: dataset recipes, solver parameters, and the tuned
baseline learning rates, all as flat config dictionaries."""

from __future__ import annotations

_ETAS_SMALL = {"eta1": 0.99, "eta2": 5.0 / 6.0, "eta3": 0.01, "eta4": 5.0 / 6.0}
_ETAS_LARGE = {"eta1": 0.90, "eta2": 0.90, "eta3": 0.015, "eta4": 0.8}

# Both synthetic presets standardize the series: with near-zero inits the
# mean squared target norm is the starting loss, and the tuned runs this
# mirrors start near error = m (output width), which keeps the level bound
# big_gamma = 100 valid for every data draw.
_SYNTH_T10 = {
    "dataset": "synthetic",
    "t_total": 10,
    "n": 5,
    "m": 3,
    "r": 4,
    "weight_var": 0.8,
    "noise_var": 1e-3,
    "input_low": -1.0,
    "input_high": 1.0,
    "standardize": "train",
}

# The large-series generator entries are read as standard deviations and the
# targets standardized: the variance reading makes the depth-450 recursion
# blow up to ~1e88, which is incompatible with the O(10) error scale the
# tuned runs produce, while the sd reading keeps ||W|| at the edge of
# stability and standardized targets put the zero predictor at error ~m.
_SYNTH_T500 = {
    "dataset": "synthetic",
    "t_total": 500,
    "n": 80,
    "m": 30,
    "r": 100,
    "weight_var": 0.05,
    "noise_var": 1e-5,
    "scale_is_variance": False,
    "input_low": -1.0,
    "input_high": 1.0,
    "standardize": "train",
}

_ALM_COMMON = {
    "method": "alm",
    "gamma0": 1.0,
    "eps0": 0.1,
    "mu": 1e-5,
    "big_gamma": 100.0,
    "lambda6": 1e-8,
    "activation": "relu",
    "init": "normal:0.1",
}

PRESETS: dict[str, dict] = {
    # Small synthetic series, feasibility-study settings (100 x 500 budget).
    "table5.2-synthetic-T10": {
        **_SYNTH_T10,
        **_ALM_COMMON,
        **_ETAS_SMALL,
        "tau": 1.2,
        "max_outer": 100,
        "max_inner": 500,
    },
    # Same problem with the short comparison budget (50 x 10).
    "table3a-synthetic-T10": {
        **_SYNTH_T10,
        **_ALM_COMMON,
        **_ETAS_SMALL,
        "tau": 1.2,
        "max_outer": 50,
        "max_inner": 10,
        "init": "normal:0.001",
    },
    # Large synthetic series; the small-sd init keeps the depth-450 start
    # point inside the big_gamma level set.
    "table5.2-synthetic-T500": {
        **_SYNTH_T500,
        **_ALM_COMMON,
        **_ETAS_LARGE,
        "tau": 500.0,
        "max_outer": 100,
        "max_inner": 500,
        "init": "normal:0.001",
    },
    # Monthly-volatility style CSV ingestion (11 inputs, 1 target).
    "table5.2-volatility": {
        "dataset": "csv",
        "n": 11,
        "m": 1,
        "r": 20,
        "standardize": "train",
        **_ALM_COMMON,
        **_ETAS_SMALL,
        "tau": 1.0,
        "max_outer": 200,
        "max_inner": 500,
    },
}

# Tuned learning rates per (method, dataset family, init); GDC values are
# (learning rate, clip norm).  Dataset families: t10, t500, volatility.
BASELINE_LR: dict = {
    "gd": {
        "t10": {"he": 1e-4, "normal:0.001": 1e-3, "normal:0.1": 1e-4, "glorot": 1.0, "lecun": 1.0},
        "volatility": {"he": 1e-4, "normal:0.001": 0.01, "normal:0.1": 0.01, "glorot": 0.01, "lecun": 0.01},
        "t500": {"he": 0.01, "normal:0.001": 0.01, "normal:0.1": 0.01, "glorot": 1e-3, "lecun": 1e-3},
    },
    "gdc": {
        "t10": {
            "he": (1.0, 6.0),
            "normal:0.001": (1e-4, 1.0),
            "normal:0.1": (1e-4, 1.0),
            "glorot": (1.0, 6.0),
            "lecun": (1.0, 6.0),
        },
        "volatility": {
            "he": (1e-4, 3.0),
            "normal:0.001": (0.01, 1.0),
            "normal:0.1": (0.1, 1.0),
            "glorot": (0.1, 4.0),
            "lecun": (0.1, 1.0),
        },
        "t500": {
            "he": (1e-4, 1.0),
            "normal:0.001": (0.01, 1.0),
            "normal:0.1": (0.01, 4.0),
            "glorot": (0.01, 1.5),
            "lecun": (0.1, 0.5),
        },
    },
    "gdnm": {
        "t10": {"he": 1e-3, "normal:0.001": 1e-4, "normal:0.1": 1e-4, "glorot": 1e-4, "lecun": 0.1},
        "volatility": {"he": 1e-4, "normal:0.001": 0.01, "normal:0.1": 0.01, "glorot": 0.01, "lecun": 0.01},
        "t500": {"he": 0.01, "normal:0.001": 0.01, "normal:0.1": 0.01, "glorot": 0.01, "lecun": 0.01},
    },
    "sgd": {
        "t10": {"he": 0.1, "normal:0.001": 0.1, "normal:0.1": 0.1, "glorot": 0.1, "lecun": 0.1},
        "volatility": {"he": 0.01, "normal:0.001": 0.01, "normal:0.1": 0.01, "glorot": 0.01, "lecun": 0.01},
        "t500": {"he": 0.01, "normal:0.001": 1e-3, "normal:0.1": 0.01, "glorot": 0.01, "lecun": 0.01},
    },
    "adam": {
        "t10": {"he": 0.1, "normal:0.001": 0.01, "normal:0.1": 0.01, "glorot": 0.01, "lecun": 0.01},
        "volatility": {"he": 0.01, "normal:0.001": 0.01, "normal:0.1": 0.01, "glorot": 0.01, "lecun": 0.01},
        "t500": {"he": 0.01, "normal:0.001": 0.01, "normal:0.1": 0.01, "glorot": 0.01, "lecun": 0.01},
    },
}

# Clip-norm and learning-rate search spaces used by the original sweeps.
LEARNING_RATE_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
CLIP_NORM_GRID = (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0)

BASELINE_BATCH = {"t10": 2, "volatility": 50, "t500": 100}
BASELINE_EPOCHS = {"t10": 500, "volatility": 5000, "t500": 1000}


def dataset_family(cfg: dict) -> str:
    """Classify a config for the baseline hyperparameter tables."""
    if cfg.get("dataset") == "csv":
        return "volatility"
    return "t500" if int(cfg.get("t_total", 10)) >= 500 else "t10"


def resolve_preset(name: str) -> dict:
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r}; known presets: {known}")
    return dict(PRESETS[name])
