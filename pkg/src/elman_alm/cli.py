"""Experiment runner: `generate`, `train`, and `report` subcommands driven by
flat key=value config files with preset inheritance.

Every run directory receives a metrics.jsonl stream (header line first, then
one record per outer iteration or epoch) and a text checkpoint.  Reruns with
the same config and seed reproduce the metric fields exactly; only the
wall-clock fields differ.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import presets
from .alm import AlmConfig, InitStrategy, alm_train
from .auglag import RegWeights
from .baselines import DivergenceError, OptimizerSpec, baseline_train
from .bcd import BcdConfig
from .checkpoint import save_checkpoint
from .data import (
    SyntheticSpec,
    generate_synthetic,
    ingest_csv,
    load_dataset,
    save_dataset,
    standardize,
)
from .model import Dims, parse_activation

SCHEMA = "elman-alm/run"
SCHEMA_VERSION = 1
METHODS = ("alm", "gd", "gdc", "gdnm", "sgd", "adam")


class ConfigError(ValueError):
    """Invalid or incomplete configuration; message names the field."""


def _coerce(value: str):
    text = value.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines; `preset = name` pulls defaults first."""
    raw = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = _coerce(value)
    cfg = {}
    if "preset" in raw:
        cfg.update(presets.resolve_preset(str(raw["preset"])))
    cfg.update(raw)
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing required config key {key!r}")
    return cfg[key]


def _out_root(cfg: dict, override=None) -> Path:
    if override:
        return Path(override)
    if "out" in cfg:
        return Path(str(cfg["out"]))
    return Path(os.environ.get("ELMAN_ALM_OUT", "runs"))


def _parse_init(label: str) -> InitStrategy:
    if label.startswith("normal"):
        _, _, sd = label.partition(":")
        return InitStrategy("normal", float(sd) if sd else 0.1)
    return InitStrategy(label, 0.1)


def _build_dataset(cfg: dict):
    kind = str(_require(cfg, "dataset"))
    if kind == "synthetic":
        dims = Dims(
            int(_require(cfg, "n")),
            int(_require(cfg, "m")),
            int(_require(cfg, "r")),
            int(_require(cfg, "t_total")),
        )
        if "data_seed" not in cfg:
            raise ConfigError("missing required config key 'data_seed'")
        spec = SyntheticSpec.from_variances(
            dims,
            float(cfg.get("weight_var", 0.8)),
            float(cfg.get("noise_var", 1e-3)),
            float(cfg.get("input_low", -1.0)),
            float(cfg.get("input_high", 1.0)),
            seed=int(cfg["data_seed"]),
            scale_is_variance=bool(cfg.get("scale_is_variance", True)),
        )
        dataset, _ = generate_synthetic(spec)
        source = spec
    elif kind == "csv":
        path = str(_require(cfg, "csv_path"))
        dataset = ingest_csv(
            path,
            int(_require(cfg, "n")),
            int(_require(cfg, "m")),
            header_policy=str(cfg.get("header_policy", "auto")),
        )
        source = path
    elif Path(str(kind)).is_dir():
        dataset = load_dataset(kind)
        source = kind
    else:
        raise ConfigError(
            f"dataset must be 'synthetic', 'csv', or a dataset directory; got {kind!r}"
        )
    mode = str(cfg.get("standardize", "none"))
    if mode not in ("none", "train", "full"):
        raise ConfigError(f"standardize must be none/train/full, got {mode!r}")
    if mode != "none":
        dataset, _ = standardize(dataset, fit_on=mode)
    return dataset, source


def _build_lambdas(cfg: dict, dims: Dims) -> RegWeights:
    explicit = [k for k in ("l1", "l2", "l3", "l4", "l5") if k in cfg]
    if explicit:
        return RegWeights(
            float(_require(cfg, "l1")),
            float(_require(cfg, "l2")),
            float(_require(cfg, "l3")),
            float(_require(cfg, "l4")),
            float(_require(cfg, "l5")),
            float(cfg.get("l6", cfg.get("lambda6", 1e-8))),
        )
    tau = float(_require(cfg, "tau"))
    return RegWeights.from_tau(tau, dims, l6=float(cfg.get("lambda6", 1e-8)))


def _jsonl_header(cfg: dict, method: str, seed: int) -> dict:
    echo = {k: cfg[k] for k in sorted(cfg) if k not in ("out",)}
    return {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "method": method,
        "seed": seed,
        "config": echo,
    }


def _write_jsonl(path: Path, header: dict, records) -> None:
    with open(path, "w") as handle:
        handle.write(json.dumps(header, sort_keys=True) + "\n")
        for record in records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def run_single_training(cfg: dict, seed: int, out_dir: Path) -> int:
    """One training run; returns the process exit code (0 ok, 2 divergence)."""
    method = str(_require(cfg, "method"))
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    dataset, _ = _build_dataset(cfg)
    r = int(_require(cfg, "r"))
    dims = Dims(dataset.n, dataset.m, r, dataset.split)
    lambdas = _build_lambdas(cfg, dims)
    act = parse_activation(str(cfg.get("activation", "relu")))
    init = _parse_init(str(cfg.get("init", "normal:0.1")))

    out_dir.mkdir(parents=True, exist_ok=True)
    header = _jsonl_header(cfg, method, seed)
    metrics_path = out_dir / "metrics.jsonl"

    if method == "alm":
        alm_cfg = AlmConfig(
            gamma0=float(_require(cfg, "gamma0")),
            eps0=float(_require(cfg, "eps0")),
            eta1=float(_require(cfg, "eta1")),
            eta2=float(_require(cfg, "eta2")),
            eta3=float(_require(cfg, "eta3")),
            eta4=float(_require(cfg, "eta4")),
            max_outer=int(_require(cfg, "max_outer")),
            gamma_cap=float(cfg.get("gamma_cap", 1e12)),
            feas_tol=float(cfg.get("feas_tol", 1e-6)),
            kkt_tol=float(cfg.get("kkt_tol", 1e-4)),
            stop_mode=str(cfg.get("stop_mode", "fixed")),
        )
        bcd_cfg = BcdConfig(
            mu=float(_require(cfg, "mu")),
            max_inner=int(_require(cfg, "max_inner")),
            big_gamma=float(_require(cfg, "big_gamma")),
        )
        result = alm_train(dataset, r, lambdas, alm_cfg, bcd_cfg, init, act, seed)
        _write_jsonl(metrics_path, header, result.records)
        save_checkpoint(out_dir / "checkpoint.txt", result.params, act, dims)
        return 2 if result.aborted else 0

    family = presets.dataset_family(cfg)
    lr = cfg.get("learning_rate")
    clip = cfg.get("clip_norm")
    if lr is None:
        table = presets.BASELINE_LR[method][family]
        key = str(cfg.get("init", "normal:0.1"))
        entry = table.get(key)
        if entry is None:
            raise ConfigError(
                f"no tuned learning rate for init {key!r}; set learning_rate"
            )
        if method == "gdc":
            lr, tuned_clip = entry
            clip = clip if clip is not None else tuned_clip
        else:
            lr = entry
    spec = OptimizerSpec(
        kind=method,
        learning_rate=float(lr),
        clip_norm=float(clip) if clip is not None else None,
        momentum=float(cfg.get("momentum", 0.9)),
        batch_size=int(cfg.get("batch_size", presets.BASELINE_BATCH[family])),
        epochs=int(cfg.get("epochs", presets.BASELINE_EPOCHS[family])),
        seed=seed,
    )
    try:
        params, records = baseline_train(dataset, r, lambdas, spec, init, act)
    except DivergenceError as exc:
        _write_jsonl(metrics_path, header, exc.records)
        print(f"{method} diverged: {exc}", file=sys.stderr)
        return 2
    _write_jsonl(metrics_path, header, records)
    save_checkpoint(out_dir / "checkpoint.txt", params, act, dims)
    return 0


def _parse_seeds(args) -> list[int]:
    if args.seeds:
        lo, _, hi = args.seeds.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [args.seed]


def _run_seed(packed):
    cfg, seed, out_dir = packed
    return run_single_training(cfg, seed, Path(out_dir))


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if str(cfg.get("dataset", "synthetic")) != "synthetic":
        raise ConfigError("generate only supports dataset = synthetic")
    if args.seed is not None:
        cfg["data_seed"] = args.seed
    dims = Dims(
        int(_require(cfg, "n")),
        int(_require(cfg, "m")),
        int(_require(cfg, "r")),
        int(_require(cfg, "t_total")),
    )
    if "data_seed" not in cfg:
        raise ConfigError("missing required config key 'data_seed'")
    spec = SyntheticSpec.from_variances(
        dims,
        float(cfg.get("weight_var", 0.8)),
        float(cfg.get("noise_var", 1e-3)),
        float(cfg.get("input_low", -1.0)),
        float(cfg.get("input_high", 1.0)),
        seed=int(cfg["data_seed"]),
        scale_is_variance=bool(cfg.get("scale_is_variance", True)),
    )
    dataset, _ = generate_synthetic(spec)
    out = _out_root(cfg, args.out) / str(cfg.get("name", "dataset"))
    save_dataset(out, dataset, spec)
    print(f"wrote {out}/series.csv ({dataset.n}x{dataset.t_total} inputs, "
          f"{dataset.m}x{dataset.t_total} targets, split {dataset.split})")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.preset:
        base = presets.resolve_preset(args.preset)
        base.update(cfg)
        cfg = base
    if args.method:
        cfg["method"] = args.method
    if args.activation:
        cfg["activation"] = args.activation
    seeds = _parse_seeds(args)
    root = _out_root(cfg, args.out)
    method = str(_require(cfg, "method"))

    jobs = []
    for seed in seeds:
        run_cfg = dict(cfg)
        run_cfg.setdefault("data_seed", 9000)
        run_cfg["seed"] = seed
        jobs.append((run_cfg, seed, root / f"run-{method}-seed{seed}"))

    if len(jobs) == 1:
        codes = [_run_seed(jobs[0])]
    else:
        workers = min(len(jobs), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_run_seed, jobs))
    for (cfg_i, seed, out_dir), code in zip(jobs, codes):
        status = "ok" if code == 0 else "diverged"
        print(f"seed {seed}: {status} -> {out_dir}")
    return max(codes)


def _load_run(run_dir: Path):
    path = run_dir / "metrics.jsonl"
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    records = [json.loads(line) for line in lines[1:]]
    return header, records


def cmd_report(args) -> int:
    rows = []
    feas_series = {}
    incomplete = []
    for run_dir in map(Path, args.run_dirs):
        try:
            header, records = _load_run(run_dir)
        except (OSError, IndexError, json.JSONDecodeError) as exc:
            incomplete.append(f"{run_dir}: unreadable ({exc})")
            continue
        if not records:
            incomplete.append(f"{run_dir}: no records")
            continue
        final = records[-1]
        rows.append(
            {
                "method": header["method"],
                "seed": header["seed"],
                "train_err": final["train_err"],
                "test_err": final["test_err"],
            }
        )
        if "feas_vio" in records[0]:
            feas_series[run_dir.name] = [
                (rec["outer_iter"], rec["feas_vio"]) for rec in records
            ]

    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)

    by_method: dict[str, list] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    summary_lines = ["method,runs,train_err_mean,train_err_sd,test_err_mean,test_err_sd"]
    print(f"{'method':<8}{'runs':>6}{'TrainErr':>24}{'TestErr':>24}")
    for method in sorted(by_method):
        group = by_method[method]
        trains = [g["train_err"] for g in group]
        tests = [g["test_err"] for g in group]
        tr_m, te_m = statistics.fmean(trains), statistics.fmean(tests)
        tr_s = statistics.stdev(trains) if len(trains) > 1 else 0.0
        te_s = statistics.stdev(tests) if len(tests) > 1 else 0.0
        summary_lines.append(
            f"{method},{len(group)},{tr_m:.17g},{tr_s:.17g},{te_m:.17g},{te_s:.17g}"
        )
        print(
            f"{method:<8}{len(group):>6}{tr_m:>16.4f} ± {tr_s:<6.4f}"
            f"{te_m:>16.4f} ± {te_s:<6.4f}"
        )
    (out / "summary.csv").write_text("\n".join(summary_lines) + "\n")

    if feas_series:
        names = sorted(feas_series)
        longest = max(len(v) for v in feas_series.values())
        lines = ["outer_iter," + ",".join(names)]
        for i in range(longest):
            cells = [str(i)]
            for name in names:
                series = feas_series[name]
                cells.append(f"{series[i][1]:.17g}" if i < len(series) else "")
            lines.append(",".join(cells))
        (out / "feasvio_series.csv").write_text("\n".join(lines) + "\n")

    for message in incomplete:
        print(f"warning: {message}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elman-alm",
        description="Train Elman networks by augmented-Lagrangian block descent "
        "and compare against BPTT baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset directory")
    gen.add_argument("--config", required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", default=None)
    gen.set_defaults(func=cmd_generate)

    train = sub.add_parser("train", help="run one or more seeded training jobs")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--seeds", default=None, help="inclusive range a..b")
    train.add_argument("--out", default=None)
    train.add_argument("--method", choices=METHODS, default=None)
    train.add_argument("--activation", default=None)
    train.add_argument("--preset", default=None)
    train.set_defaults(func=cmd_train)

    report = sub.add_parser("report", help="aggregate finished run directories")
    report.add_argument("run_dirs", nargs="+")
    report.add_argument("--out", default=None)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
