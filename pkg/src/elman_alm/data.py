"""Synthetic sequence generation, CSV ingestion, and standardization."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alm import make_rng
from .model import Activation, Dims, RnnParams, SequenceDataset, forward


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings: Gaussian weights/noise (sd parameters), uniform inputs."""

    dims: Dims
    weight_sd: float
    noise_sd: float
    input_low: float = -1.0
    input_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.weight_sd > 0.0 and self.noise_sd >= 0.0):
            raise ValueError("weight_sd must be positive, noise_sd nonnegative")
        if not self.input_low < self.input_high:
            raise ValueError("input_low must be below input_high")

    @classmethod
    def from_variances(
        cls,
        dims: Dims,
        weight_var: float,
        noise_var: float,
        input_low: float = -1.0,
        input_high: float = 1.0,
        seed: int = 0,
        scale_is_variance: bool = True,
    ) -> "SyntheticSpec":
        """Build a spec from distribution-table entries.

        Entries like "N(0, 0.8)" are read as variances by default (sd =
        sqrt(value)); pass scale_is_variance=False to read them as sds.
        """
        if scale_is_variance:
            weight_sd, noise_sd = math.sqrt(weight_var), math.sqrt(noise_var)
        else:
            weight_sd, noise_sd = weight_var, noise_var
        return cls(dims, weight_sd, noise_sd, input_low, input_high, seed)


def default_split(t_total: int) -> int:
    """About 9:1 train/test, clamped so both windows are nonempty."""
    return min(max(int(round(0.9 * t_total)), 1), t_total - 1)


def generate_synthetic(spec: SyntheticSpec):
    """Draw ground-truth weights, inputs, and noise; returns (dataset, truth).

    Targets come from the noisy ReLU recursion: Y = forward(truth, X) + noise.
    Identical specs (same seed) produce bitwise-identical datasets.
    """
    d = spec.dims
    rng = make_rng(spec.seed)
    a_mat = rng.normal(0.0, spec.weight_sd, size=(d.m, d.r))
    w_mat = rng.normal(0.0, spec.weight_sd, size=(d.r, d.r))
    v_mat = rng.normal(0.0, spec.weight_sd, size=(d.r, d.n))
    b_vec = rng.normal(0.0, spec.weight_sd, size=d.r)
    c_vec = rng.normal(0.0, spec.weight_sd, size=d.m)
    truth = RnnParams(w_mat, v_mat, a_mat, b_vec, c_vec)

    x_series = rng.uniform(spec.input_low, spec.input_high, size=(d.n, d.t_len))
    noise = rng.normal(0.0, spec.noise_sd, size=(d.m, d.t_len)) if spec.noise_sd > 0 else 0.0
    _, _, preds = forward(truth, x_series, Activation.relu())
    y_series = preds + noise
    dataset = SequenceDataset(x_series, y_series, default_split(d.t_len))
    return dataset, truth


class CsvFormatError(ValueError):
    """Malformed CSV input; the message carries 1-based (row, column)."""


def ingest_csv(path, n: int, m: int, header_policy: str = "none", split: int | None = None) -> SequenceDataset:
    """Read a time-ordered CSV with n input columns followed by m target columns.

    header_policy: "none" (every row is data), "skip" (drop the first row),
    or "auto" (drop the first row when it fails to parse).  Missing or
    non-numeric cells are rejected with their coordinates.
    """
    if header_policy not in ("none", "skip", "auto"):
        raise ValueError(f"unknown header_policy {header_policy!r}")
    rows = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        raw = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not raw:
        raise CsvFormatError(f"{path}: no data rows")

    start = 0
    if header_policy == "skip":
        start = 1
    elif header_policy == "auto":
        try:
            [float(cell) for cell in raw[0][: n + m]]
        except ValueError:
            start = 1

    for i, row in enumerate(raw[start:], start=start + 1):
        if len(row) != n + m:
            raise CsvFormatError(
                f"{path}: row {i} has {len(row)} columns, expected {n + m}"
            )
        parsed = []
        for j, cell in enumerate(row, start=1):
            text = cell.strip()
            if not text:
                raise CsvFormatError(f"{path}: missing value at (row {i}, col {j})")
            try:
                value = float(text)
            except ValueError:
                raise CsvFormatError(
                    f"{path}: non-numeric value {cell!r} at (row {i}, col {j})"
                ) from None
            if not math.isfinite(value):
                raise CsvFormatError(f"{path}: non-finite value at (row {i}, col {j})")
            parsed.append(value)
        rows.append(parsed)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows after header handling")

    table = np.asarray(rows, dtype=np.float64)
    t_total = table.shape[0]
    if split is None:
        split = default_split(t_total)
    return SequenceDataset(table[:, :n].T, table[:, n:].T, split)


@dataclass
class StandardizeStats:
    """Per-feature moments used by the transform; kept for inversion."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    fit_on: str

    def inverse(self, dataset: SequenceDataset) -> SequenceDataset:
        return SequenceDataset(
            dataset.x_series * self.x_std[:, None] + self.x_mean[:, None],
            dataset.y_series * self.y_std[:, None] + self.y_mean[:, None],
            dataset.split,
        )


STD_FLOOR = 1e-12


def standardize(dataset: SequenceDataset, fit_on: str = "train"):
    """Zero-mean unit-variance transform of every input and target feature.

    fit_on="train" (default) estimates the moments on the training window
    only, avoiding test leakage; fit_on="full" uses the whole series.
    Constant features map to zeros through the std floor.
    """
    if fit_on not in ("train", "full"):
        raise ValueError(f"fit_on must be 'train' or 'full', got {fit_on!r}")
    upto = dataset.split if fit_on == "train" else dataset.t_total
    x_fit = dataset.x_series[:, :upto]
    y_fit = dataset.y_series[:, :upto]
    x_mean, y_mean = x_fit.mean(axis=1), y_fit.mean(axis=1)
    x_std = np.maximum(x_fit.std(axis=1), STD_FLOOR)
    y_std = np.maximum(y_fit.std(axis=1), STD_FLOOR)
    transformed = SequenceDataset(
        (dataset.x_series - x_mean[:, None]) / x_std[:, None],
        (dataset.y_series - y_mean[:, None]) / y_std[:, None],
        dataset.split,
    )
    return transformed, StandardizeStats(x_mean, x_std, y_mean, y_std, fit_on)


def _format_row(row) -> str:
    return ",".join(f"{v:.17g}" for v in row)


def save_dataset(out_dir, dataset: SequenceDataset, spec: SyntheticSpec | None = None) -> Path:
    """Write series.csv plus a manifest with shapes, seed, and a checksum."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "series.csv"
    table = np.vstack([dataset.x_series, dataset.y_series]).T
    body = "\n".join(_format_row(row) for row in table) + "\n"
    csv_path.write_text(body)

    digest = hashlib.sha256(body.encode()).hexdigest()
    lines = [
        "elman-alm-dataset 1",
        f"n {dataset.n}",
        f"m {dataset.m}",
        f"t_total {dataset.t_total}",
        f"split {dataset.split}",
        f"sha256 {digest}",
    ]
    if spec is not None:
        lines += [
            f"seed {spec.seed}",
            f"weight_sd {spec.weight_sd:.17g}",
            f"noise_sd {spec.noise_sd:.17g}",
            f"input_low {spec.input_low:.17g}",
            f"input_high {spec.input_high:.17g}",
            f"hidden_width {spec.dims.r}",
        ]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return csv_path


def load_dataset(in_dir) -> SequenceDataset:
    """Read a dataset directory written by save_dataset, verifying the checksum."""
    src = Path(in_dir)
    manifest = {}
    for line in (src / "manifest.txt").read_text().splitlines()[1:]:
        key, _, value = line.partition(" ")
        manifest[key] = value
    body = (src / "series.csv").read_text()
    digest = hashlib.sha256(body.encode()).hexdigest()
    if digest != manifest["sha256"]:
        raise CsvFormatError(f"{src}: checksum mismatch, dataset corrupted")
    return ingest_csv(
        src / "series.csv",
        int(manifest["n"]),
        int(manifest["m"]),
        split=int(manifest["split"]),
    )
