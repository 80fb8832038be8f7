"""Weight checkpoints as plain text.

The format stores dims, the activation, the vectorization convention, and
each weight block as row-major decimal listings with 17 significant digits,
which round-trips float64 exactly.  Re-serializing a loaded checkpoint must
reproduce the file byte for byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import Activation, Dims, RnnParams, parse_activation

FORMAT_TAG = "elman-alm-checkpoint 1"


def _matrix_lines(name: str, arr: np.ndarray):
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    yield f"{name} {arr.shape[0]} {arr.shape[1]}"
    for row in arr:
        yield " ".join(f"{v:.17g}" for v in row)


def dumps_checkpoint(params: RnnParams, act: Activation, dims: Dims) -> str:
    lines = [
        FORMAT_TAG,
        "vec_convention column-major",
        f"activation {act.label()}",
        f"dims {dims.n} {dims.m} {dims.r} {dims.t_len}",
    ]
    for name, arr in (
        ("W", params.w_mat),
        ("V", params.v_mat),
        ("A", params.a_mat),
        ("b", params.b_vec),
        ("c", params.c_vec),
    ):
        lines.extend(_matrix_lines(name, arr))
    return "\n".join(lines) + "\n"


def save_checkpoint(path, params: RnnParams, act: Activation, dims: Dims) -> Path:
    path = Path(path)
    path.write_text(dumps_checkpoint(params, act, dims))
    return path


def loads_checkpoint(text: str):
    lines = text.splitlines()
    if not lines or lines[0] != FORMAT_TAG:
        raise ValueError(f"not a checkpoint file (expected {FORMAT_TAG!r})")
    if lines[1] != "vec_convention column-major":
        raise ValueError("unsupported vectorization convention")
    act = parse_activation(lines[2].split(" ", 1)[1])
    n, m, r, t_len = (int(v) for v in lines[3].split()[1:])
    dims = Dims(n, m, r, t_len)

    blocks = {}
    i = 4
    while i < len(lines):
        name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        data = [
            [float(v) for v in lines[i + 1 + k].split()] for k in range(rows)
        ]
        blocks[name] = np.asarray(data, dtype=np.float64)
        i += 1 + rows
    params = RnnParams(
        blocks["W"],
        blocks["V"],
        blocks["A"],
        blocks["b"].ravel(),
        blocks["c"].ravel(),
    )
    return params, act, dims


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_text())
