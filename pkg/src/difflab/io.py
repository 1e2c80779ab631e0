"""CSV and JSON artifacts. Floats are written with 17 significant digits."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

FMT = "%.17g"


def fmt(v) -> str:
    return FMT % v


def write_samples_csv(path, times, states) -> None:
    """Rows of (chain_id, t, x_0 .. x_{d-1}) for every recorded time."""
    dim = states[0].shape[1] if states and states[0].ndim == 2 else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain_id", "t"] + [f"x{i}" for i in range(dim)])
        for t, xs in zip(times, states):
            tt = str(t) if isinstance(t, (int, np.integer)) else fmt(t)
            for i, row in enumerate(xs):
                w.writerow([i, tt] + [fmt(v) for v in row])


def read_samples_csv(path) -> dict[str, np.ndarray]:
    """Returns arrays keyed by the t column (as written)."""
    out: dict[str, list] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            out.setdefault(row[1], []).append([float(v) for v in row[2:]])
    return {k: np.asarray(v) for k, v in out.items()}


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step, loss in losses:
            w.writerow([int(step), fmt(loss)])


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj) -> None:
    # json writes floats with repr, which round-trips exactly
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default, allow_nan=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
