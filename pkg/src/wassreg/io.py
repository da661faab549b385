"""Plain-text grid files and observation tables.

A grid file starts with one line ``dim,counts...,lowers...,uppers...``
followed by one value per line in flat (row-major) order.  Floats are
written with ``repr`` so that a write/read round trip is exact and reruns
produce identical bytes.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .grid import DensityGrid, DiscreteMeasure, GridSpec

__all__ = [
    "write_grid",
    "read_grid",
    "read_measure",
    "read_density",
    "read_observations",
    "write_observations",
    "format_float",
]


def format_float(v) -> str:
    return repr(float(v))


def write_grid(path, obj: DensityGrid | DiscreteMeasure) -> Path:
    spec = obj.spec
    values = obj.values if isinstance(obj, DensityGrid) else obj.mass
    header = [str(spec.dim), *map(str, spec.counts), *map(format_float, spec.lower),
              *map(format_float, spec.upper)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        fh.writelines(format_float(v) + "\n" for v in values)
    return path


def read_grid(path) -> tuple[GridSpec, np.ndarray]:
    with open(path) as fh:
        head = fh.readline().strip().split(",")
        try:
            dim = int(head[0])
        except (ValueError, IndexError):
            raise ValueError(f"{path}: bad grid header") from None
        if len(head) != 1 + 3 * dim:
            raise ValueError(f"{path}: header needs {1 + 3 * dim} fields, got {len(head)}")
        counts = [int(v) for v in head[1:1 + dim]]
        lower = [float(v) for v in head[1 + dim:1 + 2 * dim]]
        upper = [float(v) for v in head[1 + 2 * dim:]]
        values = np.array([float(line) for line in fh if line.strip()])
    spec = GridSpec(tuple(lower), tuple(upper), tuple(counts))
    if values.size != spec.m:
        raise ValueError(f"{path}: expected {spec.m} values, found {values.size}")
    return spec, values


def read_measure(path) -> DiscreteMeasure:
    return DiscreteMeasure(*read_grid(path))


def read_density(path) -> DensityGrid:
    return DensityGrid(*read_grid(path))


def read_observations(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``x1[,x2...],w1[,w2...]`` table into predictor and response arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader if r]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    wcols = [i for i, h in enumerate(header) if h.startswith("w")]
    if not xcols or not wcols or len(xcols) + len(wcols) != len(header):
        raise ValueError(f"{path}: header must be x1[,x2...],w1[,w2...], got {header}")
    data = np.array(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: every row needs {len(header)} fields")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values")
    return data[:, xcols], data[:, wcols]


def write_observations(path, X, W) -> Path:
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    W = np.atleast_2d(np.asarray(W, dtype=float).T).T
    header = [f"x{i + 1}" for i in range(X.shape[1])] + [f"w{i + 1}" for i in range(W.shape[1])]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for x, w in zip(X, W):
            out.writerow([format_float(v) for v in (*x, *w)])
    return path
