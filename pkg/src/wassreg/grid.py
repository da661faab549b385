"""Rectangular grids, densities on them, and discrete measures.

Flat indices follow row-major order with axis 0 varying slowest, which is
also the order used by the CSV grid files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GridSpec",
    "DensityGrid",
    "DiscreteMeasure",
    "TransportPlan",
    "DegenerateDensityError",
    "discretize",
    "cost_matrix",
    "trapezoid_weights",
]


class DegenerateDensityError(ValueError):
    """Raised when a density or mass vector has no positive entries."""


@dataclass(frozen=True)
class GridSpec:
    """Equidistant rectangular grid.

    Parameters
    ----------
    lower, upper : sequence of float
        Per-axis bounds, ``lower[a] < upper[a]``.
    counts : sequence of int
        Per-axis number of nodes, each at least 2.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if not (len(lower) == len(upper) == len(counts)) or not counts:
            raise ValueError("lower, upper and counts must have equal, nonzero length")
        if any(c < 2 for c in counts):
            raise ValueError(f"every axis needs at least 2 points, got {counts}")
        if any(not lo < hi for lo, hi in zip(lower, upper)):
            raise ValueError("lower must be strictly below upper on every axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def regular(cls, lower, upper, count, dim=1):
        """Same bounds and count on every axis."""
        return cls((lower,) * dim, (upper,) * dim, (count,) * dim)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def m(self) -> int:
        return int(np.prod(self.counts))

    @property
    def steps(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.counts) - 1)

    @property
    def zeta(self) -> float:
        """Length of the diagonal of one grid cell."""
        return float(np.sqrt(np.sum(self.steps**2)))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.steps))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, c) for lo, hi, c in zip(self.lower, self.upper, self.counts)]

    def points(self) -> np.ndarray:
        """All nodes as an ``(m, dim)`` array in flat-index order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def unravel(self, k):
        return np.unravel_index(k, self.counts)

    def ravel(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(idx), self.counts))

    def contains(self, pts, atol=1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo = np.array(self.lower) - atol
        hi = np.array(self.upper) + atol
        return np.all((pts >= lo) & (pts <= hi), axis=1)


def trapezoid_weights(spec: GridSpec) -> np.ndarray:
    """Product trapezoid quadrature weights, flattened."""
    w = None
    for step, c in zip(spec.steps, spec.counts):
        wa = np.full(c, step)
        wa[[0, -1]] = step / 2
        w = wa if w is None else np.multiply.outer(w, wa)
    return np.asarray(w).ravel()


@dataclass(frozen=True)
class DensityGrid:
    """Nonnegative density values at the nodes of a grid."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != self.spec.m:
            raise ValueError(f"expected {self.spec.m} values, got {values.size}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("density values must be finite and nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, spec: GridSpec, func, normalize=True):
        """Evaluate ``func`` on the ``(m, dim)`` array of grid nodes."""
        dens = cls(spec, np.clip(func(spec.points()), 0, None))
        return dens.normalized() if normalize else dens

    def integral(self) -> float:
        return float(trapezoid_weights(self.spec) @ self.values)

    def normalized(self) -> DensityGrid:
        total = self.integral()
        if total <= 0:
            raise DegenerateDensityError("degenerate density")
        return DensityGrid(self.spec, self.values / total)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.spec.shape)


def _normalize_mass(mass: np.ndarray) -> np.ndarray:
    total = mass.sum()
    if not total > 0:
        raise DegenerateDensityError("degenerate density")
    out = mass / total
    # residue goes to the largest entry so small entries stay unbiased
    k = int(np.argmax(out))
    out[k] += 1.0 - out.sum()
    return out


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability masses on the nodes of a grid."""

    spec: GridSpec
    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float).ravel()
        if mass.size != self.spec.m:
            raise ValueError(f"expected {self.spec.m} masses, got {mass.size}")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise ValueError("masses must be finite and nonnegative")
        if abs(mass.sum() - 1.0) > 1e-12:
            mass = _normalize_mass(mass.copy())
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def point_mass(cls, spec: GridSpec, index) -> DiscreteMeasure:
        mass = np.zeros(spec.m)
        mass[index if np.isscalar(index) else spec.ravel(index)] = 1.0
        return cls(spec, mass)

    @classmethod
    def uniform(cls, spec: GridSpec) -> DiscreteMeasure:
        return cls(spec, np.full(spec.m, 1.0 / spec.m))

    def mean(self) -> np.ndarray:
        return self.mass @ self.spec.points()

    def covariance(self) -> np.ndarray:
        pts = self.spec.points() - self.mean()
        return (pts * self.mass[:, None]).T @ pts

    def as_array(self) -> np.ndarray:
        return self.mass.reshape(self.spec.shape)

    def to_density(self) -> DensityGrid:
        return DensityGrid(self.spec, self.mass / self.spec.cell_volume).normalized()


@dataclass(frozen=True)
class TransportPlan:
    """Joint mass matrix with its two marginals."""

    matrix: np.ndarray = field(repr=False)
    source: np.ndarray = field(repr=False)
    target: np.ndarray = field(repr=False)

    def marginal_violation(self) -> float:
        rows = np.abs(self.matrix.sum(axis=1) - self.source).max()
        cols = np.abs(self.matrix.sum(axis=0) - self.target).max()
        return float(max(rows, cols))

    def cost(self, cost: np.ndarray) -> float:
        return float(np.sum(self.matrix * cost))


def discretize(density: DensityGrid) -> DiscreteMeasure:
    """Node values divided by their sum; the last rounding residue is absorbed."""
    values = np.asarray(density.values, dtype=float)
    if not values.sum() > 0:
        raise DegenerateDensityError("degenerate density")
    return DiscreteMeasure(density.spec, _normalize_mass(values.copy()))


def cost_matrix(spec: GridSpec) -> np.ndarray:
    """Squared Euclidean distances between all pairs of grid nodes."""
    pts = spec.points()
    # per-axis differences, not the Gram expansion: keeps the diagonal exactly zero
    d = np.zeros((spec.m, spec.m))
    for a in range(spec.dim):
        diff = pts[:, a][:, None] - pts[:, a][None, :]
        d += diff * diff
    return d
