"""Exact one-dimensional Wasserstein geometry through quantile functions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DegenerateDensityError, DensityGrid, DiscreteMeasure, GridSpec

__all__ = [
    "QuantileCurve",
    "DEFAULT_QUANTILE_POINTS",
    "quantile_from_density",
    "quantile_from_measure",
    "curve_to_measure",
    "isotonic_projection",
    "w2_1d",
    "w2_discrete_1d",
    "weighted_quantile_barycenter",
]

DEFAULT_QUANTILE_POINTS = 201


@dataclass(frozen=True)
class QuantileCurve:
    """Nondecreasing quantile values on the uniform grid ``t_j = j / (P - 1)``."""

    values: np.ndarray = field(repr=False)
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size < 3:
            raise ValueError("a quantile curve needs at least 3 points")
        if np.any(np.diff(values) < -1e-12):
            raise ValueError("quantile values must be nondecreasing")
        if values[0] < self.lower - 1e-12 or values[-1] > self.upper + 1e-12:
            raise ValueError("quantile values leave the support interval")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def P(self) -> int:
        return self.values.size

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.P)

    def __call__(self, t):
        return np.interp(t, self.t, self.values)

    def mean(self) -> float:
        return float(np.trapezoid(self.values, self.t))

    def shifted(self, delta: float) -> QuantileCurve:
        return QuantileCurve(self.values + delta, self.lower, self.upper)


def _cdf_nodes(w: np.ndarray, f: np.ndarray) -> np.ndarray:
    cdf = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1]) / 2 * np.diff(w))])
    if not cdf[-1] > 0:
        raise DegenerateDensityError("degenerate density")
    return cdf / cdf[-1]


def _invert_cdf(w: np.ndarray, cdf: np.ndarray, t: np.ndarray) -> np.ndarray:
    # left inverse inf{w : F(w) >= t}, linear between nodes
    j = np.searchsorted(cdf, t, side="left")
    j = np.clip(j, 1, len(w) - 1)
    c0, c1 = cdf[j - 1], cdf[j]
    frac = np.where(c1 > c0, (t - c0) / np.where(c1 > c0, c1 - c0, 1.0), 1.0)
    q = w[j - 1] + np.clip(frac, 0.0, 1.0) * (w[j] - w[j - 1])
    # t = 0 maps to the left end of the effective support
    first = np.searchsorted(cdf, 0.0, side="right")
    q[t <= 0] = w[max(first - 1, 0)]
    return q


def quantile_from_density(density: DensityGrid, P: int = DEFAULT_QUANTILE_POINTS) -> QuantileCurve:
    """Quantile curve of a 1-D density through its trapezoid-rule CDF."""
    spec = density.spec
    if spec.dim != 1:
        raise ValueError("quantile_from_density needs a 1-D grid")
    w = spec.axes()[0]
    cdf = _cdf_nodes(w, np.asarray(density.values))
    q = _invert_cdf(w, cdf, np.linspace(0.0, 1.0, P))
    return QuantileCurve(np.maximum.accumulate(q), spec.lower[0], spec.upper[0])


def quantile_from_measure(measure: DiscreteMeasure, P: int = DEFAULT_QUANTILE_POINTS) -> QuantileCurve:
    """Quantile curve of a grid measure read as a density (mass / cell width)."""
    return quantile_from_density(measure.to_density(), P)


def curve_to_measure(curve: QuantileCurve, spec: GridSpec) -> DiscreteMeasure:
    """Push the uniform measure on ``[0, 1]`` through the curve onto a 1-D grid.

    Each quantile segment carries mass ``1 / (P - 1)``, split between the two
    grid nodes next to its midpoint by linear weights.
    """
    if spec.dim != 1:
        raise ValueError("curve_to_measure needs a 1-D grid")
    # sub-sample each segment so that a long, flat segment spreads its mass
    sub = 8
    t_fine = np.linspace(0.0, 1.0, (curve.P - 1) * sub + 1)
    q = curve(0.5 * (t_fine[1:] + t_fine[:-1]))
    pos = (np.clip(q, spec.lower[0], spec.upper[0]) - spec.lower[0]) / spec.steps[0]
    left = np.clip(np.floor(pos).astype(int), 0, spec.m - 2)
    frac = pos - left
    mass = np.zeros(spec.m)
    np.add.at(mass, left, 1.0 - frac)
    np.add.at(mass, left + 1, frac)
    return DiscreteMeasure(spec, mass / mass.sum())


def isotonic_projection(y) -> np.ndarray:
    """Least-squares projection onto nondecreasing sequences (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    means: list[float] = []
    sizes: list[int] = []
    for v in y:
        means.append(float(v))
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            s = sizes[-2] + sizes[-1]
            means[-2] = (means[-2] * sizes[-2] + means[-1] * sizes[-1]) / s
            sizes[-2] = s
            means.pop()
            sizes.pop()
    return np.repeat(means, sizes)


def w2_1d(a: QuantileCurve, b: QuantileCurve) -> float:
    """Squared 2-Wasserstein distance as the L2 distance of quantile curves."""
    if a.P != b.P:
        raise ValueError(f"quantile grids differ: {a.P} vs {b.P}")
    return float(np.trapezoid((a.values - b.values) ** 2, a.t))


def w2_discrete_1d(points, a, b) -> float:
    """Exact squared W2 between two discrete measures on common 1-D support points."""
    points = np.asarray(points, dtype=float)
    order = np.argsort(points)
    x = points[order]
    ca = np.cumsum(np.asarray(a, dtype=float)[order])
    cb = np.cumsum(np.asarray(b, dtype=float)[order])
    ca /= ca[-1]
    cb /= cb[-1]
    # breakpoints of both step quantile functions
    t = np.unique(np.concatenate([[0.0], ca, cb]))
    t = t[t <= 1.0]
    mid = 0.5 * (t[1:] + t[:-1])
    qa = x[np.minimum(np.searchsorted(ca, mid, side="left"), x.size - 1)]
    qb = x[np.minimum(np.searchsorted(cb, mid, side="left"), x.size - 1)]
    return float(np.sum(np.diff(t) * (qa - qb) ** 2))


def weighted_quantile_barycenter(curves, weights, *, atol=1e-8) -> QuantileCurve:
    """Weighted quantile average projected back onto quantile functions.

    Parameters
    ----------
    curves : sequence of QuantileCurve
        Common resolution ``P`` and support interval.
    weights : array_like
        Signed weights with mean one (they sum to ``n``).

    Returns
    -------
    QuantileCurve
        The isotonic projection of ``(1/n) sum_i w_i Q_i``, clamped to the
        support interval of the inputs.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("no curves given")
    weights = np.asarray(weights, dtype=float)
    n = len(curves)
    if weights.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {weights.shape}")
    if abs(weights.mean() - 1.0) > atol:
        raise ValueError(f"weights must average to 1, got mean {weights.mean():.3g}")
    P = curves[0].P
    if any(c.P != P for c in curves):
        raise ValueError("all curves must share the same quantile resolution")
    Q = np.stack([c.values for c in curves])
    avg = weights @ Q / n
    lower = max(c.lower for c in curves)
    upper = min(c.upper for c in curves)
    return QuantileCurve(np.clip(isotonic_projection(avg), lower, upper), lower, upper)
