"""Simulation generators and integrated error metrics.

One-dimensional study
    Responses are location-scale transforms of a centered quadratic shape
    ``g(u) ∝ max(0, 0.05 - u^2)``.  Each response has quantile function
    ``alpha + sigma G^{-1}(t)`` with ``alpha | x ~ N(0.4 + 0.2 x, 0.01)`` and
    ``sigma | x ~ N(sqrt(1 + 0.02 x), 0.01)``, truncated to ``[0, 1]``.  The
    conditional barycenter, which the global model reproduces, is then the
    shape shifted to ``0.4 + 0.2 x`` and scaled by ``sqrt(1 + 0.02 x)``.

Two-dimensional study
    Truncated Gaussians on the unit square with mean ``(0.4x + 0.3)(1, 1)``
    and covariance ``V diag(lam) V'``, ``V`` a 45 degree rotation and
    ``lam | x ~ N((1 + 0.5x, 1 - 0.5x) / 100, 1e-6 I)``.

All draws are made from one generator per Monte Carlo run, seeded with
``(seed, run)``, so runs can be reproduced one by one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import sinkhorn as sk
from .frechet import KernelSpec, LOCAL_BANDWIDTH_PRESET
from .grid import DensityGrid, DiscreteMeasure, GridSpec, discretize
from .ot1d import DEFAULT_QUANTILE_POINTS, QuantileCurve, w2_1d
from .regression import PathPredictionError, fit, predict_path

__all__ = [
    "SimConfig1D",
    "SimConfig2D",
    "shape_quantile",
    "shape_cdf",
    "generate_1d",
    "true_1d",
    "generate_2d",
    "true_2d",
    "quadrature",
    "integrate_path",
    "emiwe",
    "emise",
    "run_1d",
    "run_2d",
    "SCALE_FLOOR",
    "EIGEN_FLOOR",
]

# half width of the base shape: g(u) > 0 for |u| < A
A = np.sqrt(0.05)
# lower truncation of sigma^2 and of the covariance eigenvalues
SCALE_FLOOR = 1e-4
EIGEN_FLOOR = 1e-4
# points per unit length of the x-quadrature
QUAD_DENSITY = 21

REGIONS = {"interp": ((0.0, 1.0),), "extrap": ((-0.5, 0.0), (1.0, 1.5))}
_V = np.array([[1.0, 1.0], [-1.0, 1.0]]) * np.sqrt(2) / 2


@dataclass(frozen=True)
class SimConfig1D:
    n: int = 100
    P: int = DEFAULT_QUANTILE_POINTS
    grid: int = 101
    mc: int = 100
    seed: int = 0
    bandwidth: float = LOCAL_BANDWIDTH_PRESET
    kernel: str = "epanechnikov"

    def __post_init__(self):
        if self.n < 10:
            raise ValueError(f"n must be at least 10, got {self.n}")
        if self.mc < 1:
            raise ValueError("mc must be at least 1")
        if self.P < 3 or self.grid < 2:
            raise ValueError("P must be >= 3 and grid >= 2")

    @property
    def spec(self) -> GridSpec:
        return GridSpec.regular(0.0, 1.0, self.grid)


@dataclass(frozen=True)
class SimConfig2D:
    n: int = 50
    grid: int = 101
    lam: float = 0.4
    mc: int = 100
    seed: int = 0
    family: str = "gaussian"
    tol: float = 1e-5
    regions: tuple[str, ...] = ("interp",)
    local: bool = False
    bandwidth: float = LOCAL_BANDWIDTH_PRESET
    kernel: str = "gaussian"
    df: float = 2.0

    def __post_init__(self):
        if self.n < 10:
            raise ValueError(f"n must be at least 10, got {self.n}")
        if self.grid < 21:
            raise ValueError(f"grid must have at least 21 points per axis, got {self.grid}")
        if not 0 < self.lam <= 4:
            raise ValueError("lam must lie in (0, 4]")
        if self.mc < 1:
            raise ValueError("mc must be at least 1")
        if self.family not in ("gaussian", "t"):
            raise ValueError(f"unknown response family {self.family!r}")
        if any(r not in REGIONS for r in self.regions):
            raise ValueError(f"regions must be among {sorted(REGIONS)}")
        object.__setattr__(self, "regions", tuple(self.regions))

    @property
    def spec(self) -> GridSpec:
        return GridSpec.regular(0.0, 1.0, self.grid, 2)

    @property
    def settings(self) -> sk.SinkhornSettings:
        """Solver settings for the fits (lam in grid units)."""
        return sk.SinkhornSettings(lam=self.lam, tol=self.tol)

    @property
    def metric_settings(self) -> sk.SinkhornSettings:
        """Divergence settings for the error metric (lam on the physical cost)."""
        return sk.SinkhornSettings(lam=self.lam, tol=1e-9, cost_scale=1.0)


def shape_cdf(u):
    """CDF of the centered shape ``g(u) = 3 / (4A) (1 - u^2 / A^2)`` on ``[-A, A]``."""
    z = np.clip(np.asarray(u, dtype=float) / A, -1.0, 1.0)
    return 0.5 + 0.75 * z - 0.25 * z**3


def shape_quantile(t):
    """Inverse of :func:`shape_cdf` (trigonometric root of the cubic)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return 2 * A * np.sin(np.arcsin(2 * t - 1) / 3)


def _location_scale_curve(alpha, sigma, P, lower=0.0, upper=1.0) -> QuantileCurve:
    # truncation to [lower, upper]: restrict t to the CDF range inside the box
    lo = shape_cdf((lower - alpha) / sigma)
    hi = shape_cdf((upper - alpha) / sigma)
    t = lo + np.linspace(0.0, 1.0, P) * (hi - lo)
    q = np.clip(alpha + sigma * shape_quantile(t), lower, upper)
    return QuantileCurve(np.maximum.accumulate(q), lower, upper)


def generate_1d(config: SimConfig1D, run: int = 0):
    """Predictors and quantile-curve responses for one Monte Carlo run.

    Returns
    -------
    X : ndarray, shape (n,)
    curves : list of QuantileCurve
    truncated : int
        Number of scale draws raised to the floor.
    """
    rng = np.random.default_rng((config.seed, run))
    X = rng.uniform(0.0, 1.0, config.n)
    alpha = rng.normal(0.4 + 0.2 * X, 0.1)
    sigma = rng.normal(np.sqrt(1 + 0.02 * X), 0.1)
    low = sigma**2 < SCALE_FLOOR
    sigma = np.where(low | (sigma < 0), np.sqrt(SCALE_FLOOR), sigma)
    curves = [_location_scale_curve(a, s, config.P) for a, s in zip(alpha, sigma)]
    return X, curves, int(low.sum())


def true_1d(x: float, P: int = DEFAULT_QUANTILE_POINTS) -> QuantileCurve:
    """Conditional barycenter at ``x``: shape centered at ``0.4 + 0.2x``, scale ``sqrt(1 + 0.02x)``."""
    if not -0.5 <= x <= 1.5:
        raise ValueError(f"x={x} outside [-0.5, 1.5]")
    q = 0.4 + 0.2 * x + np.sqrt(1 + 0.02 * x) * shape_quantile(np.linspace(0.0, 1.0, P))
    if q[0] < 0 or q[-1] > 1:
        raise ValueError(f"true distribution at x={x} leaves [0, 1]")
    return QuantileCurve(q, 0.0, 1.0)


def quadrature(region: str):
    """Nodes and trapezoid weights over a region, ``QUAD_DENSITY`` nodes per unit length."""
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    nodes, weights = [], []
    for a, b in REGIONS[region]:
        k = int(round((b - a) * (QUAD_DENSITY - 1))) + 1
        x = np.linspace(a, b, k)
        w = np.full(k, (b - a) / (k - 1))
        w[[0, -1]] /= 2
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def integrate_path(errors, region: str) -> float:
    """Trapezoid integral of per-node errors laid out as in :func:`quadrature`."""
    x, w = quadrature(region)
    errors = np.asarray(errors, dtype=float)
    if errors.shape != x.shape:
        raise ValueError(f"region {region!r} has {x.size} nodes, got {errors.size} errors")
    return float(w @ errors)


def emiwe(fits, region: str, P: int = DEFAULT_QUANTILE_POINTS) -> float:
    """Mean over runs of the integrated squared W2 error of fitted quantile paths.

    ``fits`` holds one path per run, each a list of QuantileCurves at the
    nodes of ``quadrature(region)``.
    """
    x, _ = quadrature(region)
    truth = [true_1d(v, P) for v in x]
    per_run = [integrate_path([w2_1d(f, t) for f, t in zip(path, truth)], region) for path in fits]
    if not per_run:
        raise ValueError("no runs given")
    return float(np.mean(per_run))


def _pdf_2d(config: SimConfig2D, mean, lam) -> np.ndarray:
    cov = _V @ np.diag(lam) @ _V.T
    pts = config.spec.points()
    if config.family == "gaussian":
        return stats.multivariate_normal(mean, cov).pdf(pts)
    return stats.multivariate_t(mean, cov, df=config.df).pdf(pts)


def _measure_2d(config: SimConfig2D, x, lam) -> DiscreteMeasure:
    m = 0.4 * x + 0.3
    return discretize(DensityGrid(config.spec, _pdf_2d(config, [m, m], lam)))


def generate_2d(config: SimConfig2D, run: int = 0):
    """Predictors and discretized truncated responses for one Monte Carlo run.

    Returns ``(X, measures, floored)`` with ``floored`` the number of
    eigenvalue draws raised to ``EIGEN_FLOOR``.
    """
    rng = np.random.default_rng((config.seed, run))
    X = rng.uniform(0.0, 1.0, config.n)
    lam = (np.stack([1 + 0.5 * X, 1 - 0.5 * X], axis=1) + 0.1 * rng.normal(size=(config.n, 2))) / 100
    low = lam < EIGEN_FLOOR
    lam = np.where(low, EIGEN_FLOOR, lam)
    return X, [_measure_2d(config, x, l) for x, l in zip(X, lam)], int(low.sum())


def true_2d(config: SimConfig2D, x: float) -> DiscreteMeasure:
    """Noise-free response at ``x`` (eigenvalues ``(1 +- 0.5x) / 100``)."""
    return _measure_2d(config, x, np.array([1 + 0.5 * x, 1 - 0.5 * x]) / 100)


def emise(fits, config: SimConfig2D, region: str, *, truth=None,
          with_floor=True) -> tuple[float, float | None]:
    """Mean integrated Sinkhorn error of fitted paths and its entropic floor.

    Returns ``(emise, floor)`` where ``floor`` integrates the self-divergence
    of the true path, the value a perfect fit would attain (``None`` unless
    ``with_floor``).
    """
    x, _ = quadrature(region)
    truth = truth or [true_2d(config, v) for v in x]
    s = config.metric_settings
    floor = None
    if with_floor:
        floor = integrate_path([sk.sinkhorn_divergence(t, t, s) for t in truth], region)
    per_run = [
        integrate_path([sk.sinkhorn_divergence(f, t, s) for f, t in zip(path, truth)], region)
        for path in fits
    ]
    if not per_run:
        raise ValueError("no runs given")
    return float(np.mean(per_run)), floor


@dataclass
class SimResult:
    """Per-run integrated errors (one column per metric) and their means."""

    n: int
    columns: tuple[str, ...]
    per_run: np.ndarray = field(repr=False)
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {c: float(v) for c, v in zip(self.columns, np.nanmean(self.per_run, axis=0))}


def _path_error(model, xs, truth, region, distance) -> float:
    path = predict_path(model, xs)
    return integrate_path([distance(f, t) for f, t in zip(path, truth)], region)


def run_1d(config: SimConfig1D) -> SimResult:
    """Global interpolation/extrapolation and local interpolation EMIWE over ``config.mc`` runs.

    A run whose local fit is undefined somewhere on ``[0, 1]`` (fewer than
    two design points inside a compact kernel window) gets NaN in the local
    column; ``summary`` averages the remaining runs and ``extra`` counts them.
    """
    xi, _ = quadrature("interp")
    xe, _ = quadrature("extrap")
    truth_i = [true_1d(v, config.P) for v in xi]
    truth_e = [true_1d(v, config.P) for v in xe]
    kernel = KernelSpec(config.kernel, (config.bandwidth,))
    rows = []
    truncated = failed = 0
    for run in range(config.mc):
        X, curves, low = generate_1d(config, run)
        truncated += low
        glob = fit(X, curves)
        # the study domain [0, 1], not the sample range, bounds local fits
        loc = fit(X, curves, mode="local", kernel=kernel, domain=[(0.0, 1.0)])
        err = [
            _path_error(glob, xe, truth_e, "extrap", w2_1d),
            _path_error(glob, xi, truth_i, "interp", w2_1d),
        ]
        try:
            err.append(_path_error(loc, xi, truth_i, "interp", w2_1d))
        except PathPredictionError:
            failed += 1
            err.append(np.nan)
        rows.append(err)
    return SimResult(
        config.n,
        ("global_extrapolation", "global_interpolation", "local_interpolation"),
        np.array(rows),
        {"truncated": truncated, "local_failures": failed},
    )


def run_2d(config: SimConfig2D) -> SimResult:
    """EMISE of global (and optionally local) fits over ``config.mc`` runs.

    ``extra`` reports the entropic floor of each region next to the count of
    floored eigenvalue draws.
    """
    kernel = KernelSpec(config.kernel, (config.bandwidth,))
    needed = set(config.regions) | ({"interp"} if config.local else set())
    truths = {r: [true_2d(config, v) for v in quadrature(r)[0]] for r in needed}
    columns = [f"global_{'interpolation' if r == 'interp' else 'extrapolation'}" for r in config.regions]
    if config.local:
        columns.append("local_interpolation")
    rows = []
    floored = 0
    for run in range(config.mc):
        X, measures, low = generate_2d(config, run)
        floored += low
        models = [(fit(X, measures, settings=config.settings), r) for r in config.regions]
        if config.local:
            models.append((
                fit(X, measures, mode="local", kernel=kernel, settings=config.settings,
                    domain=[(0.0, 1.0)]),
                "interp",
            ))
        err = []
        for model, region in models:
            path = predict_path(model, quadrature(region)[0])
            err.append(emise([path], config, region, truth=truths[region], with_floor=False)[0])
        rows.append(err)
    extra = {"floored": floored}
    for r in config.regions:
        extra[f"floor_{r}"] = emise([truths[r]], config, r, truth=truths[r])[0]
    return SimResult(config.n, tuple(columns), np.array(rows), extra)
