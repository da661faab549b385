"""Conditional Wasserstein barycenters and two-point geodesics.

A :class:`FittedModel` bundles a predictor sample with its responses and a
weight recipe.  Prediction turns the Fréchet weights at ``x`` into a
weighted barycenter, exactly through quantile curves in one dimension or
with the entropic solver on a grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import sinkhorn as sk
from .frechet import KernelSpec, PredictorSample, global_weights, local_weights
from .grid import DiscreteMeasure, GridSpec, TransportPlan
from .ot1d import (
    QuantileCurve,
    DEFAULT_QUANTILE_POINTS,
    quantile_from_measure,
    w2_1d,
    w2_discrete_1d,
    weighted_quantile_barycenter,
)

__all__ = [
    "FittedModel",
    "fit",
    "predict",
    "predict_path",
    "mccann_interpolate",
    "monotone_plan_1d",
    "geodesic_check",
    "ExtrapolationError",
    "DomainExitError",
    "PathPredictionError",
]

# displaced mass allowed to leave the grid before the push-forward fails;
# entropic plans put tiny positive mass on every pair
OUTSIDE_MASS_TOL = 1e-9


class ExtrapolationError(ValueError):
    """Local fits were asked for a predictor value outside the design."""


class DomainExitError(ValueError):
    """A displacement pushed mass outside the grid rectangle."""


class PathPredictionError(RuntimeError):
    def __init__(self, index, x, cause):
        super().__init__(f"prediction failed at index {index} (x={x}): {cause}")
        self.index = index
        self.x = x


@dataclass(frozen=True)
class FittedModel:
    """Predictors, responses and the recipe that turns them into predictions.

    ``solver`` is ``"exact1d"`` (quantile curves, any 1-D input) or
    ``"sinkhorn"`` (grid measures, any dimension).  ``kernel`` is set only in
    local mode.  Local fits reject ``x`` outside the convex hull of the
    predictors, or outside the box ``domain`` (per-axis ``(low, high)``)
    when one is given.
    """

    sample: PredictorSample
    responses: tuple = field(repr=False)
    mode: str = "global"
    kernel: KernelSpec | None = None
    solver: str = "exact1d"
    settings: sk.SinkhornSettings = sk.SinkhornSettings()
    domain: tuple | None = None

    def __post_init__(self):
        if self.domain is not None:
            box = tuple((float(lo), float(hi)) for lo, hi in self.domain)
            if len(box) != self.sample.q or any(not lo < hi for lo, hi in box):
                raise ValueError("domain needs one (low, high) pair per predictor")
            object.__setattr__(self, "domain", box)
        if self.mode not in ("global", "local"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "local" and self.kernel is None:
            raise ValueError("local mode needs a KernelSpec")
        if self.solver not in ("exact1d", "sinkhorn"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if len(self.responses) != self.sample.n:
            raise ValueError(f"{self.sample.n} predictors but {len(self.responses)} responses")
        first = self.responses[0]
        if self.solver == "exact1d":
            if not all(isinstance(r, QuantileCurve) and r.P == first.P for r in self.responses):
                raise ValueError("exact1d needs quantile curves of one resolution")
        elif not all(isinstance(r, DiscreteMeasure) and r.spec == first.spec for r in self.responses):
            raise ValueError("sinkhorn needs measures on one shared grid")

    @property
    def spec(self) -> GridSpec | None:
        first = self.responses[0]
        return first.spec if isinstance(first, DiscreteMeasure) else None

    def covers(self, x) -> bool:
        """Whether a local fit may be evaluated at ``x``."""
        if self.domain is None:
            return self.sample.in_hull(x)
        x = self.sample.query(x)
        return all(lo - 1e-12 <= v <= hi + 1e-12 for v, (lo, hi) in zip(x, self.domain))

    def weights(self, x) -> np.ndarray:
        if self.mode == "global":
            return global_weights(self.sample, x)
        if not self.covers(x):
            raise ExtrapolationError(
                f"x={np.ravel(x).tolist()} lies outside the design; local fitting "
                "is not suited for extrapolation, use the global mode"
            )
        return local_weights(self.sample, x, self.kernel)


def fit(X, responses, *, mode="global", kernel=None, solver=None, settings=None,
        quantile_points=DEFAULT_QUANTILE_POINTS, domain=None) -> FittedModel:
    """Assemble a :class:`FittedModel`.

    Parameters
    ----------
    X : array_like, shape (n,) or (n, q)
    responses : sequence of DiscreteMeasure or QuantileCurve
    mode : {"global", "local"}
    kernel : KernelSpec, optional
        Defaults to the gaussian preset in local mode.
    solver : {"exact1d", "sinkhorn"}, optional
        Defaults to ``"exact1d"`` for quantile curves and 1-D grids, else
        ``"sinkhorn"``.  With ``"exact1d"``, 1-D grid measures are turned
        into quantile curves with ``quantile_points`` nodes.
    domain : sequence of (low, high), optional
        Predictor box accepted by local fits instead of the sample hull.
    """
    responses = list(responses)
    if not responses:
        raise ValueError("no responses given")
    if mode == "local" and kernel is None:
        kernel = KernelSpec()
    first = responses[0]
    if solver is None:
        one_d = isinstance(first, QuantileCurve) or first.spec.dim == 1
        solver = "exact1d" if one_d else "sinkhorn"
    if solver == "exact1d" and isinstance(first, DiscreteMeasure):
        if first.spec.dim != 1:
            raise ValueError("exact1d needs one-dimensional responses")
        responses = [quantile_from_measure(r, quantile_points) for r in responses]
    return FittedModel(
        PredictorSample(X), tuple(responses), mode, kernel if mode == "local" else None,
        solver, settings or sk.SinkhornSettings(), domain,
    )


def _predict(model: FittedModel, x, init=None, kernel=None):
    w = model.weights(x)
    if model.solver == "exact1d":
        return weighted_quantile_barycenter(model.responses, w), None
    return sk.barycenter_with_state(model.responses, w, model.settings, init=init, kernel=kernel)


def predict(model: FittedModel, x):
    """Conditional barycenter at ``x``: a QuantileCurve or a DiscreteMeasure."""
    return _predict(model, x)[0]


def predict_path(model: FittedModel, xs, *, warm_start=True) -> list:
    """:func:`predict` at every entry of ``xs``, in order.

    With ``warm_start`` the entropic solver starts each point from the
    scalings of the previous one; this changes results only below the
    solver tolerance.
    """
    out = []
    state = None
    kernel = sk.GibbsKernel(model.spec, model.settings) if model.solver == "sinkhorn" else None
    for i, x in enumerate(xs):
        try:
            fitted, new_state = _predict(model, x, state if warm_start else None, kernel)
        except (ValueError, RuntimeError) as exc:
            raise PathPredictionError(i, x, exc) from exc
        state = new_state
        out.append(fitted)
    return out


def monotone_plan_1d(nu0: DiscreteMeasure, nu1: DiscreteMeasure) -> TransportPlan:
    """Optimal plan on a 1-D grid (north-west corner rule on sorted support)."""
    if nu0.spec != nu1.spec or nu0.spec.dim != 1:
        raise ValueError("monotone_plan_1d needs two measures on one 1-D grid")
    a, b = nu0.mass.copy(), nu1.mass.copy()
    m = a.size
    S = np.zeros((m, m))
    i = j = 0
    while i < m and j < m:
        t = min(a[i], b[j])
        S[i, j] += t
        a[i] -= t
        b[j] -= t
        if a[i] <= 1e-18:
            i += 1
        if j < m and b[j] <= 1e-18:
            j += 1
    return TransportPlan(S, nu0.mass, nu1.mass)


def _bin_points(spec: GridSpec, pts: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Multilinear split of weighted points onto the surrounding grid nodes."""
    lo = np.array(spec.lower)
    pos = (pts - lo) / spec.steps
    counts = np.array(spec.counts)
    left = np.clip(np.floor(pos).astype(int), 0, counts - 2)
    frac = np.clip(pos - left, 0.0, 1.0)
    out = np.zeros(spec.m)
    for corner in itertools.product((0, 1), repeat=spec.dim):
        c = np.array(corner)
        wts = mass * np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        idx = np.ravel_multi_index(tuple((left + c).T), spec.counts)
        np.add.at(out, idx, wts)
    return out


def mccann_interpolate(nu0: DiscreteMeasure, nu1: DiscreteMeasure, t: float,
                       settings: sk.SinkhornSettings | str = "exact") -> DiscreteMeasure:
    """Displacement interpolation ``((1-t) id + t T)_# nu0`` along a plan.

    The plan is exact when possible: the monotone plan on 1-D grids, the LP
    for at most ``LP_SIZE_CAP`` points.  Larger grids need ``settings`` for
    an entropic plan.  ``t`` outside ``[0, 1]`` extends the geodesic.

    Raises
    ------
    DomainExitError
        If more than ``OUTSIDE_MASS_TOL`` of the displaced mass leaves the
        grid rectangle.
    """
    spec = nu0.spec
    if nu1.spec != spec:
        raise ValueError("measures live on different grids")
    if isinstance(settings, sk.SinkhornSettings):
        plan, _ = sk.sinkhorn_plan(nu0, nu1, settings)
    elif settings != "exact":
        raise ValueError("settings must be 'exact' or SinkhornSettings")
    elif spec.dim == 1:
        plan = monotone_plan_1d(nu0, nu1)
    elif spec.m <= sk.LP_SIZE_CAP:
        plan = sk.exact_plan(nu0, nu1)
    else:
        raise ValueError(f"exact plans need a 1-D grid or at most {sk.LP_SIZE_CAP} points")

    k, l = np.nonzero(plan.matrix > 0)
    mass = plan.matrix[k, l]
    pts = spec.points()
    moved = (1.0 - t) * pts[k] + t * pts[l]
    inside = spec.contains(moved)
    lost = mass[~inside].sum()
    if lost > OUTSIDE_MASS_TOL:
        raise DomainExitError(
            f"t={t} moves mass {lost:.3g} outside the grid; the geodesic cannot "
            "be extended that far on this domain"
        )
    return DiscreteMeasure(spec, _bin_points(spec, moved[inside], mass[inside]))


def _distance(a, b, metric) -> float:
    if isinstance(a, QuantileCurve):
        return np.sqrt(w2_1d(a, b))
    if isinstance(metric, sk.SinkhornSettings):
        return np.sqrt(max(sk.sinkhorn_divergence(a, b, metric), 0.0))
    if a.spec.dim == 1:
        return np.sqrt(w2_discrete_1d(a.spec.axes()[0], a.mass, b.mass))
    return np.sqrt(sk.exact_w2_discrete(a, b))


def geodesic_check(path, ts, metric: sk.SinkhornSettings | str = "exact") -> float:
    """Largest relative departure of ``path`` from constant speed.

    Returns ``max |d(nu_i, nu_j) - |t_i - t_j| d(nu_0, nu_last) / (t_last - t_0)|``
    divided by ``d(nu_0, nu_last)`` over all pairs.
    """
    path = list(path)
    ts = np.asarray(ts, dtype=float)
    if len(path) < 3 or ts.shape != (len(path),):
        raise ValueError("need at least 3 measures and one t per measure")
    span = ts[-1] - ts[0]
    end = _distance(path[0], path[-1], metric)
    if not end > 0 or span == 0:
        raise ValueError("degenerate path: zero end-to-end distance")
    speed = end / abs(span)
    worst = 0.0
    for i, j in itertools.combinations(range(len(path)), 2):
        d = _distance(path[i], path[j], metric)
        worst = max(worst, abs(d - abs(ts[i] - ts[j]) * speed))
    return worst / end
