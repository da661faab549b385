"""Density responses from raw observations: predictor bins and gridded KDE."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from scipy import optimize

from .grid import DensityGrid, GridSpec
from .io import format_float, read_observations, write_grid

__all__ = [
    "bin_by_predictor",
    "kde_on_grid",
    "silverman_bandwidth",
    "sheather_jones_bandwidth",
    "min_range_transform",
    "ingest",
]

logger = logging.getLogger(__name__)


def bin_by_predictor(x, rows, bins: int, lower=None, upper=None):
    """Split ``rows`` into equidistant bins of the scalar predictor ``x``.

    Parameters
    ----------
    x : array_like, shape (N,)
    rows : array_like, shape (N, ...)
    bins : int
        At least 2.
    lower, upper : float, optional
        Binning range, default the range of ``x``.  Rows outside it are
        dropped with a warning.

    Returns
    -------
    list of (float, ndarray)
        Bin center and the rows falling into it; empty bins are dropped.
    """
    if bins < 2:
        raise ValueError("bins must be at least 2")
    x = np.asarray(x, dtype=float).ravel()
    rows = np.asarray(rows)
    if rows.shape[0] != x.size:
        raise ValueError("x and rows differ in length")
    lo = x.min() if lower is None else float(lower)
    hi = x.max() if upper is None else float(upper)
    if not lo < hi:
        raise ValueError("all rows fall into one bin")
    keep = (x >= lo) & (x <= hi)
    if not keep.all():
        logger.warning("dropped %d rows outside [%g, %g]", int((~keep).sum()), lo, hi)
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, x[keep], side="right") - 1, 0, bins - 1)
    kept = rows[keep]
    out = []
    for k in range(bins):
        sel = idx == k
        if sel.any():
            out.append((0.5 * (edges[k] + edges[k + 1]), kept[sel]))
    if len(out) < bins:
        logger.warning("dropped %d empty bins", bins - len(out))
    if len(out) < 2:
        raise ValueError("all rows fall into one bin")
    return out


def _scale(v: np.ndarray) -> float:
    if np.ptp(v) == 0:
        return 0.0
    sd = v.std(ddof=1)
    q75, q25 = np.percentile(v, [75, 25])
    iqr = (q75 - q25) / 1.349
    return min(sd, iqr) if iqr > 0 else sd


def silverman_bandwidth(points) -> np.ndarray:
    """Per-axis normal-reference bandwidths ``s (4 / ((d + 2) N))^(1 / (d + 4))``."""
    pts = _points(points)
    N, d = pts.shape
    if N < 5:
        raise ValueError("automatic bandwidths need at least 5 points")
    scale = np.array([_scale(pts[:, a]) for a in range(d)])
    if np.any(scale <= 0):
        raise ValueError("zero variance point set")
    return scale * (4.0 / ((d + 2) * N)) ** (1.0 / (d + 4))


def _phi4(u):
    return (u**4 - 6 * u**2 + 3) * np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)


def _phi6(u):
    return (u**6 - 15 * u**4 + 45 * u**2 - 15) * np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)


def sheather_jones_bandwidth(x) -> float:
    """Solve-the-equation plug-in bandwidth for a 1-D gaussian KDE.

    Pairwise sums over distinct points are evaluated directly, which is
    quadratic in the sample size.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 5:
        raise ValueError("automatic bandwidths need at least 5 points")
    q75, q25 = np.percentile(x, [75, 25])
    lam = q75 - q25
    if np.ptp(x) == 0:
        raise ValueError("zero variance point set")
    if not lam > 0:
        lam = 1.349 * x.std(ddof=1)
    diff = (x[:, None] - x[None, :])[~np.eye(n, dtype=bool)]

    def s_d(a):
        return _phi4(diff / a).sum() / (n * (n - 1) * a**5)

    def t_d(b):
        return -_phi6(diff / b).sum() / (n * (n - 1) * b**7)

    a = 0.920 * lam * n ** (-1 / 7)
    b = 0.912 * lam * n ** (-1 / 9)
    ratio = 1.357 * (s_d(a) / t_d(b)) ** (1 / 7)
    rk = 1 / (2 * np.sqrt(np.pi))

    def equation(h):
        return (rk / (n * s_d(ratio * h ** (5 / 7)))) ** 0.2 - h

    # bracket as in the usual implementations: start at [0.1, 1] times the
    # normal-reference value and widen until the equation changes sign
    ref = 1.144 * min(x.std(ddof=1), lam / 1.349) * n ** -0.2
    lo, hi = 0.1 * ref, ref
    for _ in range(50):
        f_lo, f_hi = equation(lo), equation(hi)
        if np.isfinite(f_lo) and np.isfinite(f_hi) and f_lo * f_hi <= 0:
            return float(optimize.brentq(equation, lo, hi))
        if not (np.isfinite(f_lo) and f_lo > 0):
            lo *= 1.2
        if not f_hi < 0:
            hi *= 1.2
    raise ValueError("no root for the Sheather-Jones equation")


def _points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0 or not np.all(np.isfinite(pts)):
        raise ValueError("points must be a nonempty finite (N, d) array")
    return pts


def kde_on_grid(points, spec: GridSpec, bandwidth="silverman") -> DensityGrid:
    """Gaussian product-kernel density at the grid nodes, renormalized on the box.

    Parameters
    ----------
    points : array_like, shape (N, d) or (N,)
    spec : GridSpec
        ``d``-dimensional grid; mass outside it is cut off by renormalizing.
    bandwidth : {"silverman", "sj"} or float or sequence of float
        ``"sj"`` is available for ``d = 1`` only.
    """
    pts = _points(points)
    N, d = pts.shape
    if d != spec.dim:
        raise ValueError(f"points have dimension {d}, grid has {spec.dim}")
    if isinstance(bandwidth, str):
        if bandwidth == "silverman":
            h = silverman_bandwidth(pts)
        elif bandwidth == "sj":
            if d != 1:
                raise ValueError("the Sheather-Jones selector is one-dimensional")
            h = np.array([sheather_jones_bandwidth(pts[:, 0])])
        else:
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,))
        if np.any(h <= 0):
            raise ValueError("bandwidths must be positive")
    # the product kernel factorizes over axes: contract one (N, count) factor per axis
    factors = []
    for a, axis in enumerate(spec.axes()):
        u = (axis[None, :] - pts[:, a:a + 1]) / h[a]
        factors.append(np.exp(-0.5 * u * u) / (np.sqrt(2 * np.pi) * h[a]))
    dens = factors[0]
    for f in factors[1:]:
        dens = (dens[:, :, None] * f[:, None, :]).reshape(N, -1)
    values = dens.sum(axis=0) / N
    return DensityGrid(spec, values).normalized()


def min_range_transform(W) -> np.ndarray:
    """``(min, max - min)`` from columns ``(min, max)``, e.g. daily temperatures."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] != 2:
        raise ValueError("min_range_transform needs two response columns")
    return np.column_stack([W[:, 0], W[:, 1] - W[:, 0]])


def ingest(csv_path, out_dir, spec: GridSpec, bins: int, *, lower=None, upper=None,
           bandwidth="silverman", transform=None) -> Path:
    """Observation table to one grid file per predictor bin plus a manifest.

    The manifest ``manifest.csv`` lists ``center,file,count`` per bin; grid
    files are named ``bin_000.csv``, ``bin_001.csv`` and so on.
    """
    X, W = read_observations(csv_path)
    if X.shape[1] != 1:
        raise ValueError("binning needs a single predictor column")
    if transform == "minrange":
        W = min_range_transform(W)
    elif transform is not None:
        raise ValueError(f"unknown transform {transform!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["center,file,count"]
    for k, (center, rows) in enumerate(bin_by_predictor(X[:, 0], W, bins, lower, upper)):
        name = f"bin_{k:03d}.csv"
        write_grid(out_dir / name, kde_on_grid(rows, spec, bandwidth))
        lines.append(f"{format_float(center)},{name},{len(rows)}")
    manifest = out_dir / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
