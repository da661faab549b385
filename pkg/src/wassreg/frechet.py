"""Global and local Fréchet regression weights for Euclidean predictors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "PredictorSample",
    "KernelSpec",
    "BandwidthTooSmallError",
    "global_weights",
    "local_weights",
    "LOCAL_BANDWIDTH_PRESET",
]

# bandwidth used for the local fits in the 1-D simulation study
LOCAL_BANDWIDTH_PRESET = 0.1


class BandwidthTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorSample:
    """Predictor matrix with its mean and (1/n-normalized) covariance.

    If the covariance is singular and ``allow_ridge`` is set, the inverse is
    taken of ``Sigma + eps I`` with ``eps = 1e-10 tr(Sigma) / q``; the used
    ``eps`` is stored in ``ridge`` (zero when no ridge was needed).
    """

    X: np.ndarray = field(repr=False)
    allow_ridge: bool = True
    mean: np.ndarray = field(init=False, repr=False)
    cov: np.ndarray = field(init=False, repr=False)
    cov_inv: np.ndarray = field(init=False, repr=False)
    ridge: float = field(init=False, default=0.0)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("X must be an (n, q) array")
        if not np.all(np.isfinite(X)):
            raise ValueError("X must be finite")
        X.setflags(write=False)
        mean = X.mean(axis=0)
        cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
        ridge = 0.0
        q = X.shape[1]
        if X.shape[0] < q + 1 or np.linalg.matrix_rank(cov) < q:
            if not self.allow_ridge:
                raise np.linalg.LinAlgError("singular predictor covariance")
            ridge = 1e-10 * max(np.trace(cov), 1e-300) / q
        cov_inv = np.linalg.inv(cov + ridge * np.eye(q))
        for name, val in (("X", X), ("mean", mean), ("cov", cov), ("cov_inv", cov_inv), ("ridge", ridge)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    def query(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.q:
            raise ValueError(f"query must have {self.q} components")
        return x

    def in_hull(self, x) -> bool:
        x = self.query(x)
        if self.q == 1:
            return bool(self.X.min() - 1e-12 <= x[0] <= self.X.max() + 1e-12)
        from scipy.spatial import Delaunay

        return bool(Delaunay(self.X).find_simplex(x) >= 0)


def _gaussian(u):
    return np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)


def _epanechnikov(u):
    return np.where(np.abs(u) <= 1, 0.75 * (1 - u * u), 0.0)


_KERNELS = {"gaussian": (_gaussian, np.inf), "epanechnikov": (_epanechnikov, 1.0)}


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric smoothing kernel with per-axis bandwidths (product kernel)."""

    family: str = "gaussian"
    bandwidth: tuple[float, ...] = (LOCAL_BANDWIDTH_PRESET,)

    def __post_init__(self):
        if self.family not in _KERNELS:
            raise ValueError(f"unknown kernel family {self.family!r}")
        h = tuple(float(v) for v in np.atleast_1d(self.bandwidth))
        if not h or any(not v > 0 for v in h):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "bandwidth", h)
        self.check_moments()

    def moment(self, j: int, m: int) -> float:
        """``int K(u)^j u^m du`` for the 1-D kernel."""
        k, support = _KERNELS[self.family]
        val, _ = integrate.quad(lambda u: k(u) ** j * u**m, -support, support)
        return float(val)

    def check_moments(self):
        for j, m in ((1, 4), (2, 6)):
            if not np.isfinite(self.moment(j, m)):
                raise ValueError(f"kernel moment K_{j}{m} is not finite")
        if abs(self.moment(1, 0) - 1) > 1e-8 or abs(self.moment(1, 1)) > 1e-10:
            raise ValueError("kernel must be a symmetric probability density")

    def h(self, q: int) -> np.ndarray:
        h = np.asarray(self.bandwidth)
        if h.size == 1:
            return np.full(q, h[0])
        if h.size != q:
            raise ValueError(f"need 1 or {q} bandwidths, got {h.size}")
        return h

    def __call__(self, diffs: np.ndarray) -> np.ndarray:
        """``K_h`` evaluated at an ``(n, q)`` array of differences."""
        k, _ = _KERNELS[self.family]
        h = self.h(diffs.shape[1])
        return np.prod(k(diffs / h) / h, axis=1)


def global_weights(sample: PredictorSample, x) -> np.ndarray:
    """``s_i = 1 + (X_i - mean)^T Sigma^{-1} (x - mean)``; they average to one."""
    x = sample.query(x)
    return 1.0 + (sample.X - sample.mean) @ sample.cov_inv @ (x - sample.mean)


def local_weights(sample: PredictorSample, x, kernel: KernelSpec, floor: float = 1e-12) -> np.ndarray:
    """Local linear weights ``K_h(X_i - x)(1 - mu1^T mu2^{-1}(X_i - x)) / sigma0^2``.

    Raises
    ------
    BandwidthTooSmallError
        When ``sigma0^2`` is not above ``floor * mu0`` (too few effective
        neighbours of ``x``).
    """
    x = sample.query(x)
    diffs = sample.X - x
    k = kernel(diffs)
    mu0 = k.mean()
    mu1 = (k[:, None] * diffs).mean(axis=0)
    mu2 = (k[:, None, None] * diffs[:, :, None] * diffs[:, None, :]).mean(axis=0)
    if not mu0 > 0:
        raise BandwidthTooSmallError("bandwidth too small at x: no design point in reach")
    try:
        mu2_inv_mu1 = np.linalg.solve(mu2, mu1)
    except np.linalg.LinAlgError:
        raise BandwidthTooSmallError("bandwidth too small at x: singular local moment matrix") from None
    raw = k * (1.0 - diffs @ mu2_inv_mu1)
    # mean(raw) equals mu0 - mu1^T mu2^{-1} mu1 but avoids its cancellation
    sigma0_sq = raw.mean()
    if not sigma0_sq > floor * mu0:
        raise BandwidthTooSmallError("bandwidth too small at x")
    return raw / sigma0_sq
