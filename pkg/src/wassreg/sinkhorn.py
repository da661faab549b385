"""Entropy-regularized transport on grids.

The Gibbs kernel ``exp(-lam * D / cost_scale)`` of the squared Euclidean cost
factorizes over the axes of a product grid, so every kernel application is
a sequence of small per-axis matrix products instead of one ``m x m`` product.
``cost_scale`` defaults to the squared smallest grid step, which makes ``lam``
a resolution-free number: ``lam = 1`` blurs by roughly one grid cell whatever
the physical extent of the grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .grid import DiscreteMeasure, GridSpec, TransportPlan, cost_matrix

__all__ = [
    "SinkhornSettings",
    "SinkhornConvergenceError",
    "BarycenterDivergenceError",
    "GibbsKernel",
    "sinkhorn_plan",
    "sinkhorn_divergence",
    "exact_w2_discrete",
    "exact_plan",
    "weighted_sinkhorn_barycenter",
    "barycenter_with_state",
    "LP_SIZE_CAP",
]

logger = logging.getLogger(__name__)

LP_SIZE_CAP = 64
MASS_STALL_TOL = 1e-2


class SinkhornConvergenceError(RuntimeError):
    def __init__(self, message, violation):
        super().__init__(f"{message} (final violation {violation:.3g})")
        self.violation = violation


class BarycenterDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SinkhornSettings:
    """Solver settings.

    Parameters
    ----------
    lam : float
        Inverse entropic regularization; larger is closer to exact transport.
    max_iters : int
        Iteration cap.
    tol : float
        Stopping threshold: sup-norm marginal violation for plans, L1 change
        of successive iterates for barycenters.
    log_domain : bool
        Iterate on log-scalings (default).  The linear domain is faster but
        its scalings under/overflow once ``lam`` times the squared grid
        diameter (in cost units) exceeds a few hundred.
    cost_scale : float or None
        Cost unit. None means the squared smallest step of the grid.
    allow_log_fallback : bool
        Switch to log-domain iterations when linear scalings under/overflow.
    """

    lam: float = 0.4
    max_iters: int = 10_000
    tol: float = 1e-6
    log_domain: bool = True
    cost_scale: float | None = None
    allow_log_fallback: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.cost_scale is not None and not self.cost_scale > 0:
            raise ValueError("cost_scale must be positive")

    def scale_for(self, spec: GridSpec) -> float:
        if self.cost_scale is not None:
            return float(self.cost_scale)
        return float(np.min(spec.steps) ** 2)


class GibbsKernel:
    """Kernel ``exp(-lam D / scale)`` on a grid, separable unless a cost is given.

    ``log_apply`` works on log-values.  For separable kernels it factors the
    input into a per-axis envelope times a bounded remainder, then applies
    each axis as a row-max-normalized matrix, so the cost is a few small
    batched matrix products rather than a full log-sum-exp.  Slices whose
    remainder underflows are recomputed with an exact log-sum-exp.
    """

    def __init__(self, spec: GridSpec, settings: SinkhornSettings, cost=None):
        self.spec = spec
        self.scale = settings.scale_for(spec)
        self.lam = settings.lam
        self.shape = spec.shape
        if cost is None:
            self.axis_cost = [(ax[:, None] - ax[None, :]) ** 2 for ax in spec.axes()]
            self.axis_log = [-self.lam * c / self.scale for c in self.axis_cost]
            self.axis_k = [np.exp(lk) for lk in self.axis_log]
            with np.errstate(divide="ignore"):
                self.axis_log_cost = [np.log(c) for c in self.axis_cost]
            self.cost = None
        else:
            cost = np.asarray(cost, dtype=float)
            if cost.shape != (spec.m, spec.m):
                raise ValueError(f"cost must be {spec.m}x{spec.m}")
            self.cost = cost
            self.log_k = -self.lam * cost / self.scale
            self.k = np.exp(self.log_k)

    @property
    def separable(self) -> bool:
        return self.cost is None

    # linear domain -----------------------------------------------------
    def _apply_axes(self, v, mats):
        batch = v.shape[:-1]
        x = v.reshape(batch + self.shape)
        nb = len(batch)
        for a, mat in enumerate(mats):
            x = np.moveaxis(np.moveaxis(x, nb + a, -1) @ mat.T, -1, nb + a)
        return x.reshape(batch + (-1,))

    def apply(self, v):
        if self.cost is not None:
            return v @ self.k.T
        return self._apply_axes(v, self.axis_k)

    def apply_cost(self, v):
        """``(K o D) v`` in physical cost units."""
        if self.cost is not None:
            return v @ (self.k * self.cost).T
        out = 0.0
        for a in range(len(self.shape)):
            mats = list(self.axis_k)
            mats[a] = self.axis_k[a] * self.axis_cost[a]
            out = out + self._apply_axes(v, mats)
        return out

    # log domain --------------------------------------------------------
    def _exact_lse_axes(self, logv, lmats):
        batch = logv.shape[:-1]
        x = logv.reshape(batch + self.shape)
        nb = len(batch)
        for a, lmat in enumerate(lmats):
            y = np.moveaxis(x, nb + a, -1)
            y = logsumexp(y[..., None, :] + lmat, axis=-1)
            x = np.moveaxis(y, -1, nb + a)
        return x.reshape(batch + (-1,))

    def _stable_lse_axes(self, logv, lmats):
        batch = logv.shape[:-1]
        flat = logv.reshape((-1,) + self.shape)
        nb, nd = flat.shape[0], len(self.shape)
        x = flat
        offsets = []
        # separable envelope: x = sum_a off_a(k_a) + rest, rest <= 0
        for a in range(nd):
            other = tuple(1 + b for b in range(nd) if b != a)
            off = np.max(x, axis=other, keepdims=True) if other else x.copy()
            off = np.where(np.isfinite(off), off, 0.0)
            x = x - off
            offsets.append(off.reshape(nb, -1))
        rest = _flush(np.exp(x))
        total = 0.0
        for a, lmat in enumerate(lmats):
            # kh[b, y, k] = exp(lmat[y, k] + off[b, k] - gamma[b, y]), row max 1
            scaled = lmat[None, :, :] + offsets[a][:, None, :]
            gamma = np.max(scaled, axis=2)
            kh = _flush(np.exp(scaled - gamma[:, :, None]))
            if nd == 1:
                rest = np.matmul(kh, rest[:, :, None])[:, :, 0]
            elif nd == 2 and a == 0:
                rest = np.matmul(kh, rest)
            elif nd == 2:
                rest = np.matmul(rest, np.swapaxes(kh, 1, 2))
            else:
                moved = np.moveaxis(rest, 1 + a, -1)
                lead = moved.shape[1:-1]
                m2 = moved.reshape(nb, -1, moved.shape[-1]) @ np.swapaxes(kh, 1, 2)
                rest = np.moveaxis(m2.reshape((nb,) + lead + (-1,)), -1, 1 + a)
            if a < nd - 1:
                rest = _flush(rest)
            shape = [nb] + [1] * nd
            shape[1 + a] = -1
            total = total + gamma.reshape(shape)
        with np.errstate(divide="ignore"):
            out = total + np.log(rest)
        # flushed terms can only matter where the bounded remainder came out tiny
        axes = tuple(range(1, nd + 1))
        bad = np.any(rest < _SUSPECT, axis=axes) & np.any(np.isfinite(flat), axis=axes)
        if np.any(bad):
            out[bad] = self._exact_lse_axes(
                flat[bad].reshape(int(bad.sum()), -1), lmats
            ).reshape((-1,) + self.shape)
        return out.reshape(batch + (-1,))

    def log_apply(self, logv):
        if self.cost is not None:
            return logsumexp(logv[..., None, :] + self.log_k, axis=-1)
        return self._stable_lse_axes(logv, self.axis_log)

    def log_apply_cost(self, logv):
        """``log((K o D) exp(logv))`` in physical cost units."""
        with np.errstate(divide="ignore"):
            if self.cost is not None:
                return logsumexp(logv[..., None, :] + self.log_k + np.log(self.cost), axis=-1)
        terms = []
        for a in range(len(self.shape)):
            lmats = list(self.axis_log)
            lmats[a] = self.axis_log[a] + self.axis_log_cost[a]
            terms.append(self._stable_lse_axes(logv, lmats))
        return logsumexp(np.stack(terms), axis=0)

    def dense(self):
        if self.cost is not None:
            return self.k
        k = np.ones((1, 1))
        for mat in self.axis_k:
            k = np.kron(k, mat)
        return k

    def dense_log(self):
        if self.cost is not None:
            return self.log_k
        lk = np.zeros((1, 1))
        for lmat in self.axis_log:
            lk = (lk[:, None, :, None] + lmat[None, :, None, :]).reshape(
                lk.shape[0] * lmat.shape[0], -1
            )
        return lk

    def physical_cost(self):
        return self.cost if self.cost is not None else cost_matrix(self.spec)


# entries below _TINY are set to zero so no product is subnormal (slow on x86)
_TINY = 1e-150
_SUSPECT = 1e-140


def _flush(x):
    x[x < _TINY] = 0.0
    return x


def _safe_div(num, den):
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=num > 0)
    return out


def _check_pair(a: DiscreteMeasure, b: DiscreteMeasure):
    if a.spec != b.spec:
        raise ValueError("measures live on different grids")


def _scalings_linear(a, b, kernel, s):
    v = np.ones_like(b)
    viol = np.inf
    for it in range(1, s.max_iters + 1):
        kv = kernel.apply(v)
        if np.any((kv <= 0) & (a > 0)):
            return None
        u = _safe_div(a, kv)
        ku = kernel.apply(u)
        if np.any((ku <= 0) & (b > 0)) or not np.all(np.isfinite(u)):
            return None
        v = _safe_div(b, ku)
        if not np.all(np.isfinite(v)):
            return None
        if it % 5 == 0 or it == s.max_iters:
            viol = np.abs(u * kernel.apply(v) - a).max()
            if viol <= s.tol:
                return u, v, viol
    raise SinkhornConvergenceError(f"Sinkhorn did not converge in {s.max_iters} iterations", viol)


def _scalings_log(a, b, kernel, s):
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    lv = np.zeros_like(b)
    viol = np.inf
    for it in range(1, s.max_iters + 1):
        lu = la - kernel.log_apply(lv)
        lv = lb - kernel.log_apply(lu)
        if it % 5 == 0 or it == s.max_iters:
            viol = np.abs(np.exp(lu + kernel.log_apply(lv)) - a).max()
            if viol <= s.tol:
                return lu, lv, viol
    raise SinkhornConvergenceError(f"Sinkhorn did not converge in {s.max_iters} iterations", viol)


def _solve(a, b, kernel, s):
    """Return ``("lin" | "log", u, v, violation)``."""
    if not s.log_domain:
        out = _scalings_linear(a, b, kernel, s)
        if out is not None:
            return ("lin",) + out
        if not s.allow_log_fallback:
            raise SinkhornConvergenceError(
                "linear-domain scalings underflowed; enable log_domain", np.inf
            )
        logger.debug("switching Sinkhorn to the log domain")
    return ("log",) + _scalings_log(a, b, kernel, s)


def sinkhorn_plan(r_i: DiscreteMeasure, r_j: DiscreteMeasure, settings: SinkhornSettings,
                  cost=None) -> tuple[TransportPlan, float]:
    """Entropic plan between two grid measures and its transport cost ``<S, D>``.

    The plan is dense (``m x m``); use :func:`sinkhorn_divergence` when only
    the cost is needed on large grids.
    """
    _check_pair(r_i, r_j)
    kernel = GibbsKernel(r_i.spec, settings, cost)
    a, b = r_i.mass, r_j.mass
    mode, u, v, _ = _solve(a, b, kernel, settings)
    if mode == "lin":
        plan = u[:, None] * kernel.dense() * v[None, :]
    else:
        plan = np.exp(u[:, None] + kernel.dense_log() + v[None, :])
    d = kernel.physical_cost()
    return TransportPlan(plan, a.copy(), b.copy()), float(np.sum(plan * d))


def sinkhorn_divergence(r_i: DiscreteMeasure, r_j: DiscreteMeasure, settings: SinkhornSettings,
                        cost=None) -> float:
    """Transport cost ``<S, D>`` of the entropic plan, entropy excluded."""
    _check_pair(r_i, r_j)
    kernel = GibbsKernel(r_i.spec, settings, cost)
    mode, u, v, _ = _solve(r_i.mass, r_j.mass, kernel, settings)
    if mode == "lin":
        return float(u @ kernel.apply_cost(v))
    return float(np.exp(logsumexp(u + kernel.log_apply_cost(v))))


def exact_plan(r_i: DiscreteMeasure, r_j: DiscreteMeasure, cost=None) -> TransportPlan:
    """Optimal plan by linear programming (at most ``LP_SIZE_CAP`` points)."""
    _check_pair(r_i, r_j)
    m = r_i.spec.m
    if m > LP_SIZE_CAP:
        raise ValueError(f"exact LP limited to {LP_SIZE_CAP} support points, got {m}")
    d = cost_matrix(r_i.spec) if cost is None else np.asarray(cost, dtype=float)
    a, b = r_i.mass, r_j.mass
    rows = np.kron(np.eye(m), np.ones((1, m)))
    cols = np.kron(np.ones((1, m)), np.eye(m))
    res = linprog(
        d.ravel(),
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return TransportPlan(np.maximum(res.x.reshape(m, m), 0.0), a.copy(), b.copy())


def exact_w2_discrete(r_i: DiscreteMeasure, r_j: DiscreteMeasure, cost=None) -> float:
    """Exact squared 2-Wasserstein distance by linear programming."""
    d = cost_matrix(r_i.spec) if cost is None else np.asarray(cost, dtype=float)
    return exact_plan(r_i, r_j, d).cost(d)


def _canonical_order(masses, w):
    # permutation-independent processing order: by weight, then by mass bytes
    return sorted(range(len(w)), key=lambda i: (w[i], masses[i].tobytes()))


class _Monitor:
    """L1 change of successive barycenter iterates, with divergence detection.

    Bregman iterations often speed up for hundreds of sweeps before settling
    (mass has to travel across many cells, and the first sweeps barely move
    it), so a rising streak alone is not evidence of divergence.  The
    iterates are declared divergent when the change has risen for
    ``patience`` consecutive sweeps and exceeds ``blowup`` in L1, a quarter
    of the largest distance between two probability vectors.
    """

    patience = 10
    blowup = 0.5

    def __init__(self, tol):
        self.tol = tol
        self.prev = None
        self.prev_change = np.inf
        self.rising = 0

    def done(self, q) -> bool:
        if self.prev is None:
            self.prev = q
            return False
        change = np.abs(q - self.prev).sum()
        self.prev = q
        if change < self.tol:
            return True
        self.rising = self.rising + 1 if change > self.prev_change else 0
        self.prev_change = change
        if self.rising >= self.patience and change > self.blowup:
            raise BarycenterDivergenceError(_DIVERGENCE_HINT)
        return False


_LAM_HINT = "use a smaller lam, large values are known to break down for a fixed sample size"
_DIVERGENCE_HINT = f"barycenter iterates diverge; {_LAM_HINT}"


def _barycenter_linear(P, w, kernel, s, logV0=None):
    V = np.ones_like(P) if logV0 is None else np.exp(logV0)
    monitor = _Monitor(s.tol)
    active = w != 0
    for it in range(1, s.max_iters + 1):
        KV = kernel.apply(V)
        if np.any((KV <= 0) & (P > 0)):
            return None
        KU = kernel.apply(_safe_div(P, KV))
        if np.any(KU[active] <= 0):
            return None
        logq = w @ np.log(np.where(KU > 0, KU, 1.0))
        if logq.max() > 700:
            return None
        q = np.exp(logq)
        V = q[None, :] / np.where(KU > 0, KU, 1.0)
        if not np.all(np.isfinite(V)):
            return None
        if monitor.done(q):
            with np.errstate(divide="ignore"):
                return q, it, np.log(V)
    logger.warning("barycenter stopped at max_iters=%d", s.max_iters)
    with np.errstate(divide="ignore"):
        return q, s.max_iters, np.log(V)


def _barycenter_log(P, w, kernel, s, logV0=None):
    with np.errstate(divide="ignore"):
        logP = np.log(P)
    logV = np.zeros_like(P) if logV0 is None else logV0
    monitor = _Monitor(s.tol)
    for it in range(1, s.max_iters + 1):
        logKU = kernel.log_apply(logP - kernel.log_apply(logV))
        logq = w @ logKU
        if not logq.max() < 700:
            raise BarycenterDivergenceError(_DIVERGENCE_HINT)
        logV = logq[None, :] - logKU
        q = np.exp(logq)
        if monitor.done(q):
            return q, it, logV
    logger.warning("barycenter stopped at max_iters=%d", s.max_iters)
    return q, s.max_iters, logV


def weighted_sinkhorn_barycenter(measures, weights, settings: SinkhornSettings,
                                 cost=None, *, atol=1e-8) -> DiscreteMeasure:
    """Entropic barycenter with signed weights by iterative Bregman projections.

    Each measure keeps its own pair of scalings; after every sweep the
    barycenter is consolidated as the weighted geometric mean
    ``exp(sum_i w_i log(K^T u_i))`` with ``w_i = weights[i] / n``, so
    negative weights simply enter that log-domain sum with their sign.

    Parameters
    ----------
    measures : sequence of DiscreteMeasure
        Common grid.
    weights : array_like
        Signed weights with mean one; at least one must be positive.
    settings : SinkhornSettings
    cost : ndarray, optional
        Dense ``m x m`` cost replacing the separable squared Euclidean cost.

    Returns
    -------
    DiscreteMeasure

    Raises
    ------
    BarycenterDivergenceError
        If the L1 change of the iterates grows for 10 consecutive sweeps
        and exceeds 0.5, or the iterates stall away from unit mass.
    """
    return barycenter_with_state(measures, weights, settings, cost, atol=atol)[0]


def barycenter_with_state(measures, weights, settings, cost=None, *, init=None, atol=1e-8,
                          kernel=None):
    """Barycenter plus the final log-scalings (input order) for warm starts."""
    measures = list(measures)
    if not measures:
        raise ValueError("no measures given")
    spec = measures[0].spec
    if any(mu.spec != spec for mu in measures):
        raise ValueError("measures live on different grids")
    weights = np.asarray(weights, dtype=float)
    n = len(measures)
    if weights.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {weights.shape}")
    if abs(weights.mean() - 1.0) > atol:
        raise ValueError(f"weights must average to 1, got mean {weights.mean():.3g}")
    if not np.any(weights > 0):
        raise ValueError("at least one weight must be positive")

    w = weights / n
    masses = [mu.mass for mu in measures]
    order = _canonical_order(masses, w)
    P = np.stack([masses[i] for i in order])
    w = w[order]
    logV0 = None if init is None else np.asarray(init)[order]
    if kernel is None:
        kernel = GibbsKernel(spec, settings, cost)

    out = None
    if not settings.log_domain:
        out = _barycenter_linear(P, w, kernel, settings, logV0)
        if out is None:
            if not settings.allow_log_fallback:
                raise BarycenterDivergenceError("linear-domain scalings under/overflowed")
            logger.debug("switching barycenter to the log domain")
    if out is None:
        out = _barycenter_log(P, w, kernel, settings, logV0)
    q, iters, logV = out
    # a converged iterate is the common marginal of n unit-mass plans; a
    # kernel too narrow to move mass stalls with the iterates far from that
    if abs(q.sum() - 1.0) > MASS_STALL_TOL:
        raise BarycenterDivergenceError(
            f"barycenter iterates stalled with total mass {q.sum():.3g}; {_LAM_HINT}"
        )
    state = np.empty_like(logV)
    state[order] = logV
    logger.debug("barycenter converged in %d sweeps", iters)
    return DiscreteMeasure(spec, q / q.sum()), state
