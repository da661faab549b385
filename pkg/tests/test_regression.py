import numpy as np
import pytest
from scipy import stats

from wassreg.frechet import KernelSpec
from wassreg.grid import DensityGrid, DiscreteMeasure, GridSpec, cost_matrix, discretize
from wassreg.ot1d import QuantileCurve, quantile_from_measure, w2_1d, w2_discrete_1d
from wassreg.regression import (
    DomainExitError,
    ExtrapolationError,
    PathPredictionError,
    fit,
    geodesic_check,
    mccann_interpolate,
    monotone_plan_1d,
    predict,
    predict_path,
)
from wassreg.simulation import SimConfig1D, generate_1d, true_1d
from wassreg.sinkhorn import SinkhornSettings, exact_plan

GRID = GridSpec.regular(0, 1, 101)


def _bump(center, sd=0.05, spec=GRID):
    return discretize(DensityGrid(spec, stats.norm(center, sd).pdf(spec.axes()[0])))


def _w2_grid(a, b):
    return np.sqrt(w2_discrete_1d(a.spec.axes()[0], a.mass, b.mass))


def test_identical_responses_give_that_response():
    mu = _bump(0.4, 0.08)
    X = np.linspace(0, 1, 6)
    m1 = fit(X, [mu] * 6)
    out = predict(m1, 1.3)
    assert w2_1d(out, quantile_from_measure(mu)) < 1e-20
    m2 = fit(X, [mu] * 6, solver="sinkhorn", settings=SinkhornSettings(lam=1))
    assert _w2_grid(predict(m2, 0.3), mu) < 0.01
    m3 = fit(X, [mu] * 6, mode="local", kernel=KernelSpec("gaussian", 0.3))
    assert w2_1d(predict(m3, 0.5), quantile_from_measure(mu)) < 1e-20


def test_identical_2d_responses():
    spec = GridSpec.regular(0, 1, 15, 2)
    mu = discretize(DensityGrid(spec, stats.multivariate_normal([0.4, 0.6], 0.02).pdf(spec.points())))
    model = fit(np.random.default_rng(1).uniform(size=(8, 2)), [mu] * 8, settings=SinkhornSettings(lam=4))
    assert model.solver == "sinkhorn"
    assert np.abs(predict(model, [0.2, 0.9]).mass - mu.mass).sum() < 0.05


def test_single_run_error_at_center_matches_study_level():
    # the global fit's variance grows like 1 + (x - 1/2)^2 / var(X), which
    # averages to twice its center value over [0, 1]; so the squared error
    # at x = 1/2 should sit near half the study's integrated error (n = 100)
    config = SimConfig1D(n=100)
    errs = []
    for run in range(40):
        X, curves, _ = generate_1d(config, run)
        errs.append(w2_1d(predict(fit(X, curves), 0.5), true_1d(0.5)))
    assert 0.5 <= np.mean(errs) / (0.000279 / 2) <= 2


def test_two_responses_follow_the_geodesic():
    a, b = _bump(0.25, 0.04), _bump(0.7, 0.08)
    exact = fit([0.0, 1.0], [a, b])
    entropic = fit([0.0, 1.0], [a, b], solver="sinkhorn", settings=SinkhornSettings(lam=4))
    for t in (0.25, 0.5, 0.8):
        geo = mccann_interpolate(a, b, t)
        assert np.sqrt(w2_1d(predict(exact, t), quantile_from_measure(geo))) <= 2 * GRID.steps[0]
        assert _w2_grid(predict(entropic, t), geo) <= 0.02


def test_exact_and_entropic_predictions_agree(rng):
    X = rng.uniform(size=8)
    ys = [_bump(0.3 + 0.3 * x + rng.normal(0, 0.03), rng.uniform(0.05, 0.1)) for x in X]
    exact = fit(X, ys)
    entropic = fit(X, ys, solver="sinkhorn", settings=SinkhornSettings(lam=1))
    for x in (0.1, 0.5, 0.9):
        q = predict(exact, x)
        assert np.sqrt(w2_1d(q, quantile_from_measure(predict(entropic, x)))) <= 0.05


def test_prediction_ignores_sample_order(rng):
    X = rng.uniform(size=7)
    ys = [_bump(0.3 + 0.4 * x, 0.06) for x in X]
    perm = rng.permutation(7)
    for solver in ("exact1d", "sinkhorn"):
        a = predict(fit(X, ys, solver=solver), 0.4)
        b = predict(fit(X[perm], [ys[i] for i in perm], solver=solver), 0.4)
        va = a.values if solver == "exact1d" else a.mass
        vb = b.values if solver == "exact1d" else b.mass
        np.testing.assert_allclose(va, vb, atol=1e-12)


def test_global_prediction_affine_equivariant(rng):
    X = rng.uniform(size=(9, 2))
    ys = [_bump(0.3 + 0.2 * x[0] + 0.1 * x[1], 0.06) for x in X]
    A = np.array([[3.0, 1.0], [0.0, -2.0]])
    b = np.array([1.0, 4.0])
    x = np.array([0.6, 0.2])
    p1 = predict(fit(X, ys), x)
    p2 = predict(fit(X @ A.T + b, ys), A @ x + b)
    np.testing.assert_allclose(p1.values, p2.values, atol=1e-10)


def test_local_mode_rejects_extrapolation():
    model = fit(np.linspace(0, 1, 10), [_bump(0.5)] * 10, mode="local")
    with pytest.raises(ExtrapolationError, match="not suited for extrapolation"):
        predict(model, 1.2)
    boxed = fit(np.linspace(0.1, 0.9, 10), [_bump(0.5)] * 10, mode="local", domain=[(0, 1)])
    predict(boxed, 0.0)
    with pytest.raises(ExtrapolationError):
        predict(boxed, -0.1)


def test_model_validation():
    mu = _bump(0.5)
    with pytest.raises(ValueError, match="responses"):
        fit([0.0, 1.0], [mu])
    with pytest.raises(ValueError):
        fit([0.0, 1.0], [mu, mu], mode="other")
    with pytest.raises(ValueError, match="shared grid"):
        fit([0.0, 1.0], [mu, _bump(0.5, spec=GridSpec.regular(0, 1, 51))], solver="sinkhorn")
    with pytest.raises(ValueError):
        fit([0.0, 1.0], [])


def test_predict_path_examples():
    X = np.linspace(0, 1, 5)
    model = fit(X, [_bump(0.3 + 0.3 * x) for x in X])
    a, b = predict_path(model, [0.4, 0.4])
    np.testing.assert_array_equal(a.values, b.values)
    assert predict_path(model, []) == []
    local = fit(X, [_bump(0.3 + 0.3 * x) for x in X], mode="local", kernel=KernelSpec("gaussian", 0.3))
    with pytest.raises(PathPredictionError) as info:
        predict_path(local, [0.2, 0.5, 1.4, 0.6])
    assert info.value.index == 2


def test_predict_path_warm_start_matches_cold(rng):
    spec = GridSpec.regular(0, 1, 41)
    X = rng.uniform(size=6)
    ys = [_bump(0.3 + 0.4 * x, 0.08, spec) for x in X]
    model = fit(X, ys, solver="sinkhorn", settings=SinkhornSettings(lam=1))
    warm = predict_path(model, np.linspace(0, 1, 5))
    cold = predict_path(model, np.linspace(0, 1, 5), warm_start=False)
    for w, c in zip(warm, cold):
        assert np.abs(w.mass - c.mass).sum() < 1e-4


def test_mccann_endpoints_exact_with_lp():
    spec = GridSpec.regular(0, 1, 6, 2)
    rng = np.random.default_rng(3)
    nu0 = DiscreteMeasure(spec, rng.random(spec.m))
    nu1 = DiscreteMeasure(spec, rng.random(spec.m))
    np.testing.assert_allclose(mccann_interpolate(nu0, nu1, 0.0).mass, nu0.mass, atol=1e-12)
    np.testing.assert_allclose(mccann_interpolate(nu0, nu1, 1.0).mass, nu1.mass, atol=1e-12)


def test_mccann_point_masses_meet_halfway():
    spec = GridSpec.regular(0, 1, 7, 2)
    a = DiscreteMeasure.point_mass(spec, (1, 1))
    b = DiscreteMeasure.point_mass(spec, (5, 3))
    mid = mccann_interpolate(a, b, 0.5)
    assert mid.mass[spec.ravel((3, 2))] == pytest.approx(1.0)


def test_mccann_gaussian_mean_at_midpoint():
    spec = GridSpec.regular(0, 10, 41, 2)
    g0 = stats.multivariate_normal([4, 4], np.eye(2))
    g1 = stats.multivariate_normal([6, 6], [[1.5, 0.3], [0.3, 0.8]])
    nu0 = discretize(DensityGrid(spec, g0.pdf(spec.points())))
    nu1 = discretize(DensityGrid(spec, g1.pdf(spec.points())))
    mid = mccann_interpolate(nu0, nu1, 0.5, SinkhornSettings(lam=2))
    assert np.all(np.abs(mid.mean() - [5, 5]) <= spec.steps)


def test_mccann_leaving_the_grid_raises():
    a, b = _bump(0.3, 0.03), _bump(0.6, 0.03)
    mccann_interpolate(a, b, 1.5)
    with pytest.raises(DomainExitError):
        mccann_interpolate(a, b, 2.5)
    spec = GridSpec.regular(0, 1, 8, 2)
    p = DiscreteMeasure.point_mass(spec, (0, 0))
    q = DiscreteMeasure.point_mass(spec, (7, 7))
    with pytest.raises(DomainExitError):
        mccann_interpolate(p, q, 1.5)


def test_mccann_exact_needs_small_grids():
    spec = GridSpec.regular(0, 1, 9, 2)
    mu = DiscreteMeasure.uniform(spec)
    with pytest.raises(ValueError, match="exact plans"):
        mccann_interpolate(mu, mu, 0.5)


def test_monotone_plan_matches_lp(rng):
    spec = GridSpec.regular(-1, 1, 15)
    a = DiscreteMeasure(spec, rng.random(15) * (rng.random(15) > 0.3) + 1e-3)
    b = DiscreteMeasure(spec, rng.random(15))
    d = cost_matrix(spec)
    plan = monotone_plan_1d(a, b)
    assert plan.marginal_violation() < 1e-12
    assert plan.cost(d) == pytest.approx(exact_plan(a, b).cost(d), abs=1e-10)


def test_geodesic_check_examples():
    base = np.linspace(0.1, 0.3, 51)
    ts = np.linspace(0, 1, 6)
    shifted = [QuantileCurve(base + 0.5 * t) for t in ts]
    assert geodesic_check(shifted, ts) < 1e-3
    with pytest.raises(ValueError, match="degenerate"):
        geodesic_check([QuantileCurve(base)] * 3, [0, 0.5, 1])
    with pytest.raises(ValueError):
        geodesic_check(shifted[:2], ts[:2])


def test_mccann_paths_have_constant_speed():
    ts = [0, 0.25, 0.5, 0.75, 1]
    a, b = _bump(0.2, 0.04), _bump(0.7, 0.1)
    assert geodesic_check([mccann_interpolate(a, b, t) for t in ts], ts) < 0.05
    spec = GridSpec.regular(0, 1, 8, 2)
    rng = np.random.default_rng(11)
    nu0 = DiscreteMeasure(spec, rng.random(spec.m) * (spec.points()[:, 0] < 0.4))
    nu1 = DiscreteMeasure(spec, rng.random(spec.m) * (spec.points()[:, 0] > 0.6))
    assert geodesic_check([mccann_interpolate(nu0, nu1, t) for t in ts], ts) < 0.05


def _shift_family(t):
    return _bump(0.35 + 0.2 * t, 0.05)


@pytest.mark.parametrize("solver", ["exact1d", "sinkhorn"])
def test_global_fit_recovers_geodesic(solver):
    ts = np.linspace(0, 1, 8)
    model = fit(ts, [_shift_family(t) for t in ts], solver=solver, settings=SinkhornSettings(lam=4))
    step = GRID.steps[0]
    for x in (-0.5, -0.2, 0.1, 0.5, 0.9, 1.2, 1.5):
        pred = predict(model, x)
        truth = _shift_family(x)
        if solver == "exact1d":
            err = np.sqrt(w2_1d(pred, quantile_from_measure(truth)))
        else:
            err = _w2_grid(pred, truth)
        assert err <= (2 if 0 <= x <= 1 else 4) * step
