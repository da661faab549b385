import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from matplotlib import image as mpimg
from scipy import stats

from wassreg.grid import (
    DegenerateDensityError,
    DensityGrid,
    DiscreteMeasure,
    GridSpec,
    cost_matrix,
    discretize,
    trapezoid_weights,
)
from wassreg.io import read_density, read_grid, read_measure, write_grid
from wassreg.render import render_heatmap


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec((0.0,), (1.0,), (1,))
    with pytest.raises(ValueError):
        GridSpec((1.0,), (0.0,), (3,))
    with pytest.raises(ValueError):
        GridSpec((0.0, 0.0), (1.0,), (3, 3))


def test_gridspec_derived_quantities():
    spec = GridSpec((0.0, -1.0), (1.0, 1.0), (3, 5))
    assert spec.m == 15
    np.testing.assert_allclose(spec.steps, [0.5, 0.5])
    assert spec.zeta == pytest.approx(np.sqrt(0.5))
    assert spec.cell_volume == pytest.approx(0.25)


def test_flat_index_is_row_major_and_bijective():
    spec = GridSpec((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (2, 3, 4))
    pts = spec.points()
    for k in range(spec.m):
        idx = spec.unravel(k)
        assert spec.ravel(idx) == k
        np.testing.assert_allclose(pts[k], [spec.axes()[a][idx[a]] for a in range(3)])
    # axis 0 slowest
    assert tuple(spec.unravel(1)) == (0, 0, 1)
    assert tuple(spec.unravel(12)) == (1, 0, 0)


def test_discretize_uniform_three_points():
    spec = GridSpec.regular(0, 1, 3)
    mu = discretize(DensityGrid(spec, np.ones(3)))
    np.testing.assert_allclose(mu.mass, [1 / 3] * 3)
    assert mu.mass.sum() == 1.0


def test_discretize_direct_normalization():
    spec = GridSpec.regular(-3, 7, 3)
    mu = discretize(DensityGrid(spec, [1.0, 2.0, 1.0]))
    np.testing.assert_allclose(mu.mass, [0.25, 0.5, 0.25])


def test_discretize_degenerate():
    with pytest.raises(DegenerateDensityError, match="degenerate density"):
        discretize(DensityGrid(GridSpec.regular(0, 1, 4), np.zeros(4)))


@given(st.lists(st.floats(0, 1e3), min_size=5, max_size=5), st.floats(1e-3, 1e3))
def test_discretize_scale_invariant(values, c):
    spec = GridSpec.regular(0, 1, 5)
    if sum(values) <= 0:
        return
    a = discretize(DensityGrid(spec, values)).mass
    b = discretize(DensityGrid(spec, np.array(values) * c)).mass
    np.testing.assert_allclose(a, b, atol=1e-12)


@given(st.lists(st.floats(0, 1), min_size=7, max_size=7))
def test_discretize_sums_exactly_to_one(values):
    if sum(values) <= 0:
        return
    mu = discretize(DensityGrid(GridSpec.regular(0, 1, 7), values))
    assert abs(mu.mass.sum() - 1.0) <= 1e-15


def _w2_to_truncnorm(mu: DiscreteMeasure, dist) -> float:
    # oracle: exact step quantile of the atoms against the continuous quantile
    t = (np.arange(200_000) + 0.5) / 200_000
    x = mu.spec.axes()[0]
    cdf = np.cumsum(mu.mass)
    q_disc = x[np.minimum(np.searchsorted(cdf, t), x.size - 1)]
    return float(np.mean((q_disc - dist.ppf(t)) ** 2))


def _truncnorm(mean=0.5, sd=0.1):
    return stats.truncnorm((0 - mean) / sd, (1 - mean) / sd, loc=mean, scale=sd)


def test_discretization_error_smaller_on_finer_grid():
    dist = _truncnorm()

    def err(count):
        spec = GridSpec.regular(0, 1, count)
        return _w2_to_truncnorm(discretize(DensityGrid(spec, dist.pdf(spec.axes()[0]))), dist)

    assert err(101) < err(51)


def test_discretization_error_decreases_as_grid_doubles():
    dist = _truncnorm(0.45, 0.12)
    errs = []
    for count in (11, 21, 41, 81, 161, 321):
        spec = GridSpec.regular(0, 1, count)
        errs.append(_w2_to_truncnorm(discretize(DensityGrid(spec, dist.pdf(spec.axes()[0]))), dist))
    for coarse, fine in zip(errs, errs[1:]):
        assert fine < coarse * 1.05


def test_cost_matrix_examples():
    np.testing.assert_array_equal(cost_matrix(GridSpec.regular(0, 1, 2)), [[0, 1], [1, 0]])
    assert cost_matrix(GridSpec.regular(0, 1, 2, 2)).max() == pytest.approx(2.0)
    d = cost_matrix(GridSpec.regular(0, 1, 3))
    assert d[0, 2] == pytest.approx(1.0)
    assert d[0, 1] == pytest.approx(0.25)


@settings(max_examples=30)
@given(st.integers(2, 5), st.integers(2, 5), st.floats(0.1, 10))
def test_cost_matrix_properties(c0, c1, width):
    spec = GridSpec((0.0, -width), (width, 0.0), (c0, c1))
    d = cost_matrix(spec)
    np.testing.assert_array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)
    assert np.all(d >= 0)
    r = np.sqrt(d)
    # triangle property through every intermediate node
    assert np.all(r[:, None, :] <= r[:, :, None] + r[None, :, :] + 1e-12)


def test_density_grid_invariants():
    spec = GridSpec.regular(0, 1, 11)
    with pytest.raises(ValueError):
        DensityGrid(spec, -np.ones(11))
    dens = DensityGrid.from_function(spec, lambda p: 3 * p[:, 0] ** 2)
    assert dens.integral() == pytest.approx(1.0, abs=1e-12)
    assert trapezoid_weights(spec).sum() == pytest.approx(1.0)


def test_discrete_measure_normalizes():
    spec = GridSpec.regular(0, 1, 4)
    mu = DiscreteMeasure(spec, [1, 1, 1, 1])
    np.testing.assert_allclose(mu.mass, 0.25)
    with pytest.raises(ValueError):
        DiscreteMeasure(spec, [1, 1, 1])


def test_grid_file_round_trip(tmp_path):
    spec = GridSpec((0.0, 70.0), (1.0, 210.0), (3, 4))
    mu = DiscreteMeasure(spec, np.arange(1.0, 13.0))
    path = write_grid(tmp_path / "m.csv", mu)
    lines = path.read_text().splitlines()
    assert lines[0] == "2,3,4,0.0,70.0,1.0,210.0"
    assert len(lines) == 13
    back = read_measure(path)
    assert back.spec == spec
    np.testing.assert_array_equal(back.mass, mu.mass)
    dens = read_density(path)
    np.testing.assert_array_equal(dens.values, mu.mass)


def test_grid_file_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,3,0.0,1.0\n0.5\n0.5\n")
    with pytest.raises(ValueError, match="expected 3 values"):
        read_grid(bad)
    bad.write_text("2,3,0.0\n")
    with pytest.raises(ValueError, match="header"):
        read_grid(bad)


def test_heatmap_point_mass_single_hot_pixel(tmp_path):
    spec = GridSpec.regular(0, 1, 5, 2)
    mu = DiscreteMeasure.point_mass(spec, (1, 3))
    png, csv_path = render_heatmap(mu, tmp_path / "p.png", pixels_per_node=1)
    img = mpimg.imread(png)[..., :3]
    distinct = {tuple(px) for px in img.reshape(-1, 3)}
    assert len(distinct) == 2
    # axis 0 -> column, axis 1 -> row from the bottom
    hot = img[5 - 1 - 3, 1]
    cold = img[0, 0]
    assert not np.allclose(hot, cold)
    assert np.sum(np.all(np.isclose(img, hot), axis=2)) == 1
    assert read_measure(csv_path).mass.argmax() == spec.ravel((1, 3))


def test_heatmap_uniform_is_constant(tmp_path):
    spec = GridSpec.regular(0, 1, 6, 2)
    png, _ = render_heatmap(DiscreteMeasure.uniform(spec), tmp_path / "u.png")
    img = mpimg.imread(png)
    assert np.all(img == img[0, 0])


def test_heatmap_gaussian_max_at_mean(tmp_path):
    spec = GridSpec.regular(0, 1, 21, 2)
    mean = np.array([0.31, 0.66])
    dens = DensityGrid.from_function(spec, lambda p: np.exp(-np.sum((p - mean) ** 2, axis=1) / 0.02))
    png, _ = render_heatmap(discretize(dens), tmp_path / "g.png", pixels_per_node=1)
    gray = mpimg.imread(png)[..., :3].sum(axis=2)
    # viridis brightens with value
    row, col = np.unravel_index(gray.argmax(), gray.shape)
    nearest = np.rint(mean / 0.05).astype(int)
    assert (col, 20 - row) == tuple(nearest)


def test_heatmap_needs_two_dimensions(tmp_path):
    with pytest.raises(ValueError, match="2-D"):
        render_heatmap(DiscreteMeasure.uniform(GridSpec.regular(0, 1, 4)), tmp_path / "x.png")
