import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srcid.errors import InvalidArgumentError
from srcid.fem import ForwardSolver, nodal_field
from srcid.mesh import build_ellipse_mesh
from srcid.spectral import laplacian_eigenpairs
from srcid.synth import (ObservationSet, caption_truth, default_diffusivity, default_truth, generate_observations,
                         l2_error, l2_norm, nearest_neighbor_order, projection_error, rice_sigma_hat)


def test_printed_truth_doubles_the_repeated_bump():
    x = np.linspace(-1, 1, 41)
    y = 0.3 * np.ones_like(x)
    bump = np.exp(-(5 * x - 2.5) ** 2 - (5 * y) ** 2)
    np.testing.assert_allclose(default_truth(x, y), 2 * bump + np.exp(-(7.5 * x) ** 2 - (2.5 * y) ** 2))


def test_printed_truth_peaks_near_half_on_x_axis():
    x = np.linspace(-1, 1, 2001)
    prof = default_truth(x, np.zeros_like(x))
    assert x[np.argmax(prof)] == pytest.approx(0.5, abs=0.02)


@pytest.mark.parametrize("centre", [(-0.5, 0.0), (0.0, 0.0), (0.0, 0.5)])
def test_caption_truth_peaks_near_centres(centre):
    # overlapping tails shift each peak slightly, so search a small window
    g = np.linspace(-0.15, 0.15, 61)
    X, Y = np.meshgrid(centre[0] + g, centre[1] + g)
    V = caption_truth(X, Y)
    i = np.unravel_index(np.argmax(V), V.shape)
    assert 0 < i[0] < g.size - 1 and 0 < i[1] < g.size - 1
    assert np.hypot(X[i] - centre[0], Y[i] - centre[1]) < 0.1


def test_diffusivity():
    assert default_diffusivity(0.4, 0.4) == pytest.approx(7.0, abs=1e-6)
    assert default_diffusivity(-0.4, -0.4) == pytest.approx(7.0, abs=1e-6)
    pts = np.random.default_rng(0).uniform(-1, 1, (1000, 2))
    assert np.all(default_diffusivity(pts[:, 0], pts[:, 1]) >= 2.0)


def test_l2_norm_of_constant(ellipse_mesh):
    one = nodal_field(ellipse_mesh, lambda x, y: np.ones_like(x))
    assert l2_norm(one) == pytest.approx(np.sqrt(ellipse_mesh.area), rel=1e-13)
    assert l2_error(one, one * 0.5) == pytest.approx(0.5 * np.sqrt(ellipse_mesh.area), rel=1e-13)


def test_l2_error_needs_common_space(ellipse_mesh, tiny_mesh):
    a = nodal_field(ellipse_mesh, lambda x, y: x)
    b = nodal_field(tiny_mesh, lambda x, y: x)
    with pytest.raises(InvalidArgumentError):
        l2_error(a, b)


def test_projection_error(ellipse_mesh):
    basis = laplacian_eigenpairs(ellipse_mesh, 150.0)
    assert projection_error(basis.function(2) * 3.0, basis) == pytest.approx(0.0, abs=1e-10)
    f = nodal_field(ellipse_mesh, caption_truth)
    e = projection_error(f, basis)
    # Pythagoras with the retained coefficients
    c = basis.coefficients(f)
    assert e ** 2 == pytest.approx(l2_norm(f) ** 2 - c @ c, rel=1e-8)


def test_generate_observations(ellipse_mesh):
    f = nodal_field(ellipse_mesh, caption_truth)
    s = ForwardSolver(ellipse_mesh, default_diffusivity)
    clean = generate_observations(ellipse_mesh, default_diffusivity, f, 0.0, seed=1, solver=s)
    np.testing.assert_allclose(clean.values, s.solve(f.coeffs))
    a = generate_observations(ellipse_mesh, default_diffusivity, f, 0.01, seed=1, solver=s)
    b = generate_observations(ellipse_mesh, default_diffusivity, f, 0.01, seed=1, solver=s)
    np.testing.assert_array_equal(a.values, b.values)
    noise = (a.values - clean.values) / 0.01
    assert abs(noise.std() - 1) < 0.1
    with pytest.raises(InvalidArgumentError):
        generate_observations(ellipse_mesh, default_diffusivity, f, -1.0, seed=1, solver=s)


def test_observation_csv_roundtrip(tmp_path):
    pts = np.random.default_rng(0).standard_normal((5, 2))
    obs = ObservationSet(pts, np.arange(5.0) / 3, sigma=0.0005, seed=7)
    obs.write_csv(tmp_path / "o.csv")
    back = ObservationSet.read_csv(tmp_path / "o.csv")
    np.testing.assert_array_equal(back.points, pts)
    np.testing.assert_array_equal(back.values, obs.values)
    assert (back.sigma, back.seed) == (0.0005, 7)


def test_rice_on_pure_noise():
    y = np.random.default_rng(3).standard_normal(200000) * 0.02
    assert rice_sigma_hat(y) == pytest.approx(0.02, rel=0.01)
    with pytest.raises(InvalidArgumentError):
        rice_sigma_hat([1.0])


@settings(max_examples=50)
@given(seed=st.integers(0, 2 ** 20), shift=st.floats(-1e3, 1e3), scale=st.floats(0.01, 100))
def test_rice_translation_invariant_and_scale_equivariant(seed, shift, scale):
    y = np.random.default_rng(seed).standard_normal(50)
    base = rice_sigma_hat(y)
    assert rice_sigma_hat(y + shift) == pytest.approx(base, rel=1e-9, abs=1e-12)
    assert rice_sigma_hat(scale * y) == pytest.approx(scale * base, rel=1e-12)


def test_nearest_neighbour_order_is_a_short_permutation():
    pts = np.random.default_rng(1).uniform(0, 1, (500, 2))
    order = nearest_neighbor_order(pts)
    np.testing.assert_array_equal(np.sort(order), np.arange(500))
    assert order[0] == 0
    path = np.linalg.norm(np.diff(pts[order], axis=0), axis=1).sum()
    random_path = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
    assert path < 0.3 * random_path
    assert nearest_neighbor_order(np.zeros((0, 2))).size == 0
