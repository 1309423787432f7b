import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srcid.errors import InvalidArgumentError
from srcid.fem import NODAL, assemble_mass
from srcid.posterior import (ConjugateSolver, GaussianPosterior, conjugate_update, credible_interval,
                             functional_posterior, posterior_mean_field, sample_posterior, write_summary)
from srcid.priors import PriorCovariance, SERIES, MATERN, matern_covariance_matrix, series_prior_covariance
from srcid.spectral import laplacian_eigenpairs


def _diag_prior(d):
    return PriorCovariance(SERIES, np.asarray(d, dtype=float))


def test_scalar_closed_form():
    g, s, sigma, y = 0.7, 2.0, 0.3, 1.1
    post = conjugate_update(np.array([[g]]), np.array([y]), sigma, _diag_prior([s]))
    var = 1.0 / (g * g / sigma ** 2 + 1.0 / s)
    assert post.cov[0, 0] == pytest.approx(var, abs=1e-12)
    assert post.mean[0] == pytest.approx(var * g * y / sigma ** 2, abs=1e-12)


def test_repeated_scalar_observations():
    # n identical unit-gain looks behave like one look with variance sigma^2 / n
    y = np.array([0.2, 0.5, -0.1, 0.4])
    post = conjugate_update(np.ones((4, 1)), y, 0.5, _diag_prior([1.0]))
    var = 1.0 / (4 / 0.25 + 1.0)
    assert post.cov[0, 0] == pytest.approx(var, abs=1e-12)
    assert post.mean[0] == pytest.approx(var * y.sum() / 0.25, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 6), J=st.integers(1, 5))
def test_matches_precision_form(seed, n, J):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, J))
    A = rng.standard_normal((J, J))
    S = A @ A.T + 0.5 * np.eye(J)
    prior = PriorCovariance(MATERN, S)
    sigma = rng.uniform(0.2, 2.0)
    Y = rng.standard_normal(n)
    post = conjugate_update(G, Y, sigma, prior)
    P = G.T @ G / sigma ** 2 + np.linalg.inv(S + 1e-10 * np.eye(J))
    cov = np.linalg.inv(P)
    np.testing.assert_allclose(post.cov, cov, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(post.mean, cov @ G.T @ Y / sigma ** 2, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(post.factor @ post.factor.T, post.cov, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_posterior_shrinks_prior(seed):
    rng = np.random.default_rng(seed)
    J = 6
    prior = _diag_prior(rng.uniform(0.1, 3.0, J))
    post = conjugate_update(rng.standard_normal((4, J)), rng.standard_normal(4), 0.3, prior)
    assert post.shrinks_prior(directions=30, seed=seed)


def test_uninformative_data_returns_prior():
    prior = _diag_prior([1.0, 0.5, 0.25])
    post = conjugate_update(np.zeros((2, 3)), np.array([3.0, -1.0]), 1.0, prior)
    np.testing.assert_allclose(post.mean, 0.0)
    np.testing.assert_allclose(post.cov, np.diag(prior.matrix))


def test_solver_batches_match_single_updates():
    rng = np.random.default_rng(5)
    G = rng.standard_normal((5, 3))
    s = ConjugateSolver(G, 0.4, _diag_prior([1.0, 2.0, 3.0]))
    Y = rng.standard_normal((5, 4))
    M = s.means(Y)
    for r in range(4):
        np.testing.assert_allclose(M[:, r], s.update(Y[:, r]).mean, atol=1e-14)


def test_argument_checks():
    prior = _diag_prior([1.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        ConjugateSolver(np.ones((3, 3)), 1.0, prior)
    with pytest.raises(InvalidArgumentError):
        ConjugateSolver(np.ones((3, 2)), 0.0, prior)
    with pytest.raises(InvalidArgumentError):
        ConjugateSolver(np.ones((3, 2)), 1.0, prior).means(np.ones(2))


def test_credible_interval_modes_agree():
    rng = np.random.default_rng(0)
    post = conjugate_update(rng.standard_normal((6, 3)), rng.standard_normal(6), 0.5,
                            _diag_prior([1.0, 0.5, 0.2]))
    psi = np.array([1.0, -1.0, 0.5])
    lo, hi = credible_interval(post, psi, 0.05)
    m, v = functional_posterior(post, psi)
    assert (lo + hi) / 2 == pytest.approx(m)
    assert (hi - lo) / 2 == pytest.approx(1.959964 * np.sqrt(v), rel=1e-6)
    elo, ehi = credible_interval(post, psi, 0.05, mode="empirical", draws=40000, seed=1)
    assert (ehi - elo) / (hi - lo) == pytest.approx(1.0, abs=0.03)
    with pytest.raises(InvalidArgumentError):
        credible_interval(post, psi, 1.5)
    with pytest.raises(InvalidArgumentError):
        credible_interval(post, psi, mode="bogus")


def test_sample_posterior_moments():
    rng = np.random.default_rng(1)
    post = conjugate_update(rng.standard_normal((3, 2)), rng.standard_normal(3), 0.7, _diag_prior([1.0, 2.0]))
    draws = sample_posterior(post, 50000, seed=2)
    np.testing.assert_allclose(draws.mean(axis=0), post.mean, atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), post.cov, atol=0.02)
    bare = GaussianPosterior(post.mean, post.cov, None, post.sigma)
    assert sample_posterior(bare, 3, seed=0).shape == (3, 2)


def test_nodal_basis_uses_mass_pairing(tiny_mesh):
    prior = matern_covariance_matrix(tiny_mesh.nodes, 1.5, 0.5, basis=tiny_mesh)
    N = tiny_mesh.node_count
    post = conjugate_update(np.eye(N)[:3], np.array([0.1, 0.2, 0.3]), 0.1, prior)
    psi = np.ones(N)
    m, _ = functional_posterior(post, psi)
    assert m == pytest.approx(psi @ assemble_mass(tiny_mesh) @ post.mean)
    f = posterior_mean_field(post)
    assert f.basis == NODAL and f.mesh is tiny_mesh


def test_eigen_posterior_mean_field(ellipse_mesh):
    basis = laplacian_eigenpairs(ellipse_mesh, 60.0)
    prior = series_prior_covariance(basis, 1.0)
    rng = np.random.default_rng(0)
    post = conjugate_update(rng.standard_normal((4, basis.size)), rng.standard_normal(4), 0.1, prior)
    f = posterior_mean_field(post)
    np.testing.assert_allclose(f.coeffs, basis.vectors @ post.mean)


def test_write_summary(tmp_path):
    post = conjugate_update(np.eye(2), np.array([1.0, 2.0]), 1.0, _diag_prior([1.0, 1.0]))
    write_summary(post, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "index,mean,marginal_sd"
    idx, mean, sd = lines[1].split(",")
    assert idx == "1"
    assert float(mean) == pytest.approx(0.5, abs=1e-15)
    assert float(sd) == pytest.approx(np.sqrt(0.5), abs=1e-15)
