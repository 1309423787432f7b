"""
Conjugate Gaussian posteriors for  Y = G f + sigma W  with f ~ N(0, S).

Everything is computed in whitened coordinates. With S = L L^T and
B = G L, the posterior is

    cov  = L A^-1 L^T,   mean = sigma^-2 L A^-1 B^T Y,   A = I + sigma^-2 B^T B,

which equals the textbook ``(sigma^-2 G^T G + S^-1)^-1`` form but never forms
``S^-1``: A has spectrum in [1, inf) and is always safe to factorise, while
the Matérn correlation at high smoothness is numerically singular.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.stats import norm

from .errors import InvalidArgumentError, NumericalFailureError
from .fem import EIGEN, NODAL, Field, assemble_mass
from .mesh import Mesh
from .priors import PriorCovariance


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Posterior over basis coefficients.

    ``basis`` is an EigenBasis (Euclidean coefficient geometry) or a Mesh
    (nodal coefficients; L2 pairings go through the mass matrix).
    ``factor``, when present, satisfies ``factor @ factor.T == cov``.
    """

    mean: np.ndarray
    cov: np.ndarray
    basis: object
    sigma: float
    prior: Optional[PriorCovariance] = None
    factor: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal_sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def shrinks_prior(self, directions: int = 20, seed=0, atol: float = 1e-10) -> bool:
        """Loewner check cov <= prior cov along random directions."""
        if self.prior is None:
            raise InvalidArgumentError("posterior has no prior attached")
        rng = np.random.default_rng(seed)
        V = rng.standard_normal((self.dim, directions))
        V /= np.linalg.norm(V, axis=0)
        post = np.einsum("ij,ij->j", V, self.cov @ V)
        pri = np.einsum("ij,ij->j", V, self.prior.dense() @ V)
        return bool(np.all(post <= pri + atol))


class ConjugateSolver:
    """Factorised posterior for fixed (G, sigma, prior); reusable across data sets."""

    def __init__(self, G: np.ndarray, sigma: float, prior: PriorCovariance, basis=None):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        if G.shape[1] != prior.dim:
            raise InvalidArgumentError(f"G has {G.shape[1]} columns, prior has dimension {prior.dim}")
        if not sigma > 0:
            raise InvalidArgumentError("sigma must be positive")
        self.G = G
        self.sigma = float(sigma)
        self.prior = prior
        self.basis = basis if basis is not None else prior.basis
        B = prior.right_factor(G)
        A = np.eye(prior.dim) + (B.T @ B) / self.sigma ** 2
        try:
            self._chol = scipy.linalg.cho_factor(A, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError(f"posterior precision factorisation failed: {exc}") from exc
        self._B = B
        R = np.tril(self._chol[0])
        # cov = (L R^-T)(L R^-T)^T
        W = scipy.linalg.solve_triangular(R, np.eye(prior.dim), lower=True, trans="T")
        self.factor = prior.apply_factor(W)
        cov = self.factor @ self.factor.T
        self.cov = 0.5 * (cov + cov.T)

    @property
    def n(self) -> int:
        return self.G.shape[0]

    def means(self, Y: np.ndarray) -> np.ndarray:
        """Posterior means for data ``Y`` of shape (n,) or (n, R)."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != self.n:
            raise InvalidArgumentError(f"expected {self.n} observations, got {Y.shape[0]}")
        rhs = self._B.T @ Y / self.sigma ** 2
        return self.prior.apply_factor(scipy.linalg.cho_solve(self._chol, rhs))

    def update(self, Y: np.ndarray) -> GaussianPosterior:
        return GaussianPosterior(self.means(Y), self.cov, self.basis, self.sigma, self.prior, self.factor)


def conjugate_update(G: np.ndarray, Y: np.ndarray, sigma: float, prior: PriorCovariance,
                     basis=None) -> GaussianPosterior:
    """Posterior of the coefficients given ``Y = G f + sigma W``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 1:
        raise InvalidArgumentError("Y must be a vector")
    return ConjugateSolver(G, sigma, prior, basis).update(Y)


def posterior_mean_field(post: GaussianPosterior) -> Field:
    """Posterior mean synthesised as a nodal field."""
    basis = post.basis
    if isinstance(basis, Mesh):
        if post.dim != basis.node_count:
            raise InvalidArgumentError("mean length does not match the mesh")
        return Field(NODAL, post.mean, basis)
    if basis is None or getattr(basis, "size", None) != post.dim:
        raise InvalidArgumentError("posterior basis does not match the mean")
    return Field(EIGEN, post.mean, basis).to_nodal()


def sample_posterior(post: GaussianPosterior, count: int, seed) -> np.ndarray:
    """``count`` posterior draws of the coefficient vector, shape (count, dim)."""
    if count < 1:
        raise InvalidArgumentError("count must be positive")
    L = post.factor
    if L is None:
        try:
            L = np.linalg.cholesky(post.cov)
        except np.linalg.LinAlgError as exc:
            lo = np.linalg.eigvalsh(post.cov)[0]
            raise NumericalFailureError(
                f"posterior covariance not positive definite (smallest eigenvalue {lo:.3e})") from exc
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((post.dim, count))
    return (post.mean[:, None] + L @ z).T


def _pairing(post: GaussianPosterior, psi_coeffs) -> np.ndarray:
    psi = np.asarray(psi_coeffs, dtype=float)
    if psi.shape != (post.dim,):
        raise InvalidArgumentError(f"psi must have {post.dim} coefficients")
    if isinstance(post.basis, Mesh):
        return assemble_mass(post.basis) @ psi
    return psi


def functional_posterior(post: GaussianPosterior, psi_coeffs):
    """Posterior mean and variance of the linear functional <f, psi>."""
    w = _pairing(post, psi_coeffs)
    return float(w @ post.mean), float(w @ post.cov @ w)


def credible_interval(post: GaussianPosterior, psi_coeffs, a: float = 0.05,
                      mode: str = "analytic", draws: int = 10000, seed=0):
    """Symmetric (1 - a) credible interval for <f, psi> around the posterior mean.

    ``mode="empirical"`` replaces the Gaussian radius by the (1 - a)
    quantile of |<f, psi> - mean| over ``draws`` posterior samples.
    """
    if not 0 < a < 1:
        raise InvalidArgumentError("level must lie in (0, 1)")
    mean, var = functional_posterior(post, psi_coeffs)
    if mode == "analytic":
        radius = norm.ppf(1 - a / 2) * np.sqrt(max(var, 0.0))
    elif mode == "empirical":
        w = _pairing(post, psi_coeffs)
        vals = sample_posterior(post, draws, seed) @ w
        radius = float(np.quantile(np.abs(vals - mean), 1 - a))
    else:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    return mean - radius, mean + radius


def write_summary(post: GaussianPosterior, path) -> None:
    """CSV with columns index, mean, marginal_sd (1-based index)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "mean", "marginal_sd"])
        for j, (m, s) in enumerate(zip(post.mean, post.marginal_sd()), start=1):
            w.writerow([j, repr(float(m)), repr(float(s))])
