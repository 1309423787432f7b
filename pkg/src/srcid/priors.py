"""Gaussian prior covariances: Laplacian-eigenbasis series and Matérn field."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.spatial.distance import pdist, squareform

from .bessel import log_kv
from .errors import InvalidArgumentError, NumericalFailureError

SERIES = "series-diagonal"
MATERN = "matern-dense"

JITTER = 1e-10


def matern_kernel(r, alpha: float, ell: float):
    """Matérn correlation with smoothness ``alpha`` and length scale ``ell``.

    ``2^(1-alpha)/Gamma(alpha) * z^alpha * K_alpha(z)`` with
    ``z = r sqrt(2 alpha) / ell``; equal to 1 at ``r = 0``.
    """
    if not (alpha > 0 and ell > 0):
        raise InvalidArgumentError("alpha and ell must be positive")
    ra = np.asarray(r, dtype=float)
    if np.any(ra < 0) or np.any(np.isnan(ra)):
        raise InvalidArgumentError("distance must be non-negative")
    out = np.ones(ra.shape)
    z = ra * math.sqrt(2.0 * alpha) / ell
    # 1 - k(z) ~ z^(2 alpha) is far below machine precision this close to 0
    pos = z > 1e-150
    if pos.any():
        log_pref = (1.0 - alpha) * math.log(2.0) - math.lgamma(alpha)
        zp = z[pos]
        with np.errstate(under="ignore", over="ignore", invalid="ignore"):
            vals = np.exp(log_pref + alpha * np.log(zp) + log_kv(alpha, zp))
        # only z ~ 0 can still overflow, and there the correlation is 1
        vals = np.where(np.isfinite(vals), vals, 1.0)
        out[pos] = np.minimum(vals, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class PriorCovariance:
    """Prior covariance of the coefficient vector.

    ``matrix`` is the diagonal (1-D) for series priors and the full dense
    correlation matrix (without jitter) for Matérn priors.
    """

    kind: str
    matrix: np.ndarray
    hyper: dict = field(default_factory=dict)
    basis: object = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return np.diag(self.matrix) if self.kind == SERIES else self.matrix

    @cached_property
    def factor(self) -> np.ndarray:
        """Lower factor L with L L^T = covariance (+ jitter for Matérn)."""
        if self.kind == SERIES:
            return np.diag(np.sqrt(self.matrix))
        A = self.matrix + JITTER * np.eye(self.dim)
        try:
            return np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            lo = scipy.linalg.eigvalsh(A, subset_by_index=(0, 0))[0]
            raise NumericalFailureError(
                f"prior covariance not positive definite (smallest eigenvalue {lo:.3e})") from exc

    def apply_factor(self, z: np.ndarray) -> np.ndarray:
        """L @ z for a vector or matrix ``z`` with leading dimension ``dim``."""
        if self.kind == SERIES:
            s = np.sqrt(self.matrix)
            return s[:, None] * z if z.ndim == 2 else s * z
        return self.factor @ z

    def right_factor(self, G: np.ndarray) -> np.ndarray:
        """G @ L for a matrix ``G`` with trailing dimension ``dim``."""
        if self.kind == SERIES:
            return G * np.sqrt(self.matrix)
        return G @ self.factor


def series_prior_covariance(basis, alpha: float) -> PriorCovariance:
    """Independent N(0, lambda_j^-alpha) coefficients on an eigenbasis."""
    if basis is None or basis.size == 0:
        raise InvalidArgumentError("empty eigenbasis")
    if alpha < 0:
        raise InvalidArgumentError("alpha must be non-negative")
    diag = np.asarray(basis.values, dtype=float) ** (-float(alpha))
    return PriorCovariance(SERIES, diag, {"alpha": float(alpha)}, basis)


def matern_covariance_matrix(nodes, alpha: float, ell: float, basis=None) -> PriorCovariance:
    """Matérn correlation matrix between the given points."""
    pts = np.atleast_2d(np.asarray(nodes, dtype=float))
    if pts.shape[0] > 1:
        d = pdist(pts)
        if np.any(d == 0):
            raise InvalidArgumentError("duplicate nodes make the covariance singular")
        C = squareform(matern_kernel(d, alpha, ell))
    else:
        C = np.zeros((1, 1))
    np.fill_diagonal(C, 1.0)
    return PriorCovariance(MATERN, C, {"alpha": float(alpha), "ell": float(ell)}, basis)


def sample_prior(cov: PriorCovariance, count: int, seed) -> np.ndarray:
    """``count`` draws from N(0, cov), shape (count, dim)."""
    if count < 1:
        raise InvalidArgumentError("count must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((cov.dim, count))
    return cov.apply_factor(z).T
