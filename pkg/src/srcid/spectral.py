"""
Dirichlet eigenproblems  -div(c grad xi) = eta xi  on a P1 mesh.

With ``c = 1`` this is the Dirichlet Laplacian whose eigenfunctions carry the
series prior; with the model diffusivity it gives the singular system of the
forward map, from which the efficient asymptotic variance of a linear
functional is computed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, spsolve

from .errors import InvalidArgumentError, NumericalFailureError
from .fem import EIGEN, NODAL, Coefficient, Field, assemble_mass, assemble_stiffness, read_field, write_field
from .mesh import Mesh

LAPLACIAN = "laplacian"
WEIGHTED = "weighted-by-c"

DENSE_LIMIT = 3000
RESIDUAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """M-orthonormal Dirichlet eigenpairs.

    ``vectors`` holds nodal values (N, J), zero on boundary nodes.
    """

    values: np.ndarray
    vectors: np.ndarray
    weight: str
    mesh: Mesh

    @property
    def size(self) -> int:
        return self.values.size

    def function(self, j: int) -> Field:
        """The ``j``-th eigenfunction (0-based) as a nodal field."""
        return Field(NODAL, self.vectors[:, j], self.mesh)

    def unit(self, j: int) -> Field:
        e = np.zeros(self.size)
        e[j] = 1.0
        return Field(EIGEN, e, self)

    def coefficients(self, f: Field) -> np.ndarray:
        """L2 coefficients <f, phi_j> via the mass matrix."""
        if f.mesh is not self.mesh:
            raise InvalidArgumentError("field lives on a different mesh")
        if f.basis == EIGEN:
            return f.coeffs if f.space is self else self.vectors.T @ (assemble_mass(self.mesh) @ f.nodal())
        return self.vectors.T @ (assemble_mass(self.mesh) @ f.coeffs)

    def truncate(self, count: int) -> "EigenBasis":
        return EigenBasis(self.values[:count], self.vectors[:, :count], self.weight, self.mesh)


def _normalise(vecs: np.ndarray, M) -> np.ndarray:
    # M-orthonormalise (handles clustered eigenvalues) then fix signs
    gram = vecs.T @ (M @ vecs)
    L = np.linalg.cholesky(0.5 * (gram + gram.T))
    vecs = scipy.linalg.solve_triangular(L, vecs.T, lower=True).T
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _reduced(mesh: Mesh, c: Coefficient):
    I = mesh.interior
    K = assemble_stiffness(mesh, c)[I][:, I].tocsc()
    M = assemble_mass(mesh)[I][:, I].tocsc()
    return I, K, M


def _solve(mesh: Mesh, c: Coefficient, *, count: int = None, upper: float = None):
    I, K, M = _reduced(mesh, c)
    n = I.size
    if n == 0:
        raise InvalidArgumentError("mesh has no interior nodes")
    if n <= DENSE_LIMIT:
        Kd, Md = K.toarray(), M.toarray()
        if upper is not None:
            vals, vecs = scipy.linalg.eigh(Kd, Md, subset_by_value=(0.0, upper))
        else:
            vals, vecs = scipy.linalg.eigh(Kd, Md, subset_by_index=(0, count - 1))
    else:
        if upper is not None:
            area = float(mesh.area)
            k = int(1.2 * area * upper / (4 * np.pi)) + 10
        else:
            k = count
        while True:
            k = min(k, n - 2)
            try:
                vals, vecs = eigsh(K, k=k, M=M, sigma=0.0, which="LM", tol=0)
            except ArpackNoConvergence as exc:
                raise NumericalFailureError(
                    f"eigensolver did not converge: {len(exc.eigenvalues)} of {k} pairs") from exc
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
            if upper is None or vals[-1] > upper or k >= n - 2:
                break
            k = int(1.5 * k)
        if upper is not None:
            keep = (vals > 0) & (vals <= upper)
            vals, vecs = vals[keep], vecs[:, keep]
        else:
            vals, vecs = vals[:count], vecs[:, :count]
    if vals.size and vals[0] <= 0:
        raise NumericalFailureError(f"non-positive eigenvalue {vals[0]:.3e}")
    vecs = _normalise(vecs, M)
    res = np.linalg.norm(K @ vecs - (M @ vecs) * vals, axis=0)
    ref = vals * np.linalg.norm(M @ vecs, axis=0)
    if np.any(res > RESIDUAL_TOL * ref):
        worst = int(np.argmax(res / ref))
        raise NumericalFailureError(
            f"eigenpair {worst} residual {res[worst]:.3e} exceeds {RESIDUAL_TOL} * {ref[worst]:.3e}")
    full = np.zeros((mesh.node_count, vals.size))
    full[I] = vecs
    return vals, full


def laplacian_eigenpairs(mesh: Mesh, lambda_max: float) -> EigenBasis:
    """All Dirichlet-Laplacian eigenpairs with eigenvalue in ``(0, lambda_max]``."""
    if not lambda_max > 0:
        raise InvalidArgumentError("lambda_max must be positive")
    vals, vecs = _solve(mesh, 1.0, upper=float(lambda_max))
    return EigenBasis(vals, vecs, LAPLACIAN, mesh)


def weighted_eigenpairs(mesh: Mesh, c: Coefficient, count: int) -> EigenBasis:
    """The ``count`` smallest eigenpairs of ``-div(c grad .)``."""
    n_int = mesh.interior.size
    if not 1 <= count <= n_int:
        raise InvalidArgumentError(f"count must lie in [1, {n_int}]")
    vals, vecs = _solve(mesh, c, count=int(count))
    return EigenBasis(vals, vecs, WEIGHTED, mesh)


def weighted_eigenpairs_below(mesh: Mesh, c: Coefficient, eta_max: float) -> EigenBasis:
    """Weighted eigenpairs with eigenvalue in ``(0, eta_max]``."""
    vals, vecs = _solve(mesh, c, upper=float(eta_max))
    return EigenBasis(vals, vecs, WEIGHTED, mesh)


def variance_terms(psi: Field, basis: EigenBasis) -> np.ndarray:
    """Per-eigenpair contributions ``eta_k^2 <psi, xi_k>^2``."""
    if basis.size == 0:
        raise InvalidArgumentError("empty eigenbasis")
    if basis.weight != WEIGHTED:
        raise InvalidArgumentError("asymptotic variance needs the c-weighted eigenbasis")
    coef = basis.coefficients(psi.to_nodal())
    return basis.values ** 2 * coef ** 2


def asymptotic_variance(psi: Field, basis: EigenBasis) -> float:
    """Truncated spectral sum for the squared L2 norm of ``div(c grad psi)``."""
    return float(variance_terms(psi, basis).sum())


def tail_share(psi: Field, basis: EigenBasis) -> float:
    """Fraction of the variance carried by the last decile of eigenpairs."""
    terms = variance_terms(psi, basis)
    total = terms.sum()
    if total == 0:
        return 0.0
    start = basis.size - max(1, basis.size // 10)
    return float(terms[start:].sum() / total)


def operator_norm_squared(psi: Field, mesh: Mesh, c: Coefficient) -> float:
    """Direct discrete evaluation ``(K_c psi)^T M^-1 (K_c psi)`` on interior nodes.

    Equals the full (untruncated) spectral sum on the same mesh; used as an
    independent check of :func:`asymptotic_variance`.
    """
    I, K, M = _reduced(mesh, c)
    v = psi.to_nodal().coeffs[I]
    w = K @ v
    return float(w @ spsolve(M, w))


def save_basis(basis: EigenBasis, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "eigenvalues.csv"), "w") as fh:
        fh.write("index,value\n")
        for j, v in enumerate(basis.values, start=1):
            fh.write(f"{j},{v:.17g}\n")
    for j in range(basis.size):
        write_field(basis.function(j), os.path.join(directory, f"phi_{j + 1:04d}.field"))


def load_basis(directory, mesh: Mesh, weight: str = LAPLACIAN) -> EigenBasis:
    with open(os.path.join(directory, "eigenvalues.csv")) as fh:
        next(fh)
        vals = np.array([float(line.split(",")[1]) for line in fh if line.strip()])
    vecs = np.column_stack([
        read_field(os.path.join(directory, f"phi_{j + 1:04d}.field"), mesh).coeffs
        for j in range(vals.size)
    ]) if vals.size else np.zeros((mesh.node_count, 0))
    return EigenBasis(vals, vecs, weight, mesh)
