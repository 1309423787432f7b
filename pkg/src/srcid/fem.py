"""
P1 finite elements for  div(c grad u) = f  with zero Dirichlet data.

Sign convention: the PDE is read literally as ``div(c grad u) - f = 0``, so
the discrete system on interior nodes is ``K_c u = -M f`` and positive
sources produce negative solutions.

Boundary conditions are imposed by elimination: the reduced stiffness
``K_c[I, I]`` over interior nodes ``I`` is factorised once and reused for
every right-hand side.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import InvalidArgumentError, NumericalFailureError
from .mesh import Mesh, interpolation_matrix

Coefficient = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]

NODAL = "fem-nodal"
EIGEN = "laplacian-eigen"

SOLVE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class Field:
    """Coefficients of a function against a named basis.

    ``space`` is the :class:`Mesh` for nodal fields and an
    :class:`srcid.spectral.EigenBasis` for eigen-expansions.
    """

    basis: str
    coeffs: np.ndarray
    space: object

    def __post_init__(self):
        if self.basis not in (NODAL, EIGEN):
            raise InvalidArgumentError(f"unknown basis tag {self.basis!r}")
        c = np.asarray(self.coeffs, dtype=float)
        size = self.space.node_count if self.basis == NODAL else self.space.size
        if c.shape != (size,):
            raise InvalidArgumentError(f"expected {size} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def mesh(self) -> Mesh:
        return self.space if self.basis == NODAL else self.space.mesh

    def nodal(self) -> np.ndarray:
        """Nodal values on :attr:`mesh`."""
        if self.basis == NODAL:
            return self.coeffs
        return self.space.vectors @ self.coeffs

    def to_nodal(self) -> "Field":
        return self if self.basis == NODAL else Field(NODAL, self.nodal(), self.mesh)

    def __add__(self, other: "Field") -> "Field":
        if other.basis != self.basis or other.space is not self.space:
            raise InvalidArgumentError("fields live on different bases")
        return Field(self.basis, self.coeffs + other.coeffs, self.space)

    def __sub__(self, other: "Field") -> "Field":
        return self + Field(other.basis, -other.coeffs, other.space)

    def __mul__(self, s: float) -> "Field":
        return Field(self.basis, s * self.coeffs, self.space)

    __rmul__ = __mul__


def nodal_field(mesh: Mesh, fn: Callable) -> Field:
    """Sample ``fn(x, y)`` at the mesh nodes."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    return Field(NODAL, np.broadcast_to(fn(x, y), x.shape).astype(float), mesh)


def _eval_coefficient(c: Coefficient, pts: np.ndarray) -> np.ndarray:
    if callable(c):
        vals = np.broadcast_to(np.asarray(c(pts[:, 0], pts[:, 1]), dtype=float), (pts.shape[0],))
    else:
        vals = np.full(pts.shape[0], float(c))
    if not np.all(vals > 0):
        raise InvalidArgumentError("diffusion coefficient must be strictly positive")
    return vals


def _gradients(mesh: Mesh):
    """Barycentric gradients (E, 3, 2) and element areas (E,)."""
    p = mesh.nodes[mesh.elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # rows of inv(B)^T with B = [d1 d2]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return grads, 0.5 * det


def _scatter(mesh: Mesh, local: np.ndarray) -> sparse.csr_matrix:
    e = mesh.elements
    rows = np.repeat(e, 3, axis=1).ravel()
    cols = np.tile(e, (1, 3)).ravel()
    n = mesh.node_count
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def local_stiffness(mesh: Mesh, c: Coefficient = 1.0) -> np.ndarray:
    grads, area = _gradients(mesh)
    cval = _eval_coefficient(c, mesh.centroids())
    return np.einsum("e,eik,ejk->eij", cval * area, grads, grads)


def assemble_stiffness(mesh: Mesh, c: Coefficient = 1.0) -> sparse.csr_matrix:
    """Unconstrained stiffness matrix, centroid quadrature for ``c``."""
    return _scatter(mesh, local_stiffness(mesh, c))


_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def local_mass(mesh: Mesh) -> np.ndarray:
    return mesh.signed_areas()[:, None, None] * _MASS_REF


@functools.lru_cache(maxsize=16)
def assemble_mass(mesh: Mesh) -> sparse.csr_matrix:
    """Consistent P1 mass matrix (the discrete L2 inner product)."""
    return _scatter(mesh, local_mass(mesh))


class ForwardSolver:
    """Factorised Dirichlet problem for a fixed mesh and diffusivity.

    The factorisation is immutable after construction, so one instance can be
    shared by any number of callers.
    """

    def __init__(self, mesh: Mesh, c: Coefficient = 1.0):
        self.mesh = mesh
        self.c = c
        self.K = assemble_stiffness(mesh, c)
        self.M = assemble_mass(mesh)
        self.interior = mesh.interior
        I = self.interior
        self.K_ii = self.K[I][:, I].tocsc()
        self.M_i = self.M[I]
        try:
            self._lu = splu(self.K_ii)
        except RuntimeError as exc:
            raise NumericalFailureError(f"stiffness factorisation failed: {exc}") from exc

    def solve(self, sources: np.ndarray) -> np.ndarray:
        """Nodal solutions for nodal source values (N,) or (N, k)."""
        f = np.asarray(sources, dtype=float)
        vec = f.ndim == 1
        f2 = f[:, None] if vec else f
        if f2.shape[0] != self.mesh.node_count:
            raise InvalidArgumentError("source length must equal node count")
        rhs = -(self.M_i @ f2)
        u_i = self._lu.solve(np.asarray(rhs))
        res = np.linalg.norm(self.K_ii @ u_i - rhs, axis=0)
        scale = np.linalg.norm(rhs, axis=0)
        if np.any(res > SOLVE_RTOL * np.maximum(scale, np.finfo(float).tiny)):
            raise NumericalFailureError(f"linear solve residual {res.max():.3e} above tolerance")
        u = np.zeros_like(f2)
        u[self.interior] = u_i
        return u[:, 0] if vec else u


def solve_forward(mesh: Mesh, c: Coefficient, f: Field, solver: ForwardSolver = None) -> Field:
    """Nodal solution ``u = G(f)`` with ``u = 0`` on the boundary."""
    if f.mesh is not mesh:
        raise InvalidArgumentError("field does not live on this mesh")
    solver = solver or ForwardSolver(mesh, c)
    return Field(NODAL, solver.solve(f.nodal()), mesh)


def build_forward_matrix(mesh: Mesh, c: Coefficient, basis: Sequence[Field], obs_points,
                         solver: ForwardSolver = None) -> np.ndarray:
    """Matrix with entries ``G(basis[j])(obs_points[i])``.

    All columns are solved against a single factorisation.
    """
    solver = solver or ForwardSolver(mesh, c)
    P = interpolation_matrix(mesh, obs_points)
    if len(basis) == 0:
        return np.zeros((P.shape[0], 0))
    for b in basis:
        if b.mesh is not mesh:
            raise InvalidArgumentError("basis member does not live on this mesh")
    sources = np.column_stack([b.nodal() for b in basis])
    return np.asarray(P @ solver.solve(sources))


def nodal_basis_sources(coarse: Mesh, fine: Mesh) -> sparse.csr_matrix:
    """Values of the coarse hat functions at the fine-mesh nodes, (N_fine, M)."""
    return interpolation_matrix(coarse, fine.nodes, extrapolate=True)


# ----------------------------------------------------------------------
# persistence

def write_field(field: Field, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"field basis={field.basis} size={field.coeffs.size}\n")
        for v in field.coeffs:
            fh.write(f"{v:.17g}\n")


def read_field(path, space) -> Field:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 3 or head[0] != "field":
            raise InvalidArgumentError(f"bad field header in {path}")
        meta = dict(tok.split("=", 1) for tok in head[1:])
        size = int(meta["size"])
        vals = np.array([float(fh.readline()) for _ in range(size)])
    return Field(meta["basis"], vals, space)


def write_matrix_csv(G: np.ndarray, path) -> None:
    """Row-major CSV, one matrix row per line, 17 significant digits."""
    np.savetxt(path, np.atleast_2d(G), delimiter=",", fmt="%.17g")


def read_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
