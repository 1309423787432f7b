"""
Triangular meshes on rotated elliptical domains.

The domain is the interior of the ellipse

    R(theta) @ (a cos t, b sin t),   t in [0, 2 pi),

with R(theta) the counter-clockwise rotation. Meshes are built from
arc-length spaced boundary samples plus a jittered hexagonal lattice of
interior points, triangulated by Delaunay. Because every boundary sample
lies on a strictly convex curve, the convex hull of the point cloud is the
boundary polygon and no constrained triangulation is needed.

Nodes are stored boundary-first (in increasing curve parameter), followed by
the interior lattice in row order. Downstream code that differences
observations "in storage order" relies on this layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay, cKDTree

from .errors import InvalidArgumentError, OutOfDomainError

BOUNDARY_TOL = 1e-8
_BARY_TOL = 1e-12


@dataclass(frozen=True)
class Ellipse:
    a: float
    b: float
    theta: float

    def point(self, t):
        """Boundary point(s) at curve parameter ``t``."""
        t = np.asarray(t, dtype=float)
        ct, st = np.cos(self.theta), np.sin(self.theta)
        x = self.a * np.cos(t)
        y = self.b * np.sin(t)
        return np.stack([ct * x - st * y, st * x + ct * y], axis=-1)

    def to_local(self, p):
        p = np.asarray(p, dtype=float)
        ct, st = np.cos(self.theta), np.sin(self.theta)
        return np.stack([ct * p[..., 0] + st * p[..., 1],
                         -st * p[..., 0] + ct * p[..., 1]], axis=-1)

    def parameter(self, p):
        """Curve parameter of the radial projection of ``p`` onto the ellipse."""
        q = self.to_local(p)
        return np.mod(np.arctan2(q[..., 1] / self.b, q[..., 0] / self.a), 2 * np.pi)

    def level(self, p):
        """sqrt((x/a)^2 + (y/b)^2) in local coordinates; 1 on the boundary."""
        q = self.to_local(p)
        return np.hypot(q[..., 0] / self.a, q[..., 1] / self.b)

    def boundary_distance(self, p, samples: int = 20000):
        """Approximate distance to the boundary curve (dense polyline sample)."""
        t = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
        tree = cKDTree(self.point(t))
        d, _ = tree.query(np.asarray(p, dtype=float))
        return d

    @property
    def area(self) -> float:
        return float(np.pi * self.a * self.b)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 triangulation.

    Attributes
    ----------
    nodes : (N, 2) float array
    elements : (E, 3) int array, counter-clockwise node triples
    boundary : (N,) bool array
    geometry : the :class:`Ellipse` the mesh discretises, if known
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray
    geometry: Optional[Ellipse] = None
    _tree: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        boundary = np.ascontiguousarray(self.boundary, dtype=bool)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise InvalidArgumentError("nodes must have shape (N, 2)")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise InvalidArgumentError("elements must have shape (E, 3)")
        if boundary.shape != (nodes.shape[0],):
            raise InvalidArgumentError("boundary mask length must equal node count")
        for arr in (nodes, elements, boundary):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "boundary", boundary)

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def element_count(self) -> int:
        return self.elements.shape[0]

    @property
    def interior(self) -> np.ndarray:
        """Indices of non-boundary nodes."""
        return np.flatnonzero(~self.boundary)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas().sum())

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges and the number of triangles sharing each."""
        e = self.elements
        all_edges = np.sort(np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(all_edges, axis=0, return_counts=True)
        return uniq, counts

    def h_max(self) -> float:
        edges, _ = self.edges()
        return float(np.linalg.norm(self.nodes[edges[:, 0]] - self.nodes[edges[:, 1]], axis=1).max())

    def check(self) -> None:
        """Raise InvalidArgumentError if a structural invariant is violated."""
        e = self.elements
        n = self.node_count
        if e.size and (e.min() < 0 or e.max() >= n):
            raise InvalidArgumentError("element index out of range")
        if np.any((e[:, 0] == e[:, 1]) | (e[:, 1] == e[:, 2]) | (e[:, 0] == e[:, 2])):
            raise InvalidArgumentError("element with repeated node")
        if np.any(self.signed_areas() <= 0):
            raise InvalidArgumentError("element with non-positive signed area")
        _, counts = self.edges()
        if np.any(counts > 2):
            raise InvalidArgumentError("edge shared by more than two triangles")
        if self.geometry is not None:
            off = np.abs(self.geometry.level(self.nodes[self.boundary]) - 1.0)
            # level is a scaled distance; convert with the smaller semi-axis
            if np.any(off * min(self.geometry.a, self.geometry.b) > BOUNDARY_TOL):
                raise InvalidArgumentError("boundary node off the ellipse")

    # ------------------------------------------------------------------
    # point location
    def _centroid_tree(self) -> cKDTree:
        if "tree" not in self._tree:
            self._tree["tree"] = cKDTree(self.centroids())
        return self._tree["tree"]

    def _barycentric(self, elem: np.ndarray, pts: np.ndarray) -> np.ndarray:
        p = self.nodes[self.elements[elem]]
        v0 = p[..., 1, :] - p[..., 0, :]
        v1 = p[..., 2, :] - p[..., 0, :]
        v2 = pts - p[..., 0, :]
        det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
        l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
        l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)

    def locate_many(self, points, k: int = 12, tol: float = _BARY_TOL):
        """Vectorised :func:`locate`.

        Returns element indices (``-1`` where not found) and barycentric
        coordinates (rows of NaN where not found).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m = pts.shape[0]
        elem = np.full(m, -1, dtype=np.int64)
        bary = np.full((m, 3), np.nan)
        k = min(k, self.element_count)
        _, cand = self._centroid_tree().query(pts, k=k)
        cand = cand.reshape(m, k)
        for col in range(k):
            todo = np.flatnonzero(elem < 0)
            if todo.size == 0:
                break
            c = cand[todo, col]
            lam = self._barycentric(c, pts[todo])
            ok = np.all(lam >= -tol, axis=1)
            elem[todo[ok]] = c[ok]
            bary[todo[ok]] = lam[ok]
        # brute force for the stragglers
        for i in np.flatnonzero(elem < 0):
            lam = self._barycentric(np.arange(self.element_count),
                                    np.broadcast_to(pts[i], (self.element_count, 2)))
            hit = np.flatnonzero(np.all(lam >= -tol, axis=1))
            if hit.size:
                elem[i] = hit[0]
                bary[i] = lam[hit[0]]
        found = elem >= 0
        b = np.clip(bary[found], 0.0, None)
        bary[found] = b / b.sum(axis=1, keepdims=True)
        return elem, bary


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _boundary_parameters(ell: Ellipse, h: float) -> np.ndarray:
    """Curve parameters giving (nearly) equal arc-length spacing ~h."""
    t = np.linspace(0.0, 2 * np.pi, 8193)
    speed = np.hypot(ell.a * np.sin(t), ell.b * np.cos(t))
    s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t))])
    nb = max(8, int(np.ceil(s[-1] / h)))
    targets = np.linspace(0.0, s[-1], nb, endpoint=False)
    return np.interp(targets, s, t)


def build_ellipse_mesh(a: float, b: float, theta: float, h_target: float,
                       jitter: float = 0.1, seed: int = 0) -> Mesh:
    """Triangulate the interior of a rotated ellipse.

    Parameters
    ----------
    a, b : semi-axis lengths along the local x and y axes
    theta : rotation angle in radians, ``0 <= theta < pi``
    h_target : target edge length
    jitter : interior lattice perturbation, as a fraction of ``h_target``
    seed : seed of the (fixed) jitter stream; meshes are deterministic
    """
    if not (a > 0 and b > 0 and h_target > 0):
        raise InvalidArgumentError("a, b and h_target must be positive")
    if not (0 <= theta < np.pi):
        raise InvalidArgumentError("theta must lie in [0, pi)")
    ell = Ellipse(float(a), float(b), float(theta))
    h = float(h_target)

    t_b = _boundary_parameters(ell, h)
    bnd = ell.point(t_b)

    # hexagonal lattice in local coordinates, centred at the origin
    dy = h * np.sqrt(3.0) / 2.0
    ny = int(np.ceil(b / dy)) + 1
    nx = int(np.ceil(a / h)) + 1
    pts = []
    for r in range(-ny, ny + 1):
        shift = 0.5 * h if r % 2 else 0.0
        xs = np.arange(-nx, nx + 1) * h + shift
        pts.append(np.column_stack([xs, np.full_like(xs, r * dy)]))
    loc = np.concatenate(pts)
    rng = np.random.default_rng(seed)
    loc = loc + jitter * h * rng.uniform(-1.0, 1.0, size=loc.shape)
    inner = loc @ _rotation(ell.theta).T
    inside = ell.level(inner) < 1.0
    inner = inner[inside]
    keep = ell.boundary_distance(inner) > 0.55 * h
    inner = inner[keep]

    nodes = np.concatenate([bnd, inner])
    boundary = np.zeros(nodes.shape[0], dtype=bool)
    boundary[: bnd.shape[0]] = True

    tri = Delaunay(nodes)
    elements = _orient(nodes, tri.simplices)
    mesh = Mesh(nodes, elements, boundary, ell)
    return mesh


def _orient(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = nodes[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    el = elements.copy()
    flip = area < 0
    el[flip] = el[flip][:, [0, 2, 1]]
    # qhull can emit zero-area slivers on nearly cocircular hull points
    return el[np.abs(area) > 1e-14 * np.abs(area).max()]


def mesh_for_node_count(a: float, b: float, theta: float, nodes: int, **kw) -> Mesh:
    """Mesh whose node count is as close as possible to ``nodes``.

    Bisects on ``h_target``; the lattice makes the count a step function of
    ``h`` so an exact match is not always attainable.
    """
    if nodes < 10:
        raise InvalidArgumentError("need at least 10 nodes")
    area = np.pi * a * b
    h_lo, h_hi = np.sqrt(area / nodes) * 0.5, np.sqrt(area / nodes) * 2.0
    best = None
    for _ in range(40):
        h = 0.5 * (h_lo + h_hi)
        mesh = build_ellipse_mesh(a, b, theta, h, **kw)
        if best is None or abs(mesh.node_count - nodes) < abs(best.node_count - nodes):
            best = mesh
        if mesh.node_count == nodes:
            break
        if mesh.node_count > nodes:
            h_lo = h
        else:
            h_hi = h
    return best


def refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four through its edge midpoints.

    Midpoints of boundary edges are moved onto the ellipse (when the mesh
    geometry is known) at the mean curve parameter of the edge endpoints.
    """
    e = mesh.elements
    n = mesh.node_count
    half = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
    key = np.sort(half, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    on_bnd = counts == 1
    if mesh.geometry is not None and on_bnd.any():
        ell = mesh.geometry
        t0 = ell.parameter(mesh.nodes[uniq[on_bnd, 0]])
        t1 = ell.parameter(mesh.nodes[uniq[on_bnd, 1]])
        dt = np.mod(t1 - t0 + np.pi, 2 * np.pi) - np.pi
        mids[on_bnd] = ell.point(t0 + 0.5 * dt)
    nodes = np.concatenate([mesh.nodes, mids])
    boundary = np.concatenate([mesh.boundary, on_bnd])

    ne = e.shape[0]
    m01 = n + inv[:ne]
    m12 = n + inv[ne:2 * ne]
    m20 = n + inv[2 * ne:]
    i, j, k = e[:, 0], e[:, 1], e[:, 2]
    new = np.concatenate([
        np.column_stack([i, m01, m20]),
        np.column_stack([j, m12, m01]),
        np.column_stack([k, m20, m12]),
        np.column_stack([m01, m12, m20]),
    ])
    return Mesh(nodes, new, boundary, mesh.geometry)


def locate(mesh: Mesh, p) -> Optional[Tuple[int, np.ndarray]]:
    """Containing element and barycentric coordinates of ``p``, or ``None``."""
    elem, bary = mesh.locate_many(np.asarray(p, dtype=float).reshape(1, 2))
    if elem[0] < 0:
        return None
    return int(elem[0]), bary[0]


def interpolate(mesh: Mesh, nodal_values, p) -> float:
    """Evaluate the P1 interpolant of ``nodal_values`` at ``p``."""
    v = np.asarray(nodal_values, dtype=float)
    if v.shape != (mesh.node_count,):
        raise InvalidArgumentError("nodal_values length must equal node count")
    hit = locate(mesh, p)
    if hit is None:
        raise OutOfDomainError(f"point {tuple(np.ravel(p))} is outside the mesh")
    k, lam = hit
    return float(lam @ v[mesh.elements[k]])


def interpolation_matrix(mesh: Mesh, points, extrapolate: bool = False) -> sparse.csr_matrix:
    """Sparse (len(points), N) matrix mapping nodal values to point values.

    With ``extrapolate=True`` points outside the triangulation (e.g. fine-mesh
    boundary nodes just outside a coarse inscribed polygon) use the nearest
    element with clipped barycentric coordinates instead of raising.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    elem, bary = mesh.locate_many(pts)
    missing = np.flatnonzero(elem < 0)
    if missing.size:
        if not extrapolate:
            raise OutOfDomainError(f"{missing.size} point(s) outside the mesh")
        _, near = mesh._centroid_tree().query(pts[missing], k=min(6, mesh.element_count))
        near = np.atleast_2d(near)
        for row, i in enumerate(missing):
            best, best_lam = None, None
            for c in near[row]:
                lam = mesh._barycentric(np.array([c]), pts[i][None])[0]
                if best is None or lam.min() > best_lam.min():
                    best, best_lam = c, lam
            lam = np.clip(best_lam, 0.0, None)
            elem[i] = best
            bary[i] = lam / lam.sum()
    rows = np.repeat(np.arange(pts.shape[0]), 3)
    cols = mesh.elements[elem].ravel()
    return sparse.csr_matrix((bary.ravel(), (rows, cols)), shape=(pts.shape[0], mesh.node_count))


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.node_count} elements {mesh.element_count}\n")
        for (x, y), flag in zip(mesh.nodes, mesh.boundary):
            fh.write(f"{x:.17g} {y:.17g} {int(flag)}\n")
        for i, j, k in mesh.elements:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path, geometry: Optional[Ellipse] = None) -> Mesh:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "nodes" or header[2] != "elements":
            raise InvalidArgumentError(f"bad mesh header in {path}")
        n, ne = int(header[1]), int(header[3])
        nodes = np.empty((n, 2))
        flags = np.empty(n, dtype=bool)
        for i in range(n):
            x, y, f = fh.readline().split()
            nodes[i] = float(x), float(y)
            flags[i] = f == "1"
        elements = np.array([[int(v) for v in fh.readline().split()] for _ in range(ne)],
                            dtype=np.int64).reshape(ne, 3)
    return Mesh(nodes, elements, flags, geometry)
