"""Ground truth, synthetic data, L2 norms and the difference-based noise estimate."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError
from .fem import EIGEN, NODAL, Coefficient, Field, ForwardSolver, assemble_mass
from .mesh import Mesh


def default_truth(x, y):
    """Three Gaussian bumps, with the first and third terms identical as printed.

    Net effect: a double-weight bump at (0.5, 0) and an anisotropic bump at
    the origin.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (np.exp(-(5 * x - 2.5) ** 2 - (5 * y) ** 2)
            + np.exp(-(7.5 * x) ** 2 - (2.5 * y) ** 2)
            + np.exp(-(5 * x - 2.5) ** 2 - (5 * y) ** 2))


def caption_truth(x, y):
    """Bumps centred at (-0.5, 0), (0, 0) and (0, 0.5)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (np.exp(-(5 * x + 2.5) ** 2 - (5 * y) ** 2)
            + np.exp(-(7.5 * x) ** 2 - (2.5 * y) ** 2)
            + np.exp(-(5 * x) ** 2 - (5 * y - 2.5) ** 2))


TRUTHS = {"printed": default_truth, "caption": caption_truth}


def default_diffusivity(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (2.0 + 5.0 * np.exp(-(5 * x - 2) ** 2 - (5 * y - 2) ** 2)
            + 5.0 * np.exp(-(5 * x + 2) ** 2 - (5 * y + 2) ** 2))


@dataclass(frozen=True)
class ObservationSet:
    points: np.ndarray
    values: np.ndarray
    sigma: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.points.shape[0] != self.values.shape[0]:
            raise InvalidArgumentError("points and values differ in length")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            if self.sigma is not None:
                fh.write(f"# sigma={self.sigma!r}\n")
            if self.seed is not None:
                fh.write(f"# seed={self.seed}\n")
            w = csv.writer(fh)
            w.writerow(["x", "y", "Y"])
            for (x, y), v in zip(self.points, self.values):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])

    @classmethod
    def read_csv(cls, path) -> "ObservationSet":
        meta = {}
        rows = []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k.strip()] = v.strip()
                else:
                    rows.append(line)
        data = list(csv.reader(rows))[1:]
        arr = np.array([[float(v) for v in r] for r in data]).reshape(-1, 3)
        return cls(arr[:, :2], arr[:, 2],
                   float(meta["sigma"]) if "sigma" in meta else None,
                   int(meta["seed"]) if "seed" in meta else None)


def generate_observations(mesh: Mesh, c: Coefficient, f: Field, sigma: float, seed,
                          solver: ForwardSolver = None) -> ObservationSet:
    """``Y_i = G(f)(z_i) + sigma W_i`` at every mesh node ``z_i``."""
    if sigma < 0:
        raise InvalidArgumentError("sigma must be non-negative")
    solver = solver or ForwardSolver(mesh, c)
    u = solver.solve(f.to_nodal().coeffs)
    noise = np.random.default_rng(seed).standard_normal(u.size)
    return ObservationSet(mesh.nodes.copy(), u + sigma * noise, float(sigma), seed)


def l2_norm(field: Field) -> float:
    if field.basis == EIGEN:
        return float(np.linalg.norm(field.coeffs))
    v = field.coeffs
    return float(np.sqrt(max(v @ (assemble_mass(field.space) @ v), 0.0)))


def l2_error(f1: Field, f2: Field) -> float:
    if f1.basis != f2.basis or f1.space is not f2.space:
        raise InvalidArgumentError("fields must share basis and mesh/eigenbasis")
    return l2_norm(f1 - f2)


def projection_error(f0: Field, basis) -> float:
    """L2 distance from ``f0`` to the span of an M-orthonormal eigenbasis."""
    f = f0.to_nodal()
    if f.mesh is not basis.mesh:
        raise InvalidArgumentError("field and basis live on different meshes")
    M = assemble_mass(basis.mesh)
    coef = basis.vectors.T @ (M @ f.coeffs)
    r = f.coeffs - basis.vectors @ coef
    return float(np.sqrt(max(r @ (M @ r), 0.0)))


def rice_sigma_hat(Y) -> float:
    """Difference-based noise estimate sqrt(sum (Y_i - Y_{i-1})^2 / (2 (n - 1)))."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 1 or Y.size < 2:
        raise InvalidArgumentError("need at least two observations")
    d = np.diff(Y)
    return float(np.sqrt(d @ d / (2.0 * (Y.size - 1))))


def nearest_neighbor_order(points) -> np.ndarray:
    """Greedy nearest-neighbour path through ``points`` starting at index 0."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    tree = cKDTree(pts)
    visited = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    cur = 0
    for i in range(n):
        order[i] = cur
        visited[cur] = True
        if i == n - 1:
            break
        k = 8
        while True:
            _, idx = tree.query(pts[cur], k=min(k, n))
            free = [j for j in np.atleast_1d(idx) if not visited[j]]
            if free:
                cur = free[0]
                break
            if k >= n:
                cur = int(np.flatnonzero(~visited)[0])
                break
            k *= 4
    return order
