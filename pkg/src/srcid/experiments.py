"""
Experiment runners behind the CLI.

Every runner takes an :class:`ExperimentConfig`, writes one CSV report into
``config.out`` and returns the rows it wrote. Reports start with comment
lines carrying the package version and a hash of the configuration, and are
byte-identical for identical configurations.

Random streams
--------------
All randomness derives from ``config.seed`` through ``numpy`` seed
sequences keyed by purpose, so results do not depend on execution order:

* ``[seed, 0]``: permutation of mesh nodes; the first ``n`` entries are the
  observation sites for sample size ``n`` (nested across ``n``).
* ``[seed, 1]``: the noise vector of the single synthetic data set used by
  the estimation and empirical-Bayes sweeps.
* ``[seed, 2, r]``: noise of replication ``r`` (coverage and CLT runs).
* ``[seed, 3]``: posterior draws for cross sections.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml
from scipy.stats import norm

from . import __version__
from .errors import ConfigError
from .fem import NODAL, Field, ForwardSolver, assemble_mass, nodal_basis_sources, nodal_field
from .mesh import Mesh, interpolation_matrix, mesh_for_node_count, refine
from .posterior import ConjugateSolver, sample_posterior
from .priors import matern_covariance_matrix, series_prior_covariance
from .spectral import EigenBasis, laplacian_eigenpairs, tail_share, variance_terms, weighted_eigenpairs_below
from .synth import TRUTHS, default_diffusivity, l2_error, l2_norm, nearest_neighbor_order, rice_sigma_hat

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "series"
    alpha: float = 0.75
    lambda_max: float = 500.0
    ell: float = 0.25


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs of one harness run. See ``README.md`` for the file format."""

    a: float = 1.0
    b: float = 0.75
    theta: float = math.pi / 6
    mesh_nodes: int = 1169
    refinements: int = 1
    prior: PriorSpec = field(default_factory=PriorSpec)
    sigma: float = 0.0005
    sigma_known: bool = True
    sigmas: Optional[tuple] = None
    sample_sizes: tuple = (50, 100, 250, 500, 750, 1000, 2000, 3000, 4500)
    replications: int = 500
    functionals: tuple = (2, 4, 8, 16)
    level: float = 0.05
    seed: int = 0
    out: str = "results"
    truth: str = "caption"
    rice_order: str = "storage"
    variance_factor: float = 4.0
    section_axis: str = "x"
    section_samples: int = 201
    section_draws: int = 2500

    def __post_init__(self):
        if isinstance(self.prior, dict):
            try:
                object.__setattr__(self, "prior", PriorSpec(**self.prior))
            except TypeError as exc:
                raise ConfigError(f"bad prior section: {exc}") from exc
        for name in ("sample_sizes", "functionals", "sigmas"):
            val = getattr(self, name)
            if val is not None and not isinstance(val, tuple):
                object.__setattr__(self, name, tuple(val))
        self.validate()

    def validate(self) -> None:
        def positive(name, value):
            if not (isinstance(value, (int, float)) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value!r}")

        for name in ("a", "b", "mesh_nodes", "replications", "variance_factor", "section_samples",
                     "section_draws"):
            positive(name, getattr(self, name))
        if not 0 <= self.theta < math.pi:
            raise ConfigError("theta must lie in [0, pi)")
        if self.refinements < 0:
            raise ConfigError("refinements must be non-negative")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be non-negative")
        for s in self.sigmas or ():
            positive("sigmas entry", s)
        if not self.sample_sizes or any(int(n) < 2 for n in self.sample_sizes):
            raise ConfigError("sample_sizes must be a non-empty list of integers >= 2")
        if any(int(j) < 1 for j in self.functionals):
            raise ConfigError("functionals are 1-based eigenfunction indices")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.prior.kind not in ("series", "matern"):
            raise ConfigError(f"unknown prior kind {self.prior.kind!r}")
        positive("prior.alpha", self.prior.alpha)
        positive("prior.lambda_max", self.prior.lambda_max)
        positive("prior.ell", self.prior.ell)
        if self.truth not in TRUTHS:
            raise ConfigError(f"truth must be one of {sorted(TRUTHS)}")
        if self.rice_order not in ("storage", "nn"):
            raise ConfigError("rice_order must be 'storage' or 'nn'")
        if self.section_axis not in ("x", "y"):
            raise ConfigError("section_axis must be 'x' or 'y'")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(data)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of every field that can change results (the output directory cannot)."""
        data = self.to_dict()
        data.pop("out")
        blob = json.dumps(data, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def sigma_grid(self) -> tuple:
        return self.sigmas if self.sigmas else (self.sigma,)


# ----------------------------------------------------------------------
# shared, read-only problem state

@dataclass(eq=False)
class Problem:
    """Meshes, operators and ground truth shared by all runs of a geometry."""

    coarse: Mesh
    mesh: Mesh
    solver: ForwardSolver
    truth: Field
    data: np.ndarray  # noiseless G(f0) at every node
    _cache: Dict[str, object] = field(default_factory=dict)

    @property
    def mass(self):
        return assemble_mass(self.mesh)

    @property
    def truth_norm(self) -> float:
        return l2_norm(self.truth)

    def eigenbasis(self, lambda_max: float) -> EigenBasis:
        key = f"eig:{lambda_max!r}"
        if key not in self._cache:
            self._cache[key] = laplacian_eigenpairs(self.mesh, lambda_max)
        return self._cache[key]

    def weighted_basis(self, eta_max: float) -> EigenBasis:
        key = f"weig:{eta_max!r}"
        if key not in self._cache:
            self._cache[key] = weighted_eigenpairs_below(self.mesh, self.solver.c, eta_max)
        return self._cache[key]

    def discretisation(self, spec: PriorSpec):
        """(nodal synthesis matrix, full forward matrix, prior) for a prior spec."""
        key = f"disc:{spec!r}"
        if key not in self._cache:
            if spec.kind == "series":
                basis = self.eigenbasis(spec.lambda_max)
                synth = basis.vectors
                prior = series_prior_covariance(basis, spec.alpha)
            else:
                synth = nodal_basis_sources(self.coarse, self.mesh).toarray()
                prior = matern_covariance_matrix(self.coarse.nodes, spec.alpha, spec.ell, basis=self.coarse)
            G = self.solver.solve(synth)
            self._cache[key] = (synth, G, prior)
        return self._cache[key]


@functools.lru_cache(maxsize=4)
def _problem(a, b, theta, mesh_nodes, refinements, truth) -> Problem:
    coarse = mesh_for_node_count(a, b, theta, mesh_nodes)
    mesh = coarse
    for _ in range(refinements):
        mesh = refine(mesh)
    solver = ForwardSolver(mesh, default_diffusivity)
    f0 = nodal_field(mesh, TRUTHS[truth])
    log.info("mesh: %d coarse nodes, %d observation nodes", coarse.node_count, mesh.node_count)
    return Problem(coarse, mesh, solver, f0, solver.solve(f0.coeffs))


def build_problem(config: ExperimentConfig) -> Problem:
    return _problem(config.a, config.b, config.theta, config.mesh_nodes, config.refinements, config.truth)


def observation_sites(config: ExperimentConfig, node_count: int, n: int) -> np.ndarray:
    """Sorted node indices observed at sample size ``n``; nested in ``n``."""
    if n > node_count:
        raise ConfigError(f"sample size {n} exceeds the {node_count} available nodes")
    perm = np.random.default_rng([config.seed, 0]).permutation(node_count)
    return np.sort(perm[:n])


def _sweep_noise(config: ExperimentConfig, node_count: int) -> np.ndarray:
    return np.random.default_rng([config.seed, 1]).standard_normal(node_count)


def _replicate_noise(config: ExperimentConfig, n: int, replications: int) -> np.ndarray:
    return np.column_stack([np.random.default_rng([config.seed, 2, r]).standard_normal(n)
                            for r in range(replications)])


def _estimate_error(problem: Problem, synth: np.ndarray, mean: np.ndarray) -> float:
    fbar = Field(NODAL, synth @ mean, problem.mesh)
    return l2_error(fbar, problem.truth)


# ----------------------------------------------------------------------
# reports

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_report(config: ExperimentConfig, name: str, columns: Sequence[str], rows: List[dict],
                 notes: Sequence[str] = ()) -> str:
    os.makedirs(config.out, exist_ok=True)
    path = os.path.join(config.out, name)
    with open(path, "w", newline="") as fh:
        fh.write(f"# srcid {__version__}\n")
        fh.write(f"# config_sha256={config.digest()}\n")
        for note in notes:
            fh.write(f"# {note}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def read_report(path) -> List[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# ----------------------------------------------------------------------
# runners

def run_estimation_sweep(config: ExperimentConfig) -> List[dict]:
    """L2 error of the posterior mean over the (n, sigma) grid."""
    problem = build_problem(config)
    synth, G, prior = problem.discretisation(config.prior)
    W = _sweep_noise(config, problem.mesh.node_count)
    f0_norm = problem.truth_norm
    rows = []
    for n in config.sample_sizes:
        idx = observation_sites(config, problem.mesh.node_count, int(n))
        for sigma in config.sigma_grid:
            Y = problem.data[idx] + sigma * W[idx]
            mean = ConjugateSolver(G[idx], max(sigma, SIGMA_FLOOR), prior).means(Y)
            err = _estimate_error(problem, synth, mean)
            rows.append(dict(n=int(n), sigma=float(sigma), error=err, rel_error=err / f0_norm,
                             seed=config.seed))
            log.info("n=%d sigma=%g error=%.4f (%.1f%%)", n, sigma, err, 100 * err / f0_norm)
    write_report(config, "estimation.csv", ["n", "sigma", "error", "rel_error", "seed"], rows,
                 [f"prior={config.prior.kind}", f"truth_norm={f0_norm!r}"])
    return rows


def _functional_indices(config: ExperimentConfig, basis: EigenBasis) -> List[int]:
    bad = [j for j in config.functionals if j > basis.size]
    if bad:
        raise ConfigError(f"functional indices {bad} exceed the {basis.size} computed eigenfunctions")
    return [int(j) for j in config.functionals]


def _series_only(config: ExperimentConfig, what: str) -> None:
    if config.prior.kind != "series":
        raise ConfigError(f"{what} runs on eigenfunction functionals and needs the series prior")


def run_coverage(config: ExperimentConfig) -> List[dict]:
    """Frequentist coverage of credible intervals for <f, phi_j>."""
    _series_only(config, "coverage")
    problem = build_problem(config)
    synth, G, prior = problem.discretisation(config.prior)
    basis = prior.basis
    js = _functional_indices(config, basis)
    truth = basis.coefficients(problem.truth)
    z = norm.ppf(1 - config.level / 2)
    R = config.replications
    rows = []
    for n in config.sample_sizes:
        idx = observation_sites(config, problem.mesh.node_count, int(n))
        noise = _replicate_noise(config, idx.size, R)
        for sigma in config.sigma_grid:
            solver = ConjugateSolver(G[idx], max(sigma, SIGMA_FLOOR), prior)
            means = solver.means(problem.data[idx][:, None] + sigma * noise)
            sd = np.sqrt(np.diag(solver.cov))
            for j in js:
                k = j - 1
                radius = z * sd[k]
                hit = np.abs(means[k] - truth[k]) <= radius
                rows.append(dict(n=int(n), sigma=float(sigma), j=j, coverage=float(hit.mean()),
                                 replications=R, radius=float(radius)))
    write_report(config, "coverage.csv", ["n", "sigma", "j", "coverage", "replications", "radius"], rows,
                 [f"level={config.level!r}"])
    return rows


def run_clt(config: ExperimentConfig) -> List[dict]:
    """Replicated plug-in estimates <fbar_n, phi_j> with their predicted spread."""
    _series_only(config, "clt")
    problem = build_problem(config)
    synth, G, prior = problem.discretisation(config.prior)
    basis = prior.basis
    js = _functional_indices(config, basis)
    truth = basis.coefficients(problem.truth)
    weighted = problem.weighted_basis(config.variance_factor * config.prior.lambda_max)
    n = int(config.sample_sizes[0])
    sigma = config.sigma_grid[0]
    idx = observation_sites(config, problem.mesh.node_count, n)
    R = config.replications
    # noiseless data still needs a positive likelihood scale
    solver = ConjugateSolver(G[idx], max(sigma, SIGMA_FLOOR), prior)
    means = solver.means(problem.data[idx][:, None] + sigma * _replicate_noise(config, n, R))
    rows, notes = [], [f"n={n}", f"sigma={sigma!r}"]
    for j in js:
        psi = basis.function(j - 1)
        terms = variance_terms(psi, weighted)
        pred = math.sqrt(terms.sum()) * sigma / math.sqrt(n)
        notes.append(f"j={j} tail_share={tail_share(psi, weighted)!r} eigenpairs={weighted.size}")
        for r in range(R):
            rows.append(dict(j=j, replicate=r, estimate=float(means[j - 1, r]), truth=float(truth[j - 1]),
                             predicted_std=pred))
    write_report(config, "clt.csv", ["j", "replicate", "estimate", "truth", "predicted_std"], rows, notes)
    return rows


def rice_estimate(config: ExperimentConfig, points: np.ndarray, Y: np.ndarray) -> float:
    if config.rice_order == "nn":
        return rice_sigma_hat(Y[nearest_neighbor_order(points)])
    return rice_sigma_hat(Y)


def run_empirical_bayes(config: ExperimentConfig) -> List[dict]:
    """Plug-in posterior mean with the difference-based noise estimate."""
    if config.sigma_known:
        raise ConfigError("empirical Bayes run requires sigma_known: false")
    problem = build_problem(config)
    synth, G, prior = problem.discretisation(config.prior)
    W = _sweep_noise(config, problem.mesh.node_count)
    f0_norm = problem.truth_norm
    rows = []
    for n in config.sample_sizes:
        idx = observation_sites(config, problem.mesh.node_count, int(n))
        Y = problem.data[idx] + config.sigma * W[idx]
        sigma_hat = rice_estimate(config, problem.mesh.nodes[idx], Y)
        mean = ConjugateSolver(G[idx], sigma_hat, prior).means(Y)
        err = _estimate_error(problem, synth, mean)
        rows.append(dict(n=int(n), sigma_hat=sigma_hat, error=err, rel_error=err / f0_norm))
    write_report(config, "empbayes.csv", ["n", "sigma_hat", "error", "rel_error"], rows,
                 [f"prior={config.prior.kind}", f"rice_order={config.rice_order}"])
    return rows


def section_line(mesh: Mesh, axis: str):
    ext = 1.05 * float(np.abs(mesh.nodes).max())
    if axis == "x":
        return np.array([-ext, 0.0]), np.array([ext, 0.0])
    return np.array([0.0, -ext]), np.array([0.0, ext])


def emit_cross_section(fields: Sequence[Field], names: Sequence[str], line, samples: int):
    """Values of nodal fields sampled along a segment; in-domain points only.

    Returns ``(columns, rows)``; rows is empty when the segment misses the
    domain.
    """
    p0, p1 = (np.asarray(p, dtype=float) for p in line)
    if not fields:
        return ["t", "x", "y"], []
    mesh = fields[0].mesh
    t = np.linspace(0.0, 1.0, int(samples))
    pts = p0 + t[:, None] * (p1 - p0)
    elem, _ = mesh.locate_many(pts)
    inside = elem >= 0
    columns = ["t", "x", "y", *names]
    if not inside.any():
        log.warning("cross-section line misses the domain")
        return columns, []
    P = interpolation_matrix(mesh, pts[inside])
    vals = np.column_stack([P @ f.to_nodal().coeffs for f in fields])
    rows = []
    for k, i in enumerate(np.flatnonzero(inside)):
        row = {"t": float(t[i]), "x": float(pts[i, 0]), "y": float(pts[i, 1])}
        row.update({name: float(vals[k, c]) for c, name in enumerate(names)})
        rows.append(row)
    return columns, rows


def run_cross_section(config: ExperimentConfig) -> List[dict]:
    """Truth, posterior mean and posterior draws along a coordinate axis at n = max(sample_sizes)."""
    problem = build_problem(config)
    synth, G, prior = problem.discretisation(config.prior)
    n = int(max(config.sample_sizes))
    sigma = config.sigma_grid[0]
    idx = observation_sites(config, problem.mesh.node_count, n)
    Y = problem.data[idx] + sigma * _sweep_noise(config, problem.mesh.node_count)[idx]
    post = ConjugateSolver(G[idx], max(sigma, SIGMA_FLOOR), prior).update(Y)
    draws = sample_posterior(post, config.section_draws, [config.seed, 3])
    mesh = problem.mesh
    fields = [problem.truth, Field(NODAL, synth @ post.mean, mesh)]
    fields += [Field(NODAL, synth @ d, mesh) for d in draws]
    width = len(str(config.section_draws))
    names = ["truth", "mean"] + [f"draw_{i + 1:0{width}d}" for i in range(config.section_draws)]
    columns, rows = emit_cross_section(fields, names, section_line(mesh, config.section_axis),
                                       config.section_samples)
    write_report(config, "cross_section.csv", columns, rows, [f"axis={config.section_axis}", f"n={n}"])
    return rows
