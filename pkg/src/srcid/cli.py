"""Command-line entry point: ``srcid <subcommand> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import experiments as ex
from .errors import ConfigError, InvalidArgumentError, NumericalFailureError, OutOfDomainError
from .fem import write_matrix_csv
from .mesh import write_mesh
from .spectral import save_basis

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _cmd_mesh(cfg):
    problem = ex.build_problem(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    write_mesh(problem.coarse, os.path.join(cfg.out, "coarse_mesh.txt"))
    write_mesh(problem.mesh, os.path.join(cfg.out, "mesh.txt"))
    print(f"coarse mesh: {problem.coarse.node_count} nodes; observation mesh: {problem.mesh.node_count} nodes")


def _cmd_eigs(cfg):
    problem = ex.build_problem(cfg)
    basis = problem.eigenbasis(cfg.prior.lambda_max)
    save_basis(basis, os.path.join(cfg.out, "eigenbasis"))
    print(f"{basis.size} eigenvalues in (0, {cfg.prior.lambda_max}]; largest {basis.values[-1]:.4f}")


def _cmd_forward(cfg):
    problem = ex.build_problem(cfg)
    _, G, _ = problem.discretisation(cfg.prior)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"forward_{cfg.prior.kind}.csv")
    write_matrix_csv(G, path)
    print(f"forward matrix {G.shape[0]}x{G.shape[1]} -> {path}")


def _table(rows, cols):
    for r in rows:
        print("  ".join(f"{c}={r[c]:.6g}" if isinstance(r[c], float) else f"{c}={r[c]}" for c in cols))


def _cmd_estimate(cfg):
    _table(ex.run_estimation_sweep(cfg), ["n", "sigma", "error", "rel_error"])


def _cmd_coverage(cfg):
    _table(ex.run_coverage(cfg), ["n", "sigma", "j", "coverage", "radius"])


def _cmd_clt(cfg):
    rows = ex.run_clt(cfg)
    print(f"{len(rows)} replicate estimates written to {os.path.join(cfg.out, 'clt.csv')}")


def _cmd_empbayes(cfg):
    if cfg.sigma_known:
        cfg = cfg.replace(sigma_known=False)
    _table(ex.run_empirical_bayes(cfg), ["n", "sigma_hat", "error", "rel_error"])


def _cmd_cross_section(cfg):
    rows = ex.run_cross_section(cfg)
    if not rows:
        print("cross-section line misses the domain", file=sys.stderr)
    else:
        print(f"{len(rows)} in-domain samples written to {os.path.join(cfg.out, 'cross_section.csv')}")


COMMANDS = {
    "mesh": _cmd_mesh,
    "eigs": _cmd_eigs,
    "forward": _cmd_forward,
    "estimate": _cmd_estimate,
    "coverage": _cmd_coverage,
    "clt": _cmd_clt,
    "empbayes": _cmd_empbayes,
    "cross-section": _cmd_cross_section,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srcid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.ExperimentConfig.from_file(args.config) if args.config else ex.ExperimentConfig()
        overrides = {k: v for k, v in (("seed", args.seed), ("out", args.out)) if v is not None}
        if overrides:
            cfg = cfg.replace(**overrides)
        COMMANDS[args.command](cfg)
    except (ConfigError, InvalidArgumentError, OutOfDomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
