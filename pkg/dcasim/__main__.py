"""
Command line entry point: `python -m dcasim <subcommand> --config run.json`.
"""
import argparse
import logging
import sys
from typing import Callable

from dcasim.globals import *
from dcasim.config import Config
from dcasim.exceptions import BoundaryConditionError, ConfigError, ConvergenceError, MeshError
from dcasim.jobs import run_cluster_process, run_compare_fields_process, run_generate_rve_process, \
    run_homogenize_process, run_solve_macro_process, run_solve_micro_process, run_solve_multiscale_process

logger = logging.getLogger(__name__)

SUBCOMMANDS: dict[str, tuple[Callable[[Config], object], str]] = {
    "generate-rve": (run_generate_rve_process, "reconstruct porous RVEs from pore descriptors"),
    "cluster": (run_cluster_process, "k-means partition of the mesh nodes"),
    "solve-micro": (run_solve_micro_process, "drive one RVE along a deformation path"),
    "solve-macro": (run_solve_macro_process, "single-scale elastoplastic solve with IDCG or PCG Newton"),
    "homogenize": (run_homogenize_process, "homogenized stress, tangent and Hill-Mandel residual per increment"),
    "solve-multiscale": (run_solve_multiscale_process, "macro solve with RVE models at every element"),
    "compare-fields": (run_compare_fields_process, "reduced against full-field von Mises stress of an RVE"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcasim", description="Reduced-order multiscale elastoplastic FE toolkit")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="JSON run config")
        sub.add_argument("--out", default=None, help="output directory, overrides paths.out_dir")
        sub.add_argument("--seed", type=int, default=None, help="clustering and reconstruction seed")
        sub.add_argument("--k", type=int, default=None, help="cluster count for both scales")
        sub.add_argument("--threads", type=int, default=None, help="worker threads of the micro solves")
        sub.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv: list[str] | None = None) -> int:
    """Runs a subcommand and maps failures onto exit codes: 2 for config, mesh and boundary condition errors, 3 for
    convergence failures and 4 for I/O errors."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    job, _ = SUBCOMMANDS[args.command]
    try:
        config = Config.from_file(args.config).apply_overrides(seed=args.seed, k=args.k, threads=args.threads,
                                                               out=args.out)
        job(config)
    except (ConfigError, MeshError, BoundaryConditionError) as exc:
        logger.error(f"{args.command}: {exc}")
        return EXIT_CONFIG
    except ConvergenceError as exc:
        logger.error(f"{args.command}: {exc} {exc.diagnostics}")
        return EXIT_CONVERGENCE
    except OSError as exc:
        logger.error(f"{args.command}: {exc}")
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
