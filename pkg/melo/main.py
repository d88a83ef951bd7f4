"""Command-line entry point: ``python -m melo.main <command>``."""

import argparse
import logging
import sys
from typing import List, Optional

from melo.commands import estimate, simulate, verify
from melo.core.config import settings
from melo.core.exceptions import ConfigError, MeloError

logger = logging.getLogger(__name__)

COMMANDS = {"simulate": simulate.run, "estimate": estimate.run, "verify": verify.run}
PROBLEMS = ["optimal-input", "odds-ratio", "portfolio", "structural"]


class MeloArgumentParser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = MeloArgumentParser(
        prog="melo",
        description="Minimum expected loss estimation: simulation studies, data estimates and self-checks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help=f"Master seed (default: config file, else {settings.seed})")
    common.add_argument("--draws", type=int, help="Posterior draws (total Gibbs iterations for probit)")
    common.add_argument("--burn-in", type=int, dest="burn_in", help="Discarded Gibbs iterations")
    common.add_argument("--out", type=str, help=f"Output directory (default: {settings.output_dir})")
    common.add_argument("--threads", type=int, default=settings.threads, help="Worker threads; MELO_THREADS overrides")
    common.add_argument("--log-level", type=str, default=settings.log_level, dest="log_level")

    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", parents=[common], help="Run a Monte-Carlo study from a JSON config")
    sim.add_argument("problem", choices=PROBLEMS)
    sim.add_argument("--config", type=str, help="ExperimentSpec JSON (default: configs/<problem>.json)")
    sim.add_argument("--reps", type=int, help="Replications per cell")

    est = commands.add_parser("estimate", parents=[common], help="Estimate on a CSV dataset")
    est.add_argument("problem", choices=PROBLEMS)
    est.add_argument("--data", type=str, help="CSV file with a header row")
    est.add_argument("--at", action="append", help="Covariate row for the odds ratio, intercept first, e.g. '1,45'")
    est.add_argument("--price-ratio", type=float, default=0.75, dest="price_ratio", help="Input/output price ratio w/p")
    est.add_argument("--response", type=str, help="Response column (quantity,price for structural)")
    est.add_argument("--covariates", type=str, help="Comma-separated covariate (or return) columns")

    commands.add_parser("verify", parents=[common], help="Run the derived-oracle self-checks")
    return parser.parse_args(argv)


def resolve_threads(requested: int) -> int:
    """MELO_THREADS, when set, wins over --threads."""
    threads = settings.threads if "threads" in settings.model_fields_set else requested
    if threads < 1:
        raise ConfigError(f"threads must be at least 1, got {threads}")
    return threads


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(
            level=getattr(logging, str(args.log_level).upper(), logging.INFO),
            filename=settings.log_file,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return COMMANDS[args.command](args, resolve_threads(args.threads))
    except MeloError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
