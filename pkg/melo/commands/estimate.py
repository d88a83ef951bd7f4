import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from melo.core.config import settings
from melo.core.datasets import dataset_for_problem, load_csv_dataset, schema_for
from melo.core.distributions import RandomStream
from melo.core.exceptions import ConfigError, NumericalError
from melo.core.harness import format_number, write_estimates_csv
from melo.core.problems import EstimationOptions, solve
from melo.models.schemas import VALID_METHODS, ProblemName

logger = logging.getLogger(__name__)

DEFAULT_DRAWS = {
    ProblemName.OPTIMAL_INPUT: settings.draws,
    ProblemName.ODDS_RATIO: settings.probit_iterations,
    ProblemName.PORTFOLIO: settings.portfolio_draws,
    ProblemName.STRUCTURAL: settings.structural_draws,
}


def parse_points(points: Optional[List[str]], width: int) -> Optional[np.ndarray]:
    if not points:
        return None
    rows = []
    for text in points:
        try:
            row = [float(v) for v in text.split(",")]
        except ValueError:
            raise ConfigError(f"--at expects comma-separated numbers, got '{text}'")
        if len(row) != width:
            raise ConfigError(f"--at needs {width} values (intercept first), got '{text}'")
        rows.append(row)
    return np.array(rows)


def run(args, threads: int) -> int:
    problem = ProblemName.parse(args.problem)
    if not args.data:
        raise ConfigError("estimate needs --data <csv>")
    covariates = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    schema = schema_for(problem, args.response, covariates)
    dataset = dataset_for_problem(problem, load_csv_dataset(Path(args.data), schema), schema)

    options = EstimationOptions(
        draws=args.draws or DEFAULT_DRAWS[problem],
        burn_in=args.burn_in if args.burn_in is not None else (
            settings.probit_burn_in if problem == ProblemName.ODDS_RATIO and not args.draws else None
        ),
        w_over_p=args.price_ratio,
        with_variance=True,
    )
    if problem == ProblemName.ODDS_RATIO:
        width = dataset.design.shape[1]
        options.evaluation_points = parse_points(args.at, width)
        if options.evaluation_points is None:
            options.evaluation_points = dataset.design.mean(axis=0)[None, :]

    stream = RandomStream(seed=args.seed if args.seed is not None else settings.seed)
    logger.info(f"Estimating {problem.value} on {dataset.n_obs} rows with {options.draws} draws")
    outcomes = solve(problem, dataset, VALID_METHODS[problem], options, stream)

    rows = []
    for method, outcome in outcomes.items():
        if outcome.error:
            print(f"{method.value:<16} failed: {outcome.error}")
            continue
        std_errors = outcome.std_errors if outcome.std_errors is not None else np.full(len(outcome.labels), np.nan)
        for k, label in enumerate(outcome.labels):
            row = {
                "method": method.value,
                "component": label,
                "estimate": format_number(float(outcome.value[k])),
                "std_error": format_number(float(std_errors[k])),
            }
            for key in ("implied_probability", "probability"):
                if key in outcome.extras:
                    row[key] = format_number(float(outcome.extras[key][k]))
            rows.append(row)
            extras = "".join(f"  {key}={row[key]}" for key in ("implied_probability", "probability") if key in row)
            print(f"{method.value:<16} {label:<24} {row['estimate']:>14} ({row['std_error']}){extras}")

    if args.out:
        path = write_estimates_csv(rows, Path(args.out) / "estimates.csv")
        print(f"Estimates written to {path}")
    if not rows:
        raise NumericalError("every estimator failed on this dataset")
    return 0
