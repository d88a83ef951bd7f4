import json
import logging
from pathlib import Path

from pydantic import ValidationError

from melo.core.config import settings
from melo.core.exceptions import ConfigError
from melo.core.harness import run_experiment, summaries_frame, write_results_json, write_summaries_csv
from melo.models.schemas import ExperimentSpec, ProblemName

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def load_spec(problem: ProblemName, config_path: Path = None, overrides: dict = None) -> ExperimentSpec:
    """Read an ExperimentSpec from JSON and apply command-line overrides."""
    path = Path(config_path) if config_path else CONFIG_DIR / f"{problem.value}.json"
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")

    configured = data.get("problem")
    if configured is not None and ProblemName.parse(str(configured)) != problem:
        raise ConfigError(f"{path} configures problem '{configured}', not '{problem.value}'")
    data["problem"] = problem.value
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})

    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(f"{location}: {first['msg']}")


def run(args, threads: int) -> int:
    problem = ProblemName.parse(args.problem)
    spec = load_spec(
        problem,
        args.config,
        {"seed": args.seed, "replications": args.reps, "draws": args.draws, "burn_in": args.burn_in},
    )
    result = run_experiment(spec, threads=threads)

    out_dir = Path(args.out or settings.output_dir)
    summaries = write_summaries_csv(result, out_dir / "summaries.csv")
    bundle = write_results_json(result, out_dir / "results.json")

    frame = summaries_frame(result)
    if not frame.empty:
        aggregate = frame[frame["metric"].isin(["mse", "mae", "mape"])]
        print(aggregate.to_string(index=False))
    print(f"Summaries written to {summaries}")
    print(f"Results written to {bundle}")
    return 0
