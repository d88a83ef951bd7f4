"""Monte-Carlo experiment orchestration and summary tables."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from melo.core.config import settings
from melo.core.distributions import RandomStream
from melo.core.exceptions import EmptySummary, InvalidParameter, MeloError
from melo.core.problems import (
    EstimationOptions,
    gen_odds_ratio,
    gen_optimal_input,
    gen_portfolio,
    gen_structural,
    portfolio_population,
    solve,
)
from melo.models.schemas import (
    ExperimentResult,
    ExperimentSpec,
    Method,
    ProblemName,
    ReplicationRecord,
    SummaryRow,
)

logger = logging.getLogger(__name__)

AGGREGATE_METRICS = ("mse", "mae", "mape")


@dataclass(frozen=True)
class ConfigCell:
    index: int
    label: str
    params: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ErrorMetrics:
    se: np.ndarray
    ae: np.ndarray
    ape: np.ndarray

    @property
    def mse(self) -> float:
        return float(np.mean(self.se))

    @property
    def mae(self) -> float:
        return float(np.mean(self.ae))

    @property
    def mape(self) -> float:
        return float(np.mean(self.ape))

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.se)))

    def as_dict(self, labels: Sequence[str]) -> Dict[str, float]:
        metrics = {"mse": self.mse, "mae": self.mae, "mape": self.mape}
        if len(labels) > 1:
            for k, label in enumerate(labels):
                metrics[f"se:{label}"] = float(self.se[k])
                metrics[f"ae:{label}"] = float(self.ae[k])
                metrics[f"ape:{label}"] = float(self.ape[k])
        return metrics


def error_metrics(estimate: np.ndarray, truth: np.ndarray) -> ErrorMetrics:
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if estimate.shape != truth.shape:
        raise InvalidParameter(f"estimate shape {estimate.shape} differs from truth {truth.shape}")
    with np.errstate(invalid="ignore", over="ignore"):
        diff = estimate - truth
        ae = np.abs(diff)
        ape = np.where(truth != 0, ae / np.abs(np.where(truth != 0, truth, 1.0)), np.nan)
        return ErrorMetrics(se=diff ** 2, ae=ae, ape=ape)


@dataclass(frozen=True)
class Summary:
    min: float
    q1: float
    median: float
    mean: float
    q3: float
    max: float
    n: int
    discards: int = 0

    @property
    def range(self) -> float:
        return self.max - self.min


def summarize(values: Sequence[float], discard_nonfinite: bool = True) -> Summary:
    """Seven-number summary with type-7 (linear) quartiles."""
    values = np.asarray(values, dtype=float)
    discards = 0
    if discard_nonfinite:
        keep = np.isfinite(values)
        discards = int((~keep).sum())
        values = values[keep]
    if values.size == 0:
        raise EmptySummary("no values left to summarize")
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75], method="linear")
    mean = math.fsum(values) / values.size if np.all(np.isfinite(values)) else float(np.mean(values))
    return Summary(
        min=float(values.min()),
        q1=float(q1),
        median=float(median),
        mean=float(mean),
        q3=float(q3),
        max=float(values.max()),
        n=int(values.size),
        discards=discards,
    )


def format_number(value: float, decimals: int = settings.output_decimals) -> str:
    if math.isnan(value):
        return "NA"
    if math.isinf(value):
        return "Inf" if value > 0 else "-Inf"
    if value != 0 and (abs(value) >= 1e6 or abs(value) < 1e-6):
        return f"{value:.{decimals}E}"
    return f"{value:.{decimals}f}"


# ---------------------------------------------------------------- grid and replications

def expand_grid(spec: ExperimentSpec) -> List[ConfigCell]:
    cells: List[Tuple[str, Dict[str, float]]] = []
    if spec.problem == ProblemName.PORTFOLIO:
        for L in spec.assets:
            for T in spec.sample_sizes:
                cells.append((f"L={L},T={T}", {"L": L, "T": T}))
    elif spec.problem == ProblemName.ODDS_RATIO:
        for N in spec.sample_sizes:
            cells.append((f"N={N}", {"N": N}))
    else:
        for level in spec.signal_noise_levels:
            for N in spec.sample_sizes:
                cells.append((f"N={N},sn={level:g}", {"N": N, "signal_noise": level}))
    return [ConfigCell(index=i, label=label, params=params) for i, (label, params) in enumerate(cells)]


def generate(spec: ExperimentSpec, cell: ConfigCell, rng: RandomStream):
    params = cell.params
    if spec.problem == ProblemName.OPTIMAL_INPUT:
        return gen_optimal_input(int(params["N"]), params["signal_noise"], rng, spec.input_price, spec.output_price)
    if spec.problem == ProblemName.ODDS_RATIO:
        return gen_odds_ratio(int(params["N"]), rng, spec.evaluation_points)
    if spec.problem == ProblemName.PORTFOLIO:
        L = int(params["L"])
        # (mu, Sigma) is a property of the cell; only the returns vary by replication
        population = portfolio_population(L, RandomStream.for_cell(spec.seed, cell.index))
        return gen_portfolio(L, int(params["T"]), rng, population)
    return gen_structural(int(params["N"]), params["signal_noise"], rng)


def _json_floats(values: np.ndarray) -> List[Optional[float]]:
    return [float(v) if np.isfinite(v) else None for v in values]


def run_replication(spec: ExperimentSpec, cell: ConfigCell, replication: int) -> List[ReplicationRecord]:
    stream = RandomStream.for_replication(spec.seed, replication, config=cell.index)
    options = EstimationOptions(
        draws=spec.draws,
        burn_in=spec.burn_in,
        w_over_p=spec.input_price / spec.output_price,
        evaluation_points=np.array(spec.evaluation_points) if spec.evaluation_points else None,
    )
    try:
        dataset, instance = generate(spec, cell, stream.spawn(0))
        outcomes = solve(spec.problem, dataset, spec.methods, options, stream.spawn(1))
    except MeloError as e:
        message = f"{type(e).__name__}: {e}"
        logger.error(f"Replication {replication} of {cell.label} failed: {message}")
        return [
            ReplicationRecord(config=cell.label, replication=replication, method=m, error=message)
            for m in spec.methods
        ]

    records = []
    for method in spec.methods:
        outcome = outcomes[method]
        record = ReplicationRecord(config=cell.label, replication=replication, method=method, error=outcome.error)
        if outcome.value is not None:
            record.estimate = _json_floats(outcome.value)
            record.finite = outcome.finite.tolist()
            if record.error is None and any(record.finite):
                metrics = error_metrics(outcome.value, instance.truth).as_dict(instance.labels)
                record.metrics = {name: v if math.isfinite(v) else None for name, v in metrics.items()}
        records.append(record)
    return records


def _summarize_cell(
    cell: ConfigCell, methods: Sequence[Method], records: List[ReplicationRecord], replications: int
) -> Tuple[List[SummaryRow], Dict[str, int]]:
    """Summaries over the replications usable for every active method of a cell.

    Usability is decided per metric: a replication enters the summary of a
    metric when that metric is finite for every active method, so one
    infinite component only drops the aggregate metrics and its own
    per-component rows. A method with no finite metric at all (an
    unsupported cell) is left out of the comparison.
    """
    by_method = {m: {r.replication: r for r in records if r.method == m} for m in methods}
    discards = {m.value: sum(1 for r in by_method[m].values() if not r.usable) for m in methods}

    def metric_value(method: Method, rep: int, metric: str) -> Optional[float]:
        record = by_method[method].get(rep)
        return None if record is None else record.metrics.get(metric)

    active = [
        m for m in methods
        if any(v is not None for r in by_method[m].values() for v in r.metrics.values())
    ]
    metric_names: List[str] = []
    for method in active:
        for record in by_method[method].values():
            metric_names.extend(name for name in record.metrics if name not in metric_names)

    rows = []
    for method in active:
        for metric in metric_names:
            kept = [
                rep for rep in range(replications)
                if all(metric_value(m, rep, metric) is not None for m in active)
            ]
            try:
                summary = summarize([metric_value(method, rep, metric) for rep in kept])
            except EmptySummary:
                logger.warning(f"No finite {metric} values for {method.value} at {cell.label}")
                continue
            rows.append(SummaryRow(
                method=method,
                config=cell.label,
                metric=metric,
                min=summary.min,
                q1=summary.q1,
                median=summary.median,
                mean=summary.mean,
                q3=summary.q3,
                max=summary.max,
                range=summary.range,
                n=summary.n,
                discards=replications - summary.n,
            ))
    return rows, discards


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Run every replication of every grid cell.

    Each replication draws from its own stream derived from (seed, cell,
    replication), and results are gathered in submission order, so the
    output does not depend on ``threads``.
    """
    cells = expand_grid(spec)
    tasks = [(cell, rep) for cell in cells for rep in range(spec.replications)]
    logger.info(
        f"Running {spec.problem.value}: {len(cells)} cells x {spec.replications} replications "
        f"on {threads} thread(s)"
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(lambda task: run_replication(spec, *task), tasks))
    else:
        batches = [run_replication(spec, cell, rep) for cell, rep in tasks]

    result = ExperimentResult(spec=spec)
    for cell in cells:
        records = [r for batch, (c, _) in zip(batches, tasks) if c.index == cell.index for r in batch]
        rows, discards = _summarize_cell(cell, spec.methods, records, spec.replications)
        result.records.extend(records)
        result.summaries.extend(rows)
        result.discard_counts[cell.label] = discards
        logger.info(f"Finished {cell.label}: discards {discards}")
    return result


# ---------------------------------------------------------------- writers

SUMMARY_COLUMNS = ["method", "config", "metric", "min", "q1", "median", "mean", "q3", "max", "range", "n", "discards"]


def summaries_frame(result: ExperimentResult, decimals: int = settings.output_decimals) -> pd.DataFrame:
    rows = []
    for row in result.summaries:
        data = row.model_dump()
        data["method"] = row.method.value
        for column in ("min", "q1", "median", "mean", "q3", "max", "range"):
            data[column] = format_number(data[column], decimals)
        rows.append(data)
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def write_summaries_csv(result: ExperimentResult, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summaries_frame(result).to_csv(path, index=False)
    return path


def write_results_json(result: ExperimentResult, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(result.model_dump_json(indent=2))
    return path


def write_estimates_csv(rows: List[Dict[str, object]], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False)
    return path
