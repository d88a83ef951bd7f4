import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from melo.core.exceptions import EmptySummary
from melo.core.harness import (
    SUMMARY_COLUMNS,
    ConfigCell,
    _summarize_cell,
    error_metrics,
    expand_grid,
    format_number,
    run_experiment,
    summarize,
    write_results_json,
    write_summaries_csv,
)
from melo.models.schemas import ExperimentResult, ExperimentSpec, Method, ReplicationRecord, SummaryRow


def small_spec(**overrides):
    values = dict(
        problem="optimal_input",
        sample_sizes=[30],
        signal_noise_levels=[1.0],
        replications=3,
        draws=200,
        methods=["plugin", "melo_analytical", "melo_sampled"],
        seed=42,
    )
    values.update(overrides)
    return ExperimentSpec(**values)


def test_error_metrics_exact_estimate():
    metrics = error_metrics(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert metrics.mse == 0.0 and metrics.mae == 0.0 and metrics.mape == 0.0


def test_error_metrics_unit_error():
    metrics = error_metrics(np.array([2.0]), np.array([1.0]))
    assert metrics.mse == 1.0 and metrics.mae == 1.0


def test_error_metrics_percentage_of_negative_truth():
    assert error_metrics(np.array([-1.0]), np.array([-0.8])).mape == pytest.approx(0.25)


def test_error_metrics_flags_infinite_estimate():
    assert not error_metrics(np.array([np.inf]), np.array([1.0])).finite


def test_per_component_metrics_for_vector_targets():
    metrics = error_metrics(np.array([1.0, 3.0]), np.array([1.0, 2.0])).as_dict(["a", "b"])
    assert metrics["se:b"] == 1.0
    assert metrics["mse"] == 0.5


def test_summarize_one_to_five():
    summary = summarize([1, 2, 3, 4, 5])
    assert (summary.min, summary.q1, summary.median, summary.mean, summary.q3, summary.max) == (1, 2, 3, 3, 4, 5)
    assert summary.range == 4
    assert summary.n == 5


def test_summarize_discards_non_finite():
    summary = summarize([1.0, np.inf, 3.0, np.nan])
    assert summary.n == 2
    assert summary.discards == 2


def test_summarize_constant_values():
    summary = summarize([2.5] * 4)
    assert summary.min == summary.max == summary.median == 2.5
    assert summary.range == 0.0


def test_summarize_empty():
    with pytest.raises(EmptySummary):
        summarize([np.inf])


def test_format_number():
    assert format_number(1.5) == "1.5000"
    assert format_number(0.0) == "0.0000"
    assert format_number(3.7586e17) == "3.7586E+17"
    assert format_number(1e-7) == "1.0000E-07"
    assert format_number(float("nan")) == "NA"
    assert format_number(float("inf")) == "Inf"


def test_spec_rejects_unknown_method():
    with pytest.raises(ValidationError):
        small_spec(methods=["ils_2sls"])


def test_spec_rejects_unknown_field():
    with pytest.raises(ValidationError):
        small_spec(chains=2)


def test_spec_requires_assets_for_portfolio():
    with pytest.raises(ValidationError):
        small_spec(problem="portfolio", signal_noise_levels=None, methods=["plugin"])


def test_grid_labels():
    cells = expand_grid(small_spec(sample_sizes=[20, 40], signal_noise_levels=[1.0, 5.0]))
    assert [c.label for c in cells] == ["N=20,sn=1", "N=40,sn=1", "N=20,sn=5", "N=40,sn=5"]
    assert [c.index for c in cells] == [0, 1, 2, 3]


def test_noiseless_experiment_has_near_zero_errors():
    result = run_experiment(small_spec(signal_noise_levels=[1e12], replications=2))
    assert len(result.records) == 6
    for record in result.records:
        assert record.usable
        assert record.estimate[0] == pytest.approx(187.5, rel=1e-3)


def test_experiment_is_reproducible():
    first = run_experiment(small_spec())
    second = run_experiment(small_spec())
    assert first.model_dump_json() == second.model_dump_json()


def test_threads_do_not_change_results():
    serial = run_experiment(small_spec(), threads=1)
    parallel = run_experiment(small_spec(), threads=3)
    assert serial.model_dump_json() == parallel.model_dump_json()


def _record(method, rep, value, error=None):
    finite = [bool(np.isfinite(value))]
    return ReplicationRecord(
        config="N=10",
        replication=rep,
        method=method,
        estimate=[value if np.isfinite(value) else None],
        finite=finite,
        metrics={"mse": value ** 2 if np.isfinite(value) else None},
        error=error,
    )


def test_pairwise_fair_discards():
    records = [
        _record(Method.PLUGIN, 0, 1.0),
        _record(Method.PLUGIN, 1, np.inf),
        _record(Method.PLUGIN, 2, 2.0),
        _record(Method.MELO_SAMPLED, 0, 1.0),
        _record(Method.MELO_SAMPLED, 1, 5.0),
        _record(Method.MELO_SAMPLED, 2, 2.0),
    ]
    rows, discards = _summarize_cell(ConfigCell(0, "N=10"), [Method.PLUGIN, Method.MELO_SAMPLED], records, 3)
    assert discards == {"plugin": 1, "melo_sampled": 0}
    assert {row.method: row.n for row in rows} == {Method.PLUGIN: 2, Method.MELO_SAMPLED: 2}
    melo_row = next(row for row in rows if row.method == Method.MELO_SAMPLED)
    assert melo_row.max == 4.0


def test_unsupported_method_leaves_plugin_summary():
    spec = ExperimentSpec(
        problem="portfolio",
        sample_sizes=[7],
        assets=[5],
        replications=2,
        draws=200,
        methods=["plugin", "melo_sampled"],
    )
    result = run_experiment(spec)
    assert {row.method for row in result.summaries} == {Method.PLUGIN}
    assert result.discard_counts["L=5,T=7"]["melo_sampled"] == 2


def test_writers(tmp_path):
    result = run_experiment(small_spec(replications=2))
    csv_path = write_summaries_csv(result, tmp_path / "out" / "summaries.csv")
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == SUMMARY_COLUMNS
    assert set(frame["metric"]) == {"mse", "mae", "mape"}
    json_path = write_results_json(result, tmp_path / "out" / "results.json")
    payload = json.loads(json_path.read_text())
    assert payload["spec"]["problem"] == "optimal_input"
    assert len(payload["records"]) == 6


def _vector_record(method, rep, values):
    values = np.asarray(values, dtype=float)
    finite = [bool(v) for v in np.isfinite(values)]
    squared = {f"se:{label}": (v ** 2 if np.isfinite(v) else None) for label, v in zip("ab", values)}
    mse = float(np.mean(values ** 2)) if all(finite) else None
    return ReplicationRecord(
        config="N=10",
        replication=rep,
        method=method,
        estimate=[v if np.isfinite(v) else None for v in values],
        finite=finite,
        metrics={"mse": mse, **squared},
    )


def test_infinite_component_only_drops_its_own_metrics():
    records = [
        _vector_record(Method.PLUGIN, 0, [1.0, 2.0]),
        _vector_record(Method.PLUGIN, 1, [3.0, np.inf]),
        _vector_record(Method.MELO_SAMPLED, 0, [1.0, 1.0]),
        _vector_record(Method.MELO_SAMPLED, 1, [2.0, 1.0]),
    ]
    rows, discards = _summarize_cell(ConfigCell(0, "N=10"), [Method.PLUGIN, Method.MELO_SAMPLED], records, 2)
    n_by_metric = {(row.method, row.metric): row.n for row in rows}
    assert n_by_metric[(Method.PLUGIN, "se:a")] == 2
    assert n_by_metric[(Method.MELO_SAMPLED, "se:a")] == 2
    assert n_by_metric[(Method.PLUGIN, "se:b")] == 1
    assert n_by_metric[(Method.PLUGIN, "mse")] == 1
    plugin_a = next(row for row in rows if row.method == Method.PLUGIN and row.metric == "se:a")
    assert plugin_a.max == 9.0
    assert discards == {"plugin": 1, "melo_sampled": 0}


def test_format_number_negative_and_large():
    assert format_number(-0.25) == "-0.2500"
    assert format_number(-2.5e6) == "-2.5000E+06"
    assert format_number(999999.0) == "999999.0000"
    assert format_number(float("-inf")) == "-Inf"


def test_summaries_csv_keeps_formatted_text(tmp_path):
    row = dict(method=Method.PLUGIN, config="N=10", metric="mse", n=4, discards=1)
    result = ExperimentResult(
        spec=small_spec(),
        summaries=[
            SummaryRow(**row, min=0.123456, q1=0.5, median=1.0, mean=2.0, q3=3.0, max=4.0e7, range=4.0e7),
            SummaryRow(**row, min=-1.0, q1=0.0, median=0.0, mean=float("inf"), q3=1.0, max=float("inf"),
                       range=float("inf")),
        ],
    )
    path = write_summaries_csv(result, tmp_path / "summaries.csv")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    assert list(frame["min"]) == ["0.1235", "-1.0000"]
    assert frame.loc[0, "max"] == "4.0000E+07"
    assert frame.loc[1, "mean"] == "Inf"
    assert list(frame["n"]) == ["4", "4"]


def test_summary_rows_are_ordered():
    result = run_experiment(small_spec(replications=4, signal_noise_levels=[0.5]))
    assert result.summaries
    for row in result.summaries:
        assert row.min <= row.q1 <= row.median <= row.q3 <= row.max
        assert row.min <= row.mean <= row.max
        assert row.range == pytest.approx(row.max - row.min)
        assert row.n + row.discards == 4
