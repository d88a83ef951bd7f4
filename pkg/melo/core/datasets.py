"""CSV ingestion for the application estimates."""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from melo.core.exceptions import ConfigError, EmptyFile, MissingColumn, ParseError
from melo.core.problems import Dataset, mean_deviated_quadratic
from melo.models.schemas import DatasetSchema, ProblemName

logger = logging.getLogger(__name__)

DEFAULT_SCHEMAS: Dict[ProblemName, DatasetSchema] = {
    ProblemName.OPTIMAL_INPUT: DatasetSchema(response="output", covariates=["input"]),
    ProblemName.ODDS_RATIO: DatasetSchema(response="failure", covariates=["temperature"], binary_response=True),
    ProblemName.PORTFOLIO: DatasetSchema(),
    ProblemName.STRUCTURAL: DatasetSchema(system=["q", "p"], covariates=["z1", "z2"]),
}


def _required_columns(schema: DatasetSchema) -> List[str]:
    columns = ([schema.response] if schema.response else []) + schema.covariates + schema.returns + schema.system
    return list(dict.fromkeys(columns))


def load_csv_dataset(path: Path, schema: DatasetSchema) -> Dict[str, np.ndarray]:
    """Read the schema's columns as float arrays.

    Rows are reported 1-based counting the header as row 1, the way a
    spreadsheet shows them. An empty ``returns`` list means every column.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"{path} is empty")
    except FileNotFoundError:
        raise ConfigError(f"data file {path} does not exist")
    if frame.empty:
        raise EmptyFile(f"{path} has a header but no rows")

    frame.columns = [c.strip() for c in frame.columns]
    columns = _required_columns(schema)
    if not columns:
        columns = list(frame.columns)
    for column in columns:
        if column not in frame.columns:
            raise MissingColumn(column, str(path))

    data = {}
    for column in columns:
        raw = frame[column].str.strip()
        values = pd.to_numeric(raw, errors="coerce")
        bad = values.isna() | ~np.isfinite(values)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            reason = "missing value" if raw.iloc[row] == "" else "non-numeric value"
            raise ParseError(row + 2, column, raw.iloc[row], reason)
        data[column] = values.to_numpy(dtype=float)

    if schema.binary_response and schema.response:
        response = data[schema.response]
        invalid = np.flatnonzero(~np.isin(response, (0.0, 1.0)))
        if invalid.size:
            row = int(invalid[0])
            raise ParseError(row + 2, schema.response, frame[schema.response].iloc[row], "response must be 0 or 1, got")
    logger.info(f"Loaded {len(frame)} rows of {columns} from {path}")
    return data


def dataset_for_problem(problem: ProblemName, data: Dict[str, np.ndarray], schema: DatasetSchema) -> Dataset:
    """Arrange loaded columns into the design the problem's estimators expect."""
    if problem == ProblemName.OPTIMAL_INPUT:
        if len(schema.covariates) != 1:
            raise ConfigError("optimal input needs exactly one input column")
        y = data[schema.response]
        return Dataset(response=y - y.mean(), design=mean_deviated_quadratic(data[schema.covariates[0]]), column_names=["x", "x2"])
    if problem == ProblemName.ODDS_RATIO:
        y = data[schema.response].astype(int)
        design = np.column_stack([np.ones(y.size)] + [data[c] for c in schema.covariates])
        return Dataset(response=y, design=design, column_names=["const"] + schema.covariates)
    if problem == ProblemName.PORTFOLIO:
        names = schema.returns or list(data)
        return Dataset(response=np.column_stack([data[c] for c in names]), column_names=names)
    if len(schema.system) != 2 or len(schema.covariates) != 2:
        raise ConfigError("structural model needs two system columns (quantity, price) and two instruments")
    Y = np.column_stack([data[c] for c in schema.system])
    X = np.column_stack([np.ones(Y.shape[0])] + [data[c] for c in schema.covariates])
    return Dataset(response=Y, design=X, column_names=["const"] + schema.covariates)


def schema_for(problem: ProblemName, response: Optional[str] = None, covariates: Optional[List[str]] = None) -> DatasetSchema:
    schema = DEFAULT_SCHEMAS[problem].model_copy(deep=True)
    if response:
        if problem == ProblemName.STRUCTURAL:
            schema.system = [c.strip() for c in response.split(",")]
        else:
            schema.response = response
    if covariates:
        if problem == ProblemName.PORTFOLIO:
            schema.returns = covariates
        else:
            schema.covariates = covariates
    return schema
