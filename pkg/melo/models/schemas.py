from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Optional, Dict
from enum import Enum


class ProblemName(str, Enum):
    OPTIMAL_INPUT = "optimal_input"
    ODDS_RATIO = "odds_ratio"
    PORTFOLIO = "portfolio"
    STRUCTURAL = "structural"

    @classmethod
    def parse(cls, text: str) -> "ProblemName":
        return cls(text.strip().lower().replace("-", "_"))


class Method(str, Enum):
    PLUGIN = "plugin"
    MELO_ANALYTICAL = "melo_analytical"
    MELO_SAMPLED = "melo_sampled"
    ILS_2SLS = "ils_2sls"


VALID_METHODS: Dict[ProblemName, List[Method]] = {
    ProblemName.OPTIMAL_INPUT: [Method.PLUGIN, Method.MELO_ANALYTICAL, Method.MELO_SAMPLED],
    ProblemName.ODDS_RATIO: [Method.PLUGIN, Method.MELO_SAMPLED],
    ProblemName.PORTFOLIO: [Method.PLUGIN, Method.MELO_SAMPLED],
    ProblemName.STRUCTURAL: [Method.ILS_2SLS, Method.MELO_ANALYTICAL, Method.MELO_SAMPLED],
}


class ExperimentSpec(BaseModel):
    """Declarative Monte-Carlo study; one JSON config file per study."""
    model_config = ConfigDict(extra="forbid")

    problem: ProblemName = Field(..., description="Worked problem to simulate")
    sample_sizes: List[int] = Field(..., min_length=1, description="N per cell (T for the portfolio problem)")
    signal_noise_levels: Optional[List[float]] = Field(None, description="sd(systematic)/sd(error) per cell")
    assets: Optional[List[int]] = Field(None, description="Number of assets L per cell (portfolio only)")
    replications: int = Field(..., ge=1, description="Replications per cell")
    draws: int = Field(10_000, ge=100, description="Posterior draws S (total Gibbs iterations for probit)")
    burn_in: Optional[int] = Field(None, ge=0, description="Discarded Gibbs iterations; default 20% for probit")
    methods: List[Method] = Field(..., min_length=1, description="Estimators to compare")
    seed: int = Field(20240101, ge=0, description="Master seed")
    input_price: float = Field(3000.0, gt=0, description="Input price w (optimal input)")
    output_price: float = Field(4000.0, gt=0, description="Output price p (optimal input)")
    evaluation_points: Optional[List[List[float]]] = Field(None, description="Covariate rows for the odds ratio")

    @model_validator(mode="after")
    def check_problem_fields(self) -> "ExperimentSpec":
        allowed = VALID_METHODS[self.problem]
        invalid = [m.value for m in self.methods if m not in allowed]
        if invalid:
            raise ValueError(f"methods {invalid} are not available for {self.problem.value}")
        if any(n < 1 for n in self.sample_sizes):
            raise ValueError("sample_sizes must be positive")
        if self.signal_noise_levels is not None and any(not level > 0 for level in self.signal_noise_levels):
            raise ValueError("signal_noise_levels must be positive")
        if self.problem in (ProblemName.OPTIMAL_INPUT, ProblemName.STRUCTURAL) and not self.signal_noise_levels:
            raise ValueError(f"signal_noise_levels is required for {self.problem.value}")
        if self.problem == ProblemName.PORTFOLIO and not self.assets:
            raise ValueError("assets is required for portfolio")
        if self.burn_in is not None and self.burn_in >= self.draws:
            raise ValueError("burn_in must be smaller than draws")
        return self


class ReplicationRecord(BaseModel):
    config: str
    replication: int
    method: Method
    estimate: List[Optional[float]] = Field(default_factory=list)
    finite: List[bool] = Field(default_factory=list)
    metrics: Dict[str, Optional[float]] = Field(default_factory=dict)
    error: Optional[str] = None

    @property
    def usable(self) -> bool:
        return self.error is None and bool(self.finite) and all(self.finite)


class SummaryRow(BaseModel):
    method: Method
    config: str
    metric: str
    min: float
    q1: float
    median: float
    mean: float
    q3: float
    max: float
    range: float
    n: int
    discards: int


class ExperimentResult(BaseModel):
    spec: ExperimentSpec
    records: List[ReplicationRecord] = Field(default_factory=list)
    summaries: List[SummaryRow] = Field(default_factory=list)
    discard_counts: Dict[str, Dict[str, int]] = Field(default_factory=dict)


class DatasetSchema(BaseModel):
    """Column roles of a user CSV file."""
    response: Optional[str] = None
    covariates: List[str] = Field(default_factory=list)
    returns: List[str] = Field(default_factory=list)
    system: List[str] = Field(default_factory=list)
    binary_response: bool = False
