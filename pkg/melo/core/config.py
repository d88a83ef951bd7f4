from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    # Reproducibility
    seed: int = 20240101

    # Parallelism
    threads: int = 1

    # Posterior simulation
    draws: int = 10_000
    probit_iterations: int = 25_000
    probit_burn_in: int = 5_000
    probit_prior_variance: float = 10_000.0
    portfolio_draws: int = 1_000
    structural_draws: int = 50_000

    # Numerical policy
    jitter_scale: float = 1e-10
    jitter_retries: int = 3
    truncnorm_tail_threshold: float = 5.0  # standard deviations
    odds_infinity_threshold: float = 1e-12
    max_portfolio_assets_for_variance: int = 10
    portfolio_skip_tolerance: float = 0.01

    # Output
    output_dir: str = "results"
    output_decimals: int = 4
    log_level: str = "INFO"
    log_file: Optional[str] = None

    class Config:
        env_file = ".env"
        env_prefix = "MELO_"


settings = Settings()
