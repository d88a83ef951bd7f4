"""The four worked problems: data-generating processes, targets and the
wiring from data to every estimator of a problem.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import ndtr

from melo.core.config import settings
from melo.core.distributions import RandomStream, robust_cholesky, sample_mvn, vech
from melo.core.exceptions import InsufficientData, InvalidParameter, MeloError, UnsupportedDimension
from melo.core.baselines import (
    ils_exactly_identified,
    plugin_odds_ratio,
    plugin_optimal_input,
    plugin_tangency_portfolio,
    probit_mle,
)
from melo.core.freq_variance import (
    delta_variance,
    linear_statistic,
    melo_covariance,
    optimal_input_closed_form_gradient,
    portfolio_statistic,
    probit_statistic,
    stat_covariance_linear,
    structural_statistic,
)
from melo.core.melo_engine import (
    RationalTarget,
    melo_from_draws,
    melo_odds_ratio,
    melo_optimal_input_closed_form,
    melo_probability,
    melo_structural_closed_form,
    melo_tangency_portfolio,
    odds_target,
    optimal_input_target,
    structural_target,
    tangency_target,
)
from melo.core.posteriors import (
    fit_linear_model,
    fit_multivariate_regression,
    fit_mvn_mean_cov,
    multivariate_regression_draws,
    mvn_mean_cov_gibbs,
    probit_gibbs,
)
from melo.models.schemas import Method, ProblemName

logger = logging.getLogger(__name__)

# quadratic production function y = 1.5 x - 0.002 x^2
PRODUCTION_COEFS = (1.5, -0.002)
INPUT_MEAN, INPUT_SD = 187.5, 70.0
DEFAULT_INPUT_PRICE, DEFAULT_OUTPUT_PRICE = 3000.0, 4000.0

PROBIT_COEFS = (0.5, 0.8, -1.2)
DEFAULT_EVALUATION_POINTS = ((1.0, 1.0, 1.0), (1.0, 0.0, 0.0))

# demand q = 0.2 - 0.8 p + 1.5 z1, supply q = -0.5 + 1.2 p - 1.0 z2
DEMAND = (0.2, -0.8, 1.5)
SUPPLY = (-0.5, 1.2, -1.0)
STRUCTURAL_COEF_NAMES = ["pi0", "pi1", "pi2", "gamma0", "gamma1", "gamma2"]
# columns of (pi1, pi2, gamma1, gamma2) within vec(B)
REDUCED_FORM_SLOPES = (1, 2, 4, 5)

OPTIMAL_INPUT_NAMES = ["beta1", "beta2"]


@dataclass(frozen=True)
class Dataset:
    response: np.ndarray
    design: Optional[np.ndarray] = None
    column_names: List[str] = field(default_factory=list)

    @property
    def n_obs(self) -> int:
        return self.response.shape[0]


@dataclass(frozen=True)
class ProblemInstance:
    name: ProblemName
    truth: np.ndarray
    target: RationalTarget
    true_parameters: np.ndarray
    dgp_params: Dict[str, Any] = field(default_factory=dict)
    evaluation_points: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.truth)):
            raise InvalidParameter(f"truth for {self.name.value} is not finite")
        if self.truth.size != self.target.dim:
            raise InvalidParameter(f"truth has {self.truth.size} components, target {self.target.dim}")

    @property
    def labels(self) -> List[str]:
        return self.target.labels


def _check_signal_noise(signal_noise: float) -> None:
    if not signal_noise > 0:
        raise InvalidParameter(f"signal_noise must be positive, got {signal_noise}")


def production_variance(coefs: Tuple[float, float] = PRODUCTION_COEFS, mean: float = INPUT_MEAN, sd: float = INPUT_SD) -> float:
    """Var(a x + b x^2) for x ~ N(mean, sd^2)."""
    a, b = coefs
    var = sd ** 2
    return a * a * var + b * b * (4.0 * mean ** 2 * var + 2.0 * var ** 2) + 4.0 * a * b * mean * var


def mean_deviated_quadratic(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.column_stack([x - x.mean(), x ** 2 - np.mean(x ** 2)])


def gen_optimal_input(
    N: int,
    signal_noise: float,
    rng: RandomStream,
    w: float = DEFAULT_INPUT_PRICE,
    p: float = DEFAULT_OUTPUT_PRICE,
) -> Tuple[Dataset, ProblemInstance]:
    """y = 1.5 x - 0.002 x^2 + u with sd(systematic)/sd(u) = signal_noise."""
    if N < 5:
        raise InvalidParameter(f"optimal input needs at least 5 observations, got {N}")
    _check_signal_noise(signal_noise)
    a, b = PRODUCTION_COEFS
    error_variance = production_variance() / signal_noise ** 2
    gen = rng.generator
    x = gen.normal(INPUT_MEAN, INPUT_SD, N)
    y = a * x + b * x ** 2 + np.sqrt(error_variance) * gen.standard_normal(N)
    dataset = Dataset(response=y - y.mean(), design=mean_deviated_quadratic(x), column_names=["x", "x2"])

    target = optimal_input_target(w / p)
    true_parameters = np.array(PRODUCTION_COEFS)
    instance = ProblemInstance(
        name=ProblemName.OPTIMAL_INPUT,
        truth=np.array([(w / p - a) / (2.0 * b)]),
        target=target,
        true_parameters=true_parameters,
        dgp_params={"N": N, "signal_noise": signal_noise, "w": w, "p": p, "error_variance": error_variance},
    )
    return dataset, instance


def probit_odds(beta: Sequence[float], points: np.ndarray) -> np.ndarray:
    index = np.atleast_2d(points) @ np.asarray(beta, dtype=float)
    return ndtr(index) / ndtr(-index)


def gen_odds_ratio(
    N: int, rng: RandomStream, evaluation_points: Optional[Sequence[Sequence[float]]] = None
) -> Tuple[Dataset, ProblemInstance]:
    if N < 5:
        raise InvalidParameter(f"odds ratio needs at least 5 observations, got {N}")
    points = np.atleast_2d(np.asarray(evaluation_points or DEFAULT_EVALUATION_POINTS, dtype=float))
    if points.shape[1] != len(PROBIT_COEFS):
        raise InvalidParameter(f"evaluation points need {len(PROBIT_COEFS)} entries")
    gen = rng.generator
    X = np.column_stack([np.ones(N), gen.standard_normal((N, 2))])
    latent = X @ np.array(PROBIT_COEFS) + gen.standard_normal(N)
    y = (latent > 0).astype(int)
    dataset = Dataset(response=y, design=X, column_names=["const", "x1", "x2"])
    instance = ProblemInstance(
        name=ProblemName.ODDS_RATIO,
        truth=probit_odds(PROBIT_COEFS, points),
        target=odds_target(points),
        true_parameters=np.array(PROBIT_COEFS),
        dgp_params={"N": N, "beta": list(PROBIT_COEFS)},
        evaluation_points=points,
    )
    return dataset, instance


def tangency_weights(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    solved = linalg.cho_solve((robust_cholesky(sigma), True), mu)
    return solved / solved.sum()


def portfolio_population(L: int, rng: RandomStream) -> Tuple[np.ndarray, np.ndarray]:
    """Population (mu, Sigma) with mu_l ~ U(-0.2, 0.2) and Sigma = A'A/L + 0.01 I."""
    if L < 1:
        raise InvalidParameter(f"portfolio needs at least one asset, got L={L}")
    gen = rng.generator
    A = gen.standard_normal((L, L))
    sigma = A.T @ A / L + 0.01 * np.eye(L)
    mu = gen.uniform(-0.2, 0.2, L)
    return mu, sigma


def gen_portfolio(
    L: int,
    T: int,
    rng: RandomStream,
    population: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[Dataset, ProblemInstance]:
    """T periods of returns R ~ N(mu, Sigma).

    ``population`` fixes (mu, Sigma) across replications of a cell; without
    it the population is drawn from ``rng`` first.
    """
    if L < 1 or T <= L:
        raise InvalidParameter(f"portfolio needs T > L, got L={L}, T={T}")
    mu, sigma = population if population is not None else portfolio_population(L, rng)
    if mu.shape != (L,) or sigma.shape != (L, L):
        raise InvalidParameter(f"population shapes {mu.shape} and {sigma.shape} do not match L={L}")
    returns = sample_mvn(mu, sigma, T, rng)
    instance = ProblemInstance(
        name=ProblemName.PORTFOLIO,
        truth=tangency_weights(mu, sigma),
        target=tangency_target(L),
        true_parameters=np.concatenate([mu, vech(sigma)]),
        dgp_params={"L": L, "T": T, "melo_supported": T > L + 2},
    )
    return Dataset(response=returns, column_names=[f"asset{i + 1}" for i in range(L)]), instance


def reduced_form_from_structural(
    demand: Sequence[float] = DEMAND, supply: Sequence[float] = SUPPLY
) -> Tuple[np.ndarray, np.ndarray]:
    """Reduced-form (pi, gamma) coefficients on (1, z1, z2) for quantity and price.

    demand is q = b0 + b1 p + b2 z1 and supply is q = a0 + a1 p + a2 z2.
    """
    b0, b1, b2 = demand
    a0, a1, a2 = supply
    if b1 == a1:
        raise InvalidParameter("demand and supply slopes coincide; the system has no solution")
    gamma = np.array([(a0 - b0) / (b1 - a1), -b2 / (b1 - a1), a2 / (b1 - a1)])
    pi = np.array([b0 + b1 * gamma[0], b1 * gamma[1] + b2, b1 * gamma[2]])
    return pi, gamma


def gen_structural(N: int, signal_noise: float, rng: RandomStream) -> Tuple[Dataset, ProblemInstance]:
    if N < 10:
        raise InvalidParameter(f"structural model needs at least 10 observations, got {N}")
    _check_signal_noise(signal_noise)
    pi, gamma = reduced_form_from_structural()
    # instruments are standard normal, so Var(systematic) is the sum of squared slopes;
    # signal_noise is the ratio of standard deviations
    error_sd = np.sqrt(np.array([pi[1:] @ pi[1:], gamma[1:] @ gamma[1:]])) / signal_noise
    gen = rng.generator
    X = np.column_stack([np.ones(N), gen.standard_normal((N, 2))])
    Y = X @ np.column_stack([pi, gamma]) + gen.standard_normal((N, 2)) * error_sd
    instance = ProblemInstance(
        name=ProblemName.STRUCTURAL,
        truth=np.array([DEMAND[1], DEMAND[2], SUPPLY[1], SUPPLY[2]]),
        target=structural_target(REDUCED_FORM_SLOPES),
        true_parameters=np.concatenate([pi, gamma]),
        dgp_params={"N": N, "signal_noise": signal_noise, "error_sd": error_sd.tolist()},
    )
    return Dataset(response=Y, design=X, column_names=["const", "z1", "z2"]), instance


# ---------------------------------------------------------------- estimation wiring

@dataclass
class EstimationOptions:
    draws: int = settings.draws
    burn_in: Optional[int] = None
    w_over_p: float = DEFAULT_INPUT_PRICE / DEFAULT_OUTPUT_PRICE
    evaluation_points: Optional[np.ndarray] = None
    with_variance: bool = False


@dataclass
class MethodOutcome:
    method: Method
    labels: List[str]
    value: Optional[np.ndarray] = None
    std_errors: Optional[np.ndarray] = None
    extras: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def finite(self) -> np.ndarray:
        if self.value is None:
            return np.zeros(len(self.labels), dtype=bool)
        return np.isfinite(self.value)


def _standard_errors(cov: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if cov is None:
        return None
    with np.errstate(invalid="ignore"):
        return np.sqrt(np.diag(cov))


def _run_method(outcome: MethodOutcome, fn) -> MethodOutcome:
    try:
        fn(outcome)
    except MeloError as e:
        outcome.error = f"{type(e).__name__}: {e}"
        logger.error(f"{outcome.method.value} failed: {outcome.error}")
    return outcome


def _solve_optimal_input(dataset, methods, options, rng) -> Dict[Method, MethodOutcome]:
    post = fit_linear_model(dataset.response, dataset.design, names=OPTIMAL_INPUT_NAMES)
    target = optimal_input_target(options.w_over_p)

    def plugin(outcome):
        estimate = plugin_optimal_input(post, options.w_over_p)
        outcome.value = estimate.value
        outcome.std_errors = estimate.std_errors

    def analytical(outcome):
        outcome.value = np.array([melo_optimal_input_closed_form(post, options.w_over_p)])
        if options.with_variance:
            gradient = optimal_input_closed_form_gradient(post, options.w_over_p)
            outcome.std_errors = _standard_errors(delta_variance(gradient, stat_covariance_linear(post)))

    def sampled(outcome):
        draws = post.draw_joint(options.draws, rng)
        estimate = melo_from_draws(draws, target)
        outcome.value = estimate.omega_star
        outcome.extras["ess"] = estimate.ess.tolist()
        if options.with_variance:
            outcome.std_errors = _standard_errors(melo_covariance(draws, target, linear_statistic(post)))

    solvers = {Method.PLUGIN: plugin, Method.MELO_ANALYTICAL: analytical, Method.MELO_SAMPLED: sampled}
    return {m: _run_method(MethodOutcome(m, target.labels), solvers[m]) for m in methods}


def _solve_odds_ratio(dataset, methods, options, rng) -> Dict[Method, MethodOutcome]:
    points = np.atleast_2d(options.evaluation_points)
    target = odds_target(points)
    y, X = dataset.response, dataset.design

    def plugin(outcome):
        fit = probit_mle(y, X)
        estimate = plugin_odds_ratio(fit.beta, points, dataset.n_obs)
        outcome.value = estimate.value
        outcome.std_errors = estimate.std_errors
        outcome.extras["beta"] = fit.beta.tolist()

    def sampled(outcome):
        q = X.shape[1]
        draws = probit_gibbs(
            y,
            X,
            prior_mean=np.zeros(q),
            prior_cov=settings.probit_prior_variance * np.eye(q),
            iters=options.draws,
            burn_in=options.burn_in,
            rng=rng,
        )
        estimate = melo_odds_ratio(draws, points)
        outcome.value = estimate.omega_star
        outcome.extras["implied_probability"] = estimate.implied_probability.tolist()
        outcome.extras["probability"] = melo_probability(draws, points).omega_star.tolist()
        outcome.extras["posterior_mean"] = draws.mean().tolist()
        if options.with_variance:
            outcome.std_errors = _standard_errors(melo_covariance(draws, target, probit_statistic(draws)))

    solvers = {Method.PLUGIN: plugin, Method.MELO_SAMPLED: sampled}
    return {m: _run_method(MethodOutcome(m, target.labels), solvers[m]) for m in methods}


def _solve_portfolio(dataset, methods, options, rng) -> Dict[Method, MethodOutcome]:
    returns = dataset.response
    T, L = returns.shape
    labels = [f"w{i + 1}" for i in range(L)]

    def plugin(outcome):
        if T <= L:
            raise InsufficientData(f"sample covariance needs T > L, got L={L}, T={T}")
        sigma_hat = np.atleast_2d(np.cov(returns, rowvar=False))
        outcome.value = plugin_tangency_portfolio(returns.mean(axis=0), sigma_hat).value

    def sampled(outcome):
        if T <= L + 2:
            raise UnsupportedDimension(f"MELO needs T > L + 2, got L={L}, T={T}")
        draws = mvn_mean_cov_gibbs(returns, options.draws, rng)
        estimate = melo_tangency_portfolio(draws)
        outcome.value = estimate.omega_star
        outcome.extras["skipped_draws"] = estimate.skipped_draws
        if options.with_variance and L > settings.max_portfolio_assets_for_variance:
            logger.warning(f"Skipping MELO standard errors for {L} assets")
        elif options.with_variance:
            stat = portfolio_statistic(fit_mvn_mean_cov(returns))
            outcome.std_errors = _standard_errors(melo_covariance(draws, tangency_target(L), stat))

    solvers = {Method.PLUGIN: plugin, Method.MELO_SAMPLED: sampled}
    return {m: _run_method(MethodOutcome(m, labels), solvers[m]) for m in methods}


def _solve_structural(dataset, methods, options, rng) -> Dict[Method, MethodOutcome]:
    post = fit_multivariate_regression(dataset.response, dataset.design, coef_names=STRUCTURAL_COEF_NAMES)
    target = structural_target(REDUCED_FORM_SLOPES)
    slopes = list(REDUCED_FORM_SLOPES)

    def ils(outcome):
        estimate = ils_exactly_identified(dataset.response, dataset.design)
        outcome.value = estimate.value
        outcome.std_errors = estimate.std_errors

    def analytical(outcome):
        mean, cov = post.posterior_moments()
        outcome.value = melo_structural_closed_form(mean[slopes], cov[np.ix_(slopes, slopes)])

    def sampled(outcome):
        draws = multivariate_regression_draws(post, options.draws, rng)
        estimate = melo_from_draws(draws, target)
        outcome.value = estimate.omega_star
        if options.with_variance:
            outcome.std_errors = _standard_errors(melo_covariance(draws, target, structural_statistic(post)))

    solvers = {Method.ILS_2SLS: ils, Method.MELO_ANALYTICAL: analytical, Method.MELO_SAMPLED: sampled}
    return {m: _run_method(MethodOutcome(m, target.labels), solvers[m]) for m in methods}


SOLVERS = {
    ProblemName.OPTIMAL_INPUT: _solve_optimal_input,
    ProblemName.ODDS_RATIO: _solve_odds_ratio,
    ProblemName.PORTFOLIO: _solve_portfolio,
    ProblemName.STRUCTURAL: _solve_structural,
}


def solve(
    problem: ProblemName,
    dataset: Dataset,
    methods: Sequence[Method],
    options: EstimationOptions,
    rng: RandomStream,
) -> Dict[Method, MethodOutcome]:
    """Run every requested estimator on one dataset.

    A fitting failure shared by all methods (for example a singular design)
    propagates; failures of a single method are recorded on its outcome.
    """
    if problem == ProblemName.ODDS_RATIO and options.evaluation_points is None:
        options = replace(options, evaluation_points=np.array(DEFAULT_EVALUATION_POINTS))
    return SOLVERS[problem](dataset, list(methods), options, rng)
