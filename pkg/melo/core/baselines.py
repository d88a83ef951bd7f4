"""Plug-in and least-squares competitors for the MELO estimators."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtr

from melo.core.config import settings
from melo.core.distributions import robust_cholesky
from melo.core.exceptions import CompleteSeparation, DimensionMismatch, InvalidParameter
from melo.core.melo_engine import covariate_label
from melo.core.posteriors import LinearModelPosterior, check_full_rank

logger = logging.getLogger(__name__)


@dataclass
class PluginEstimate:
    value: np.ndarray
    variance: Optional[np.ndarray] = None
    labels: List[str] = field(default_factory=list)
    finite: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.atleast_1d(np.asarray(self.value, dtype=float))
        self.finite = np.isfinite(self.value)

    @property
    def std_errors(self) -> Optional[np.ndarray]:
        if self.variance is None:
            return None
        with np.errstate(invalid="ignore"):
            return np.sqrt(np.diag(self.variance))

    @property
    def scalar(self) -> float:
        return float(self.value[0])


def plugin_optimal_input(
    post: LinearModelPosterior, w_over_p: float, coef_index: Tuple[int, int] = (0, 1)
) -> PluginEstimate:
    """(w/p - b1) / (2 b2) with its delta-method variance."""
    i, j = coef_index
    b1, b2 = post.beta_hat[i], post.beta_hat[j]
    if b2 == 0:
        return PluginEstimate(value=np.inf, variance=np.array([[np.inf]]), labels=["x_opt"])
    omega = (w_over_p - b1) / (2.0 * b2)
    cov = post.s2 * post.xtx_inv
    variance = (cov[i, i] + 4.0 * omega ** 2 * cov[j, j] + 4.0 * omega * cov[i, j]) / (4.0 * b2 ** 2)
    return PluginEstimate(value=omega, variance=np.array([[variance]]), labels=["x_opt"])


@dataclass(frozen=True)
class ProbitFit:
    beta: np.ndarray
    cov: np.ndarray
    loglik: float
    iterations: int
    converged: bool


def _probit_loglik(beta: np.ndarray, y: np.ndarray, X: np.ndarray) -> float:
    index = X @ beta
    return float(np.sum(np.where(y == 1, log_ndtr(index), log_ndtr(-index))))


def _probit_derivatives(beta: np.ndarray, y: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient and observed information of the probit log-likelihood."""
    index = X @ beta
    log_density = -0.5 * index ** 2 - 0.5 * np.log(2.0 * np.pi)
    mills_one = np.exp(log_density - log_ndtr(index))
    mills_zero = np.exp(log_density - log_ndtr(-index))
    positive = y == 1
    residual = np.where(positive, mills_one, -mills_zero)
    weight = np.where(positive, mills_one * (index + mills_one), mills_zero * (mills_zero - index))
    return X.T @ residual, (X * weight[:, None]).T @ X


def probit_mle(y: np.ndarray, X: np.ndarray, tol: float = 1e-8, max_iter: int = 100) -> ProbitFit:
    """Newton-Raphson probit fit with step halving; cov is the inverse observed information."""
    y = np.asarray(y).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if y.size != X.shape[0]:
        raise DimensionMismatch(f"{y.size} responses for a design with {X.shape[0]} rows")
    if not np.all(np.isin(y, (0, 1))):
        raise InvalidParameter("probit responses must be 0 or 1")
    if y.min() == y.max():
        raise CompleteSeparation("response contains a single class")
    check_full_rank(X)

    beta = np.zeros(X.shape[1])
    loglik = _probit_loglik(beta, y, X)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        gradient, information = _probit_derivatives(beta, y, X)
        if np.max(np.abs(gradient)) < tol:
            converged = True
            break
        step = linalg.solve(information, gradient, assume_a="pos")
        scale = 1.0
        for _ in range(50):
            candidate = beta + scale * step
            candidate_loglik = _probit_loglik(candidate, y, X)
            if candidate_loglik >= loglik:
                break
            scale *= 0.5
        beta, loglik = candidate, candidate_loglik
        if np.max(np.abs(beta)) > 1e3:
            raise CompleteSeparation(f"probit coefficients diverged to {beta}")

    if not converged:
        logger.warning(f"Probit MLE stopped after {iteration} iterations without meeting tolerance {tol}")
    _, information = _probit_derivatives(beta, y, X)
    cov = linalg.cho_solve((robust_cholesky(information), True), np.eye(X.shape[1]))
    return ProbitFit(beta=beta, cov=cov, loglik=loglik, iterations=iteration, converged=converged)


def plugin_odds_ratio(beta_hat: np.ndarray, x: np.ndarray, n_obs: int) -> PluginEstimate:
    """Phi/(1 - Phi) at x'beta_hat with variance Phi / (N (1 - Phi)^3).

    Flagged infinite when 1 - Phi falls below ``odds_infinity_threshold``.
    """
    rows = np.atleast_2d(np.asarray(x, dtype=float))
    index = rows @ np.asarray(beta_hat, dtype=float)
    prob, tail = ndtr(index), ndtr(-index)
    infinite = tail < settings.odds_infinity_threshold
    safe_tail = np.where(infinite, 1.0, tail)
    value = np.where(infinite, np.inf, prob / safe_tail)
    variance = np.where(infinite, np.inf, prob / (n_obs * safe_tail ** 3))
    return PluginEstimate(value=value, variance=np.diag(variance), labels=[covariate_label(r) for r in rows])


def plugin_tangency_portfolio(mu_hat: np.ndarray, sigma_hat: np.ndarray) -> PluginEstimate:
    mu_hat = np.asarray(mu_hat, dtype=float)
    factor = robust_cholesky(sigma_hat)
    solved = linalg.cho_solve((factor, True), mu_hat)
    total = solved.sum()
    labels = [f"w{i + 1}" for i in range(mu_hat.size)]
    if abs(total) < 1e-12 * np.sum(np.abs(solved)):
        return PluginEstimate(value=np.full(mu_hat.size, np.inf), labels=labels)
    return PluginEstimate(value=solved / total, labels=labels)


def _two_stage_least_squares(
    response: np.ndarray, regressors: np.ndarray, instruments: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Homoskedastic 2SLS coefficients and covariance."""
    first_stage = linalg.lstsq(instruments, regressors)[0]
    fitted = instruments @ first_stage
    gram = fitted.T @ regressors
    coef = linalg.solve(gram, fitted.T @ response)
    resid = response - regressors @ coef
    dof = response.size - regressors.shape[1]
    sigma2 = resid @ resid / dof
    return coef, sigma2 * linalg.inv(fitted.T @ fitted)


def ils_exactly_identified(Y: np.ndarray, X: np.ndarray) -> PluginEstimate:
    """Indirect least squares for the two-equation supply and demand system.

    ``Y`` holds (quantity, price) and ``X`` holds (1, z1, z2); demand excludes
    z2 and supply excludes z1. Returns (beta1, beta2, alpha1, alpha2) with 2SLS
    standard errors, which coincide with ILS under exact identification.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if Y.shape[1] != 2 or X.shape[1] != 3 or Y.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"expected (N, 2) responses and (N, 3) instruments, got {Y.shape} and {X.shape}")
    check_full_rank(X)
    coefs = linalg.lstsq(X, Y)[0]
    pi1, pi2 = coefs[1, 0], coefs[2, 0]
    gamma1, gamma2 = coefs[1, 1], coefs[2, 1]
    labels = ["beta1", "beta2", "alpha1", "alpha2"]
    if gamma1 == 0 or gamma2 == 0:
        return PluginEstimate(value=np.full(4, np.inf), labels=labels)

    value = np.array([
        pi2 / gamma2,
        pi1 - gamma1 * pi2 / gamma2,
        pi1 / gamma1,
        pi2 - gamma2 * pi1 / gamma1,
    ])
    quantity, price = Y[:, 0], Y[:, 1]
    ones, z1, z2 = X[:, 0], X[:, 1], X[:, 2]
    try:
        _, demand_cov = _two_stage_least_squares(quantity, np.column_stack([ones, price, z1]), X)
        _, supply_cov = _two_stage_least_squares(quantity, np.column_stack([ones, price, z2]), X)
        variance = linalg.block_diag(demand_cov[1:, 1:], supply_cov[1:, 1:])
    except linalg.LinAlgError:
        logger.warning("2SLS covariance is singular; reporting structural estimates without errors")
        variance = None
    return PluginEstimate(value=value, variance=variance, labels=labels)
