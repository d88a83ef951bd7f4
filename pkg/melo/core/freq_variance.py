"""Frequentist covariance of MELO estimates.

The estimate depends on the data only through a sufficient statistic
theta_hat. Its gradient with respect to theta_hat is a posterior covariance
between the weighted target and the score
alpha(theta) = d/d theta_hat log f(theta_hat | theta), estimated from the
same draws as the point estimate, and the delta method turns it into a
covariance matrix.

Symmetric-matrix statistics are half-vectorized (lower triangle, row-major);
score entries for off-diagonal elements carry the chain-rule factor 2.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np
from scipy import linalg

from melo.core.config import settings
from melo.core.distributions import symmetrize, vech
from melo.core.exceptions import (
    DegenerateWeights,
    DimensionMismatch,
    MissingAugmentation,
    MomentsUndefined,
    NonFiniteTarget,
    NonPositiveDefinite,
    UnsupportedDimension,
)
from melo.core.melo_engine import RationalTarget, weighted_terms
from melo.core.posteriors import (
    IterationStats,
    LinearModelPosterior,
    MultivariateRegressionPosterior,
    MvnMeanCovPosterior,
    PosteriorDraws,
    unpack_mean_cov,
    unpack_regression,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SufficientStatistic:
    theta_hat: np.ndarray
    sigma_theta_hat: np.ndarray
    score: Callable[[PosteriorDraws], np.ndarray]  # (S, P)
    labels: List[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.theta_hat.size


@dataclass(frozen=True)
class MeloGradient:
    matrix: np.ndarray  # (K, P)
    labels: List[str] = field(default_factory=list)
    stat_labels: List[str] = field(default_factory=list)


def melo_gradient(draws: PosteriorDraws, target: RationalTarget, stat: SufficientStatistic) -> MeloGradient:
    """Row k: E[h g alpha]/E[h] - E[h g] E[h alpha] / E[h]^2 over the draws."""
    hg, h = weighted_terms(draws, target)
    alpha = np.asarray(stat.score(draws), dtype=float)
    if alpha.shape != (h.shape[0], stat.dim):
        raise DimensionMismatch(f"score has shape {alpha.shape}, expected ({h.shape[0]}, {stat.dim})")
    if not np.all(np.isfinite(alpha)):
        raise NonFiniteTarget("score is not finite at every draw")

    n_draws = h.shape[0]
    mean_h = h.mean(axis=0)
    if np.any(mean_h <= 0):
        raise DegenerateWeights("all loss weights are zero")
    mean_hg = hg.mean(axis=0)
    mean_hg_alpha = hg.T @ alpha / n_draws
    mean_h_alpha = h.T @ alpha / n_draws
    matrix = mean_hg_alpha / mean_h[:, None] - (mean_hg / mean_h ** 2)[:, None] * mean_h_alpha
    return MeloGradient(matrix=matrix, labels=list(target.labels), stat_labels=list(stat.labels))


def delta_variance(grad: MeloGradient, stat_cov: np.ndarray) -> np.ndarray:
    matrix = np.atleast_2d(grad.matrix)
    stat_cov = np.atleast_2d(np.asarray(stat_cov, dtype=float))
    if stat_cov.shape != (matrix.shape[1], matrix.shape[1]):
        raise DimensionMismatch(f"gradient has {matrix.shape[1]} columns but covariance is {stat_cov.shape}")
    cov = symmetrize(matrix @ stat_cov @ matrix.T)
    diagonal = np.diag(cov).copy()
    if np.any(diagonal < 0):
        logger.warning(f"Clipping negative delta-method variances {diagonal[diagonal < 0]}")
        np.fill_diagonal(cov, np.clip(diagonal, 0.0, None))
    return cov


def melo_covariance(draws: PosteriorDraws, target: RationalTarget, stat: SufficientStatistic) -> np.ndarray:
    return delta_variance(melo_gradient(draws, target, stat), stat.sigma_theta_hat)


# ---------------------------------------------------------------- scores

def _offdiagonal_factor(dim: int) -> np.ndarray:
    rows, cols = np.tril_indices(dim)
    return np.where(rows == cols, 1.0, 2.0)


def _batched_inverse(matrices: np.ndarray) -> np.ndarray:
    try:
        factors = np.linalg.cholesky(matrices)
    except np.linalg.LinAlgError:
        raise NonPositiveDefinite("covariance draw is not positive definite")
    identity = np.broadcast_to(np.eye(matrices.shape[-1]), matrices.shape)
    half = np.linalg.solve(factors, identity)
    return np.swapaxes(half, -1, -2) @ half


def _wishart_score(S_matrix: np.ndarray, sigmas: np.ndarray, dof: int) -> np.ndarray:
    """d/d vech(S) of the log Wishart(dof, Sigma) density, one row per Sigma draw."""
    dim = S_matrix.shape[0]
    try:
        S_inv = linalg.cho_solve(linalg.cho_factor(S_matrix, lower=True), np.eye(dim))
    except linalg.LinAlgError:
        raise NonPositiveDefinite("cross-product matrix is not positive definite")
    gradient = 0.5 * (dof - dim - 1) * S_inv - 0.5 * _batched_inverse(sigmas)
    return vech(gradient) * _offdiagonal_factor(dim)


def score_linear(beta: np.ndarray, sigma2: np.ndarray, post: LinearModelPosterior) -> np.ndarray:
    """Score of (beta_hat, s2) for the normal linear model at draws (beta, sigma2)."""
    beta = np.atleast_2d(beta)
    sigma2 = np.asarray(sigma2, dtype=float).ravel()
    if post.s2 <= 0 or np.any(sigma2 <= 0):
        raise MomentsUndefined("score of s2 is undefined for a degenerate residual")
    dof = post.dof
    beta_block = (beta - post.beta_hat) @ post.xtx / sigma2[:, None]
    s2_block = (0.5 * dof - 1.0) / post.s2 - dof / (2.0 * sigma2)
    return np.column_stack([beta_block, s2_block])


def score_probit_per_iteration(beta: np.ndarray, stats: IterationStats, pooled: bool = True) -> np.ndarray:
    """Unit-variance linear score of the latent-data statistics at each draw.

    With ``pooled`` the statistics are averaged over iterations first and
    every draw is scored against that average; otherwise draw g is scored
    against iteration g's own statistics.
    """
    if stats is None:
        raise MissingAugmentation("probit scores need per-iteration latent statistics")
    beta = np.atleast_2d(beta)
    dof = stats.n_obs - stats.beta_hat.shape[1]
    beta_hat, s2 = stats.beta_hat, stats.s2
    if pooled:
        beta_hat, s2 = beta_hat.mean(axis=0), np.full(beta.shape[0], s2.mean())
    beta_block = (beta - beta_hat) @ stats.xtx
    s2_block = (0.5 * dof - 1.0) / s2 - 0.5 * dof
    return np.column_stack([beta_block, s2_block])


def score_portfolio(mus: np.ndarray, sigmas: np.ndarray, post: MvnMeanCovPosterior) -> np.ndarray:
    """Score of (mu_hat, vech S) with mu_hat ~ N(mu, Sigma/T) and S ~ W(T-1, Sigma)."""
    sigma_inv = _batched_inverse(sigmas)
    mean_block = post.T * np.einsum("si,sij->sj", mus - post.mu_hat, sigma_inv)
    return np.column_stack([mean_block, _wishart_score(post.S_matrix, sigmas, post.T - 1)])


def score_structural(coefs: np.ndarray, sigmas: np.ndarray, post: MultivariateRegressionPosterior) -> np.ndarray:
    """Score of (vec B_hat, vech S): vec(B - B_hat)'(Sigma^-1 kron X'X) and the Wishart block."""
    sigma_inv = _batched_inverse(sigmas)
    gradient = post.xtx @ (coefs - post.B_hat) @ sigma_inv
    coef_block = np.swapaxes(gradient, 1, 2).reshape(coefs.shape[0], -1)
    return np.column_stack([coef_block, _wishart_score(post.S_matrix, sigmas, post.dof)])


# ---------------------------------------------------------------- sampling covariances

def stat_covariance_linear(post: LinearModelPosterior) -> np.ndarray:
    return linalg.block_diag(post.s2 * post.xtx_inv, 2.0 * post.s2 ** 2 / post.dof)


def stat_covariance_probit(xtx_inv: np.ndarray, dof: int) -> np.ndarray:
    return linalg.block_diag(xtx_inv, 2.0 / dof)


def stat_covariance_wishart(sigma_hat: np.ndarray, dof: int) -> np.ndarray:
    """Cov(S_ij, S_kl) = dof (s_ik s_jl + s_il s_jk) over vech(S)."""
    sigma_hat = np.atleast_2d(np.asarray(sigma_hat, dtype=float))
    rows, cols = np.tril_indices(sigma_hat.shape[0])
    i, j = rows[:, None], cols[:, None]
    k, l = rows[None, :], cols[None, :]
    return dof * (sigma_hat[i, k] * sigma_hat[j, l] + sigma_hat[i, l] * sigma_hat[j, k])


# ---------------------------------------------------------------- statistics per problem

def _vech_labels(prefix: str, dim: int) -> List[str]:
    rows, cols = np.tril_indices(dim)
    return [f"{prefix}[{i + 1},{j + 1}]" for i, j in zip(rows, cols)]


def linear_statistic(post: LinearModelPosterior) -> SufficientStatistic:
    q = post.n_coef

    def score(draws: PosteriorDraws) -> np.ndarray:
        return score_linear(draws.draws[:, :q], draws.column("sigma2"), post)

    return SufficientStatistic(
        theta_hat=np.append(post.beta_hat, post.s2),
        sigma_theta_hat=stat_covariance_linear(post),
        score=score,
        labels=[f"{name}_hat" for name in post.names] + ["s2"],
    )


def probit_statistic(draws: PosteriorDraws) -> SufficientStatistic:
    stats = draws.per_iteration_stats
    if stats is None:
        raise MissingAugmentation("probit draws carry no per-iteration latent statistics")
    q = stats.beta_hat.shape[1]
    xtx_inv = linalg.cho_solve(linalg.cho_factor(stats.xtx, lower=True), np.eye(q))

    def score(current: PosteriorDraws) -> np.ndarray:
        return score_probit_per_iteration(current.draws, current.per_iteration_stats)

    return SufficientStatistic(
        theta_hat=np.append(stats.beta_hat.mean(axis=0), stats.s2.mean()),
        sigma_theta_hat=stat_covariance_probit(xtx_inv, stats.n_obs - q),
        score=score,
        labels=[f"{name}_hat" for name in draws.names] + ["s2"],
    )


def portfolio_statistic(post: MvnMeanCovPosterior) -> SufficientStatistic:
    if post.dim > settings.max_portfolio_assets_for_variance:
        raise UnsupportedDimension(
            f"portfolio covariance supports at most {settings.max_portfolio_assets_for_variance} assets, got {post.dim}"
        )
    sigma_hat = post.sigma_hat

    def score(draws: PosteriorDraws) -> np.ndarray:
        mus, sigmas = unpack_mean_cov(draws)
        return score_portfolio(mus, sigmas, post)

    return SufficientStatistic(
        theta_hat=np.append(post.mu_hat, vech(post.S_matrix)),
        sigma_theta_hat=linalg.block_diag(sigma_hat / post.T, stat_covariance_wishart(sigma_hat, post.T - 1)),
        score=score,
        labels=[f"mu_hat{i + 1}" for i in range(post.dim)] + _vech_labels("S", post.dim),
    )


def structural_statistic(post: MultivariateRegressionPosterior) -> SufficientStatistic:
    k, m = post.B_hat.shape
    sigma_hat = post.sigma_hat

    def score(draws: PosteriorDraws) -> np.ndarray:
        coefs, sigmas = unpack_regression(draws, k, m)
        return score_structural(coefs, sigmas, post)

    return SufficientStatistic(
        theta_hat=np.append(post.B_hat.reshape(-1, order="F"), vech(post.S_matrix)),
        sigma_theta_hat=linalg.block_diag(np.kron(sigma_hat, post.xtx_inv), stat_covariance_wishart(sigma_hat, post.dof)),
        score=score,
        labels=[f"{name}_hat" for name in post.coef_names] + _vech_labels("S", m),
    )


def optimal_input_closed_form_gradient(
    post: LinearModelPosterior, w_over_p: float, coef_index: Tuple[int, int] = (0, 1)
) -> MeloGradient:
    """Exact gradient of the closed-form optimal-input MELO with respect to (beta_hat, s2)."""
    if post.dof <= 2:
        raise MomentsUndefined(f"posterior second moments need more than 2 dof, got {post.dof}")
    i, j = coef_index
    inflation = post.dof / (post.dof - 2)
    mean = post.beta_hat
    cov = post.posterior_cov
    numerator = w_over_p * mean[j] - (cov[i, j] + mean[i] * mean[j])
    denominator = 2.0 * (cov[j, j] + mean[j] ** 2)

    d_numerator = np.zeros(post.n_coef + 1)
    d_denominator = np.zeros(post.n_coef + 1)
    d_numerator[i] -= mean[j]
    d_numerator[j] += w_over_p - mean[i]
    d_denominator[j] = 4.0 * mean[j]
    d_numerator[-1] = -post.xtx_inv[i, j] * inflation
    d_denominator[-1] = 2.0 * post.xtx_inv[j, j] * inflation

    gradient = (d_numerator * denominator - numerator * d_denominator) / denominator ** 2
    return MeloGradient(
        matrix=gradient[None, :],
        labels=["x_opt"],
        stat_labels=[f"{name}_hat" for name in post.names] + ["s2"],
    )
