"""Posterior machinery for the four model families.

Each ``fit_*`` function reduces the data to its sufficient statistics and
returns an immutable posterior object; each sampler returns
:class:`PosteriorDraws`, the common currency consumed by the estimators.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from melo.core.distributions import (
    RandomStream,
    TruncationSide,
    psd_factor,
    robust_cholesky,
    sample_inverse_wishart,
    sample_mvt,
    sample_scaled_chisq,
    sample_truncated_normal,
    unvech,
    vech,
)
from melo.core.exceptions import (
    CompleteSeparation,
    DimensionMismatch,
    InsufficientData,
    InvalidParameter,
    MomentsUndefined,
    NonPositiveDefinite,
    SingularDesign,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IterationStats:
    """Latent-data sufficient statistics recorded at every kept Gibbs iteration."""
    beta_hat: np.ndarray  # (S, q)
    s2: np.ndarray  # (S,)
    xtx: np.ndarray
    n_obs: int

    def subset(self, mask: np.ndarray) -> "IterationStats":
        return IterationStats(self.beta_hat[mask], self.s2[mask], self.xtx, self.n_obs)


@dataclass(frozen=True)
class PosteriorDraws:
    draws: np.ndarray  # (S, L)
    names: List[str]
    burn_in: int = 0
    per_iteration_stats: Optional[IterationStats] = None

    def __post_init__(self):
        draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "names", list(self.names))
        if draws.shape[0] < 1:
            raise InsufficientData("posterior draws are empty")
        if len(self.names) != draws.shape[1]:
            raise DimensionMismatch(f"{len(self.names)} names for {draws.shape[1]} parameters")
        if len(set(self.names)) != len(self.names):
            raise InvalidParameter("parameter names must be unique")
        if not np.all(np.isfinite(draws)):
            raise InvalidParameter("posterior draws contain NaN or infinite values")
        stats = self.per_iteration_stats
        if stats is not None and stats.beta_hat.shape[0] != draws.shape[0]:
            raise DimensionMismatch("per-iteration statistics do not match the draw count")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.index(name)]

    def block(self, prefix: str) -> np.ndarray:
        columns = [i for i, name in enumerate(self.names) if name.startswith(prefix)]
        return self.draws[:, columns]

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def subset(self, mask: np.ndarray) -> "PosteriorDraws":
        stats = self.per_iteration_stats.subset(mask) if self.per_iteration_stats is not None else None
        return PosteriorDraws(self.draws[mask], self.names, self.burn_in, stats)


def check_full_rank(X: np.ndarray) -> None:
    singular_values = np.linalg.svd(X, compute_uv=False)
    if singular_values.size == 0 or singular_values[-1] <= 1e-10 * singular_values[0]:
        raise SingularDesign(f"design matrix of shape {X.shape} is rank deficient")


def _default_names(prefix: str, count: int) -> List[str]:
    return [f"{prefix}{i + 1}" for i in range(count)]


def _matrix_names(prefix: str, dim: int) -> List[str]:
    rows, cols = np.tril_indices(dim)
    return [f"{prefix}[{i + 1},{j + 1}]" for i, j in zip(rows, cols)]


# ---------------------------------------------------------------- linear model

@dataclass(frozen=True)
class LinearModelPosterior:
    """Diffuse-prior normal linear model, p(beta, sigma) proportional to 1/sigma."""
    beta_hat: np.ndarray
    s2: float
    dof: int
    xtx_inv: np.ndarray
    xtx: np.ndarray
    X: np.ndarray
    y: np.ndarray
    names: List[str] = field(default_factory=list)
    degenerate_residual: bool = False

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_coef(self) -> int:
        return self.X.shape[1]

    @property
    def rss(self) -> float:
        return self.s2 * self.dof

    @property
    def posterior_mean(self) -> np.ndarray:
        return self.beta_hat

    @property
    def posterior_cov(self) -> np.ndarray:
        if self.dof <= 2:
            raise MomentsUndefined(f"Student-t posterior with {self.dof} dof has no covariance")
        return self.xtx_inv * self.dof * self.s2 / (self.dof - 2)

    def draw_beta(self, n: int, rng: RandomStream) -> np.ndarray:
        return sample_mvt(self.beta_hat, self.xtx_inv * self.s2, self.dof, n, rng)

    def draw_sigma2(self, n: int, rng: RandomStream) -> np.ndarray:
        if self.s2 == 0.0:
            return np.zeros(n)
        return self.s2 / sample_scaled_chisq(self.dof, 1.0, n, rng)

    def draw_joint(self, n: int, rng: RandomStream) -> PosteriorDraws:
        """Draws of (beta, sigma2): sigma2 from its marginal, beta given sigma2."""
        sigma2 = self.draw_sigma2(n, rng)
        factor = psd_factor(self.xtx_inv)
        z = rng.generator.standard_normal((n, self.n_coef))
        beta = self.beta_hat + np.sqrt(sigma2)[:, None] * (z @ factor.T)
        return PosteriorDraws(np.column_stack([beta, sigma2]), self.names + ["sigma2"])

    def draws(self, n: int, rng: RandomStream) -> PosteriorDraws:
        return PosteriorDraws(self.draw_beta(n, rng), self.names)


def fit_linear_model(y: np.ndarray, X: np.ndarray, names: Optional[Sequence[str]] = None) -> LinearModelPosterior:
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    if X.shape[0] != y.size and X.shape[1] == y.size:
        raise InvalidParameter(f"design of shape {X.shape} is transposed; expected {y.size} rows")
    n_obs, n_coef = X.shape
    if n_obs != y.size:
        raise DimensionMismatch(f"{y.size} responses for a design with {n_obs} rows")
    if n_obs <= n_coef + 2:
        raise InsufficientData(f"need more than {n_coef + 2} observations, got {n_obs}")
    check_full_rank(X)

    xtx = X.T @ X
    cho = linalg.cho_factor(xtx, lower=True)
    beta_hat = linalg.cho_solve(cho, X.T @ y)
    xtx_inv = linalg.cho_solve(cho, np.eye(n_coef))
    resid = y - X @ beta_hat
    rss = float(resid @ resid)
    dof = n_obs - n_coef

    degenerate = rss <= 1e-20 * max(float(y @ y), np.finfo(float).tiny)
    if degenerate:
        logger.warning("Residual sum of squares is zero to rounding; posterior collapses to a point mass")
        rss = 0.0

    names = list(names) if names is not None else _default_names("beta", n_coef)
    return LinearModelPosterior(
        beta_hat=beta_hat,
        s2=rss / dof,
        dof=dof,
        xtx_inv=xtx_inv,
        xtx=xtx,
        X=X,
        y=y,
        names=names,
        degenerate_residual=degenerate,
    )


# ---------------------------------------------------------------- probit

def standardizing_map(X: np.ndarray) -> np.ndarray:
    """Matrix M such that X M has centered, unit-variance non-constant columns.

    Centering needs a nonzero constant column; without one the columns are
    only rescaled. X M spans the same space as X.
    """
    spread = X.std(axis=0)
    varying = np.flatnonzero(spread > 0)
    M = np.eye(X.shape[1])
    M[varying, varying] = 1.0 / spread[varying]
    constant = np.flatnonzero((spread == 0) & (X[0] != 0))
    if constant.size:
        c = constant[0]
        M[c, varying] = -X[:, varying].mean(axis=0) / (spread[varying] * X[0, c])
    return M


def probit_gibbs(
    y: np.ndarray,
    X: np.ndarray,
    prior_mean: Optional[np.ndarray] = None,
    prior_cov: Optional[np.ndarray] = None,
    iters: int = 25_000,
    burn_in: Optional[int] = None,
    rng: Optional[RandomStream] = None,
    names: Optional[Sequence[str]] = None,
) -> PosteriorDraws:
    """Data-augmentation Gibbs sampler for the binary probit model.

    Alternates latent utilities y* | beta (truncated normals) and
    beta | y* ~ N(B1 (X'y* + B0^-1 beta0), B1) with B1 = (X'X + B0^-1)^-1.
    The chain runs on a standardized copy of the design, which leaves the
    posterior unchanged but removes the intercept/slope correlation that
    stalls it on uncentered covariates. Alongside each kept beta it records
    the diffuse-prior statistics (X'X)^-1 X'y* and RSS/(N - q) of the same
    latent draw.
    """
    y = np.asarray(y).ravel()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n_obs, n_coef = X.shape
    if y.size != n_obs:
        raise DimensionMismatch(f"{y.size} responses for a design with {n_obs} rows")
    if not np.all(np.isin(y, (0, 1))):
        raise InvalidParameter("probit responses must be 0 or 1")
    if y.min() == y.max():
        raise CompleteSeparation("response contains a single class")
    check_full_rank(X)
    if rng is None:
        rng = RandomStream(seed=0)

    prior_mean = np.zeros(n_coef) if prior_mean is None else np.asarray(prior_mean, dtype=float)
    prior_cov = 1e4 * np.eye(n_coef) if prior_cov is None else np.atleast_2d(np.asarray(prior_cov, dtype=float))
    prior_chol = robust_cholesky(prior_cov)
    prior_precision = linalg.cho_solve((prior_chol, True), np.eye(n_coef))

    burn_in = int(0.2 * iters) if burn_in is None else int(burn_in)
    if iters <= burn_in:
        raise InvalidParameter(f"iterations ({iters}) must exceed burn-in ({burn_in})")

    xtx = X.T @ X
    xtx_cho = linalg.cho_factor(xtx, lower=True)
    # gamma = M^-1 beta; the prior on beta maps to precision M' B0^-1 M
    M = standardizing_map(X)
    Z = X @ M
    post_cov = np.linalg.inv(Z.T @ Z + M.T @ prior_precision @ M)
    post_factor = robust_cholesky(post_cov)
    prior_shift = M.T @ prior_precision @ prior_mean
    positive = y == 1
    resid_dof = n_obs - n_coef

    kept = iters - burn_in
    betas = np.empty((kept, n_coef))
    stat_beta = np.empty((kept, n_coef))
    stat_s2 = np.empty(kept)

    logger.info(f"Running probit Gibbs sampler: N={n_obs}, q={n_coef}, iters={iters}, burn-in={burn_in}")
    gamma = np.zeros(n_coef)
    for g in range(iters):
        linear = Z @ gamma
        magnitude = sample_truncated_normal(np.where(positive, linear, -linear), 1.0, TruncationSide.ABOVE_ZERO, rng)
        latent = np.where(positive, magnitude, -magnitude)
        gamma = post_cov @ (Z.T @ latent + prior_shift) + post_factor @ rng.generator.standard_normal(n_coef)
        if g >= burn_in:
            row = g - burn_in
            betas[row] = M @ gamma
            ls_beta = linalg.cho_solve(xtx_cho, X.T @ latent)
            resid = latent - X @ ls_beta
            stat_beta[row] = ls_beta
            stat_s2[row] = resid @ resid / resid_dof

    names = list(names) if names is not None else _default_names("beta", n_coef)
    stats = IterationStats(beta_hat=stat_beta, s2=stat_s2, xtx=xtx, n_obs=n_obs)
    return PosteriorDraws(betas, names, burn_in=burn_in, per_iteration_stats=stats)


def geweke_z(chain: np.ndarray, first: float = 0.1, last: float = 0.5, batches: int = 20) -> np.ndarray:
    """Geweke convergence z-scores comparing early and late segments of a chain."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    n = chain.shape[0]
    head = chain[: max(int(first * n), batches)]
    tail = chain[n - max(int(last * n), batches):]

    def batch_variance_of_mean(segment: np.ndarray) -> np.ndarray:
        size = segment.shape[0] // batches
        means = segment[: size * batches].reshape(batches, size, -1).mean(axis=1)
        return means.var(axis=0, ddof=1) / batches

    spread = np.sqrt(batch_variance_of_mean(head) + batch_variance_of_mean(tail))
    return (head.mean(axis=0) - tail.mean(axis=0)) / spread


# ---------------------------------------------------------------- mean / covariance

@dataclass(frozen=True)
class MvnMeanCovPosterior:
    mu_hat: np.ndarray
    S_matrix: np.ndarray
    T: int

    @property
    def dim(self) -> int:
        return self.mu_hat.size

    @property
    def sigma_hat(self) -> np.ndarray:
        return self.S_matrix / (self.T - 1)


def fit_mvn_mean_cov(R: np.ndarray) -> MvnMeanCovPosterior:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    T, dim = R.shape
    if T <= dim + 2:
        raise InsufficientData(f"need more than {dim + 2} periods for {dim} assets, got {T}")
    mu_hat = R.mean(axis=0)
    centered = R - mu_hat
    return MvnMeanCovPosterior(mu_hat=mu_hat, S_matrix=centered.T @ centered, T=T)


def _batched_cholesky(matrices: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(matrices)
    except np.linalg.LinAlgError:
        return np.stack([robust_cholesky(m) for m in matrices])


def mean_cov_names(dim: int) -> List[str]:
    return _default_names("mu", dim) + _matrix_names("Sigma", dim)


def mvn_mean_cov_gibbs(R: np.ndarray, iters: int, rng: RandomStream) -> PosteriorDraws:
    """Exact draws of (mu, vech(Sigma)) under the prior |Sigma|^{-(L+1)/2}.

    Sigma | R ~ IW(T - 1, S) and mu | Sigma, R ~ N(mu_hat, Sigma / T); both
    steps are exact so the chain is i.i.d. and needs no burn-in.
    """
    post = fit_mvn_mean_cov(R)
    sigmas = sample_inverse_wishart(post.T - 1, post.S_matrix, iters, rng)
    factors = _batched_cholesky(sigmas)
    z = rng.generator.standard_normal((iters, post.dim))
    mus = post.mu_hat + np.einsum("sij,sj->si", factors, z) / np.sqrt(post.T)
    return PosteriorDraws(np.column_stack([mus, vech(sigmas)]), mean_cov_names(post.dim))


def unpack_mean_cov(draws: PosteriorDraws) -> Tuple[np.ndarray, np.ndarray]:
    """Split mean/covariance draws into mu (S, L) and Sigma (S, L, L)."""
    mus = draws.block("mu")
    return mus, unvech(draws.block("Sigma["), mus.shape[1])


# ---------------------------------------------------------------- multivariate regression

@dataclass(frozen=True)
class MultivariateRegressionPosterior:
    B_hat: np.ndarray  # (k, m)
    S_matrix: np.ndarray  # (m, m)
    xtx_inv: np.ndarray
    xtx: np.ndarray
    N: int
    coef_names: List[str] = field(default_factory=list)

    @property
    def n_regressors(self) -> int:
        return self.B_hat.shape[0]

    @property
    def n_equations(self) -> int:
        return self.B_hat.shape[1]

    @property
    def dof(self) -> int:
        return self.N - self.n_regressors

    @property
    def sigma_hat(self) -> np.ndarray:
        return self.S_matrix / self.dof

    def posterior_moments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of vec(B) (column stacked) under the matrix-t posterior."""
        expected_sigma = self.S_matrix / (self.dof - self.n_equations - 1)
        return self.B_hat.reshape(-1, order="F"), np.kron(expected_sigma, self.xtx_inv)


def fit_multivariate_regression(
    Y: np.ndarray, X: np.ndarray, coef_names: Optional[Sequence[str]] = None
) -> MultivariateRegressionPosterior:
    Y = np.asarray(Y, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, k = X.shape
    m = Y.shape[1]
    if Y.shape[0] != N:
        raise DimensionMismatch(f"{Y.shape[0]} response rows for a design with {N} rows")
    if N <= k + m + 1:
        raise InsufficientData(f"need more than {k + m + 1} observations, got {N}")
    check_full_rank(X)
    xtx = X.T @ X
    cho = linalg.cho_factor(xtx, lower=True)
    B_hat = linalg.cho_solve(cho, X.T @ Y)
    resid = Y - X @ B_hat
    if coef_names is None:
        coef_names = [f"B[{i + 1},{j + 1}]" for j in range(m) for i in range(k)]
    return MultivariateRegressionPosterior(
        B_hat=B_hat,
        S_matrix=resid.T @ resid,
        xtx_inv=linalg.cho_solve(cho, np.eye(k)),
        xtx=xtx,
        N=N,
        coef_names=list(coef_names),
    )


def multivariate_regression_draws(
    post: MultivariateRegressionPosterior, iters: int, rng: RandomStream
) -> PosteriorDraws:
    k, m = post.B_hat.shape
    try:
        sigmas = sample_inverse_wishart(post.dof, post.S_matrix, iters, rng)
    except NonPositiveDefinite:
        raise SingularDesign("residual cross-product matrix is singular")
    sigma_factors = _batched_cholesky(sigmas)
    x_factor = robust_cholesky(post.xtx_inv)
    z = rng.generator.standard_normal((iters, k, m))
    # B = B_hat + Lx Z L_sigma' has vec(B) ~ N(vec(B_hat), Sigma kron (X'X)^-1)
    coefs = post.B_hat + np.einsum("ij,sjl,skl->sik", x_factor, z, sigma_factors)
    vec_coefs = np.swapaxes(coefs, 1, 2).reshape(iters, k * m)
    names = post.coef_names + _matrix_names("Sigma", m)
    return PosteriorDraws(np.column_stack([vec_coefs, vech(sigmas)]), names)


def multivariate_regression_gibbs(
    Y: np.ndarray,
    X: np.ndarray,
    iters: int,
    rng: RandomStream,
    coef_names: Optional[Sequence[str]] = None,
) -> PosteriorDraws:
    """Exact draws of (vec(B), vech(Sigma)) for Y = X B + U under |Sigma|^{-(m+1)/2}.

    Sigma | Y ~ IW(N - k, S) and vec(B) | Sigma ~ N(vec(B_hat), Sigma kron (X'X)^-1).
    """
    return multivariate_regression_draws(fit_multivariate_regression(Y, X, coef_names), iters, rng)


def unpack_regression(draws: PosteriorDraws, n_regressors: int, n_equations: int) -> Tuple[np.ndarray, np.ndarray]:
    """Split regression draws into B (S, k, m) and Sigma (S, m, m)."""
    vec_coefs = draws.draws[:, : n_regressors * n_equations]
    coefs = np.swapaxes(vec_coefs.reshape(-1, n_equations, n_regressors), 1, 2)
    return coefs, unvech(draws.draws[:, n_regressors * n_equations:], n_equations)
