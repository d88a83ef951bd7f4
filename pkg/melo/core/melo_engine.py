"""Minimum expected loss estimation from posterior draws.

A rational target has components g_k = l_k / m_k. Under the weighted
quadratic loss with weights h_k the estimator is

    omega_k = sum_s h_k(theta_s) g_k(theta_s) / sum_s h_k(theta_s)

and with the default h_k = m_k**2 the product h_k g_k equals l_k m_k, so
draws sitting on a singularity (m_k = 0) carry zero weight and never
produce a NaN.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.special import ndtr

from melo.core.config import settings
from melo.core.distributions import unvech
from melo.core.exceptions import (
    DegenerateWeights,
    DimensionMismatch,
    InvalidParameter,
    MomentsUndefined,
    NonFiniteTarget,
    NonPositiveDefinite,
    SamplerQuality,
)
from melo.core.posteriors import LinearModelPosterior, PosteriorDraws, unpack_mean_cov

logger = logging.getLogger(__name__)

DrawsLike = Union[PosteriorDraws, np.ndarray]
RatioFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]
WeightFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RationalTarget:
    """Vector target g(theta) = l(theta) / m(theta) with loss weights h(theta).

    ``ratio`` maps an (S, L) draw matrix to the pair (l, m), each (S, K).
    ``weight`` maps the draw matrix to h (S, K); when omitted h = m**2.
    """
    labels: List[str]
    ratio: RatioFn
    weight: Optional[WeightFn] = None

    @property
    def dim(self) -> int:
        return len(self.labels)

    def weighted_terms(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return (h * g, h) per draw and component."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        numerator, denominator = (np.asarray(a, dtype=float).reshape(theta.shape[0], -1) for a in self.ratio(theta))
        if numerator.shape != denominator.shape or numerator.shape[1] != self.dim:
            raise DimensionMismatch(f"target produced shapes {numerator.shape} and {denominator.shape} for {self.dim} labels")
        if self.weight is None:
            return numerator * denominator, denominator ** 2
        h = np.asarray(self.weight(theta), dtype=float).reshape(numerator.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            hg = np.where(h == 0.0, 0.0, h * numerator / denominator)
        return hg, h

    def evaluate(self, theta: np.ndarray) -> np.ndarray:
        """g at a single parameter vector."""
        numerator, denominator = self.ratio(np.atleast_2d(np.asarray(theta, dtype=float)))
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.asarray(numerator, dtype=float) / np.asarray(denominator, dtype=float)).ravel()


@dataclass
class MeloEstimate:
    omega_star: np.ndarray
    weights: np.ndarray  # (K, S), rows sum to one
    ess: np.ndarray
    labels: List[str]
    method: str = "sampled"
    freq_cov: Optional[np.ndarray] = None
    skipped_draws: int = 0
    implied_probability: Optional[np.ndarray] = None

    @property
    def value(self) -> Union[float, np.ndarray]:
        return float(self.omega_star[0]) if self.omega_star.size == 1 else self.omega_star

    @property
    def std_errors(self) -> Optional[np.ndarray]:
        if self.freq_cov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.freq_cov), 0.0, None))


def _draw_matrix(draws: DrawsLike) -> np.ndarray:
    if isinstance(draws, PosteriorDraws):
        return draws.draws
    return np.atleast_2d(np.asarray(draws, dtype=float))


def weighted_terms(draws: DrawsLike, target: RationalTarget) -> Tuple[np.ndarray, np.ndarray]:
    """Validated (h*g, h) terms shared by the estimator and its gradient."""
    hg, h = target.weighted_terms(_draw_matrix(draws))
    if not (np.all(np.isfinite(hg)) and np.all(np.isfinite(h))):
        raise NonFiniteTarget(f"non-finite weighted target for {target.labels}")
    if np.any(h < 0):
        raise InvalidParameter("loss weights must be non-negative")
    return hg, h


def melo_from_draws(draws: DrawsLike, target: RationalTarget) -> MeloEstimate:
    hg, h = weighted_terms(draws, target)
    return melo_from_terms(hg, h, target.labels)


def melo_from_terms(hg: np.ndarray, h: np.ndarray, labels: Sequence[str]) -> MeloEstimate:
    """Sum(h g) / Sum(h) per component from validated weighted terms."""
    n_draws, dim = h.shape
    if n_draws < 100:
        logger.warning(f"MELO computed from only {n_draws} draws")

    totals = np.array([math.fsum(h[:, k]) for k in range(dim)])
    if np.any(totals <= 0):
        degenerate = [labels[k] for k in np.flatnonzero(totals <= 0)]
        raise DegenerateWeights(f"all loss weights are zero for {degenerate}")

    omega = np.array([math.fsum(hg[:, k]) for k in range(dim)]) / totals
    weights = (h / totals).T
    ess = 1.0 / np.sum(weights ** 2, axis=1)
    return MeloEstimate(omega_star=omega, weights=weights, ess=ess, labels=list(labels))


# ---------------------------------------------------------------- targets

def coordinate_target(indices: Sequence[int], labels: Optional[Sequence[str]] = None) -> RationalTarget:
    """g = theta[indices] with constant weights; the MELO is the posterior mean."""
    indices = list(indices)

    def ratio(theta):
        return theta[:, indices], np.ones((theta.shape[0], len(indices)))

    return RationalTarget(
        labels=list(labels) if labels is not None else [f"theta{i + 1}" for i in indices],
        ratio=ratio,
        weight=lambda theta: np.ones((theta.shape[0], len(indices))),
    )


def optimal_input_target(w_over_p: float, coef_index: Tuple[int, int] = (0, 1)) -> RationalTarget:
    """x* = (w/p - b1) / (2 b2) for a quadratic production function."""
    i, j = coef_index

    def ratio(theta):
        return w_over_p - theta[:, i], 2.0 * theta[:, j]

    return RationalTarget(labels=["x_opt"], ratio=ratio)


def _covariate_rows(x: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def covariate_label(row: np.ndarray) -> str:
    return "x=(" + ",".join(f"{v:g}" for v in row) + ")"


def odds_target(x: np.ndarray) -> RationalTarget:
    """Probit odds Phi(x'b) / (1 - Phi(x'b)) at each covariate row of ``x``."""
    rows = _covariate_rows(x)

    def ratio(theta):
        index = theta @ rows.T
        return ndtr(index), ndtr(-index)

    return RationalTarget(labels=[covariate_label(r) for r in rows], ratio=ratio)


def probability_target(x: np.ndarray) -> RationalTarget:
    rows = _covariate_rows(x)

    def ratio(theta):
        index = theta @ rows.T
        return ndtr(index), np.ones_like(index)

    return RationalTarget(
        labels=[covariate_label(r) for r in rows],
        ratio=ratio,
        weight=lambda theta: np.ones((theta.shape[0], rows.shape[0])),
    )


def structural_target(reduced_form_index: Tuple[int, int, int, int]) -> RationalTarget:
    """Structural slopes from reduced-form draws of (pi1, pi2, gamma1, gamma2).

    pi are the instrument slopes of the quantity equation and gamma those of
    the price equation; the outputs are (beta1, beta2, alpha1, alpha2).
    """
    a, b, c, d = reduced_form_index

    def ratio(theta):
        pi1, pi2, gamma1, gamma2 = theta[:, a], theta[:, b], theta[:, c], theta[:, d]
        numerator = np.column_stack([pi2, pi1 * gamma2 - gamma1 * pi2, pi1, pi2 * gamma1 - gamma2 * pi1])
        denominator = np.column_stack([gamma2, gamma2, gamma1, gamma1])
        return numerator, denominator

    return RationalTarget(labels=["beta1", "beta2", "alpha1", "alpha2"], ratio=ratio)


def _tangency_solutions(mus: np.ndarray, sigmas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sigma^-1 mu per draw by Cholesky solves; failed draws are masked out."""
    n_draws, dim = mus.shape
    try:
        factors = np.linalg.cholesky(sigmas)
        half = np.linalg.solve(factors, mus[..., None])
        solved = np.linalg.solve(np.swapaxes(factors, 1, 2), half)[..., 0]
        return solved, np.all(np.isfinite(solved), axis=1)
    except np.linalg.LinAlgError:
        pass
    solved = np.full((n_draws, dim), np.nan)
    ok = np.zeros(n_draws, dtype=bool)
    for s in range(n_draws):
        try:
            solved[s] = linalg.cho_solve(linalg.cho_factor(sigmas[s], lower=True), mus[s])
            ok[s] = True
        except (linalg.LinAlgError, ValueError):
            continue
    return solved, ok


def tangency_target(dim: int) -> RationalTarget:
    """Tangency weights Sigma^-1 mu / (1' Sigma^-1 mu) over (mu, vech Sigma) draws."""
    def ratio(theta):
        mus = theta[:, :dim]
        sigmas = unvech(theta[:, dim:], dim)
        solved, ok = _tangency_solutions(mus, sigmas)
        if not ok.all():
            raise NonPositiveDefinite(f"{int((~ok).sum())} covariance draws are not positive definite")
        scale = solved.sum(axis=1, keepdims=True)
        return solved, np.broadcast_to(scale, solved.shape)

    return RationalTarget(labels=[f"w{i + 1}" for i in range(dim)], ratio=ratio)


# ---------------------------------------------------------------- problem estimators

def melo_optimal_input_closed_form(
    post: LinearModelPosterior, w_over_p: float, coef_index: Tuple[int, int] = (0, 1)
) -> float:
    """[(w/p) E(b2) - E(b1 b2)] / (2 E(b2^2)) from the Student-t posterior moments."""
    if post.dof <= 2:
        raise MomentsUndefined(f"posterior second moments need more than 2 dof, got {post.dof}")
    i, j = coef_index
    mean = post.posterior_mean
    cov = post.posterior_cov
    cross = cov[i, j] + mean[i] * mean[j]
    square = cov[j, j] + mean[j] ** 2
    if square <= 0:
        raise DegenerateWeights("second moment of the quadratic coefficient is zero")
    return float((w_over_p * mean[j] - cross) / (2.0 * square))


def melo_structural_closed_form(mean: np.ndarray, cov: Optional[np.ndarray] = None) -> np.ndarray:
    """Closed-form structural MELO from moments of (pi1, pi2, gamma1, gamma2).

    Third moments come from symmetry of the elliptical posterior:
    E[xyz] = mx my mz + mx C_yz + my C_xz + mz C_xy. With zero covariance
    the result is the indirect least squares map at the mean.
    """
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.zeros((4, 4)) if cov is None else np.asarray(cov, dtype=float)
    if mean.size != 4 or cov.shape != (4, 4):
        raise DimensionMismatch("structural moments need a 4-vector mean and 4x4 covariance")

    def second(i, j):
        return cov[i, j] + mean[i] * mean[j]

    def third(i, j, k):
        return (
            mean[i] * mean[j] * mean[k]
            + mean[i] * cov[j, k]
            + mean[j] * cov[i, k]
            + mean[k] * cov[i, j]
        )

    PI1, PI2, G1, G2 = range(4)
    gamma2_sq, gamma1_sq = second(G2, G2), second(G1, G1)
    if gamma1_sq <= 0 or gamma2_sq <= 0:
        raise DegenerateWeights("reduced-form price slopes have zero second moment")
    return np.array([
        second(PI2, G2) / gamma2_sq,
        (third(PI1, G2, G2) - third(G1, G2, PI2)) / gamma2_sq,
        second(PI1, G1) / gamma1_sq,
        (third(PI2, G1, G1) - third(G1, G2, PI1)) / gamma1_sq,
    ])


def melo_tangency_portfolio(draws: PosteriorDraws) -> MeloEstimate:
    """MELO tangency weights E[(1'S^-1 mu) S^-1 mu] / E[(1'S^-1 mu)^2].

    Covariance draws that fail the Cholesky solve are skipped; more than
    ``portfolio_skip_tolerance`` of them raises SamplerQuality.
    """
    mus, sigmas = unpack_mean_cov(draws)
    solved, ok = _tangency_solutions(mus, sigmas)
    skipped = int((~ok).sum())
    if skipped > settings.portfolio_skip_tolerance * draws.n_draws:
        raise SamplerQuality(f"{skipped} of {draws.n_draws} covariance draws failed to factor")
    if skipped:
        logger.warning(f"Skipped {skipped} covariance draws that are not positive definite")
        solved = solved[ok]
    # h g = (1'S^-1 mu) S^-1 mu and h = (1'S^-1 mu)^2, from the same solve
    scale = solved.sum(axis=1, keepdims=True)
    hg, h = solved * scale, np.broadcast_to(scale ** 2, solved.shape)
    if not (np.all(np.isfinite(hg)) and np.all(np.isfinite(h))):
        raise NonFiniteTarget("non-finite weighted tangency target")
    estimate = melo_from_terms(hg, h, tangency_target(mus.shape[1]).labels)
    estimate.skipped_draws = skipped
    return estimate


def melo_odds_ratio(draws: DrawsLike, x: np.ndarray) -> MeloEstimate:
    estimate = melo_from_draws(draws, odds_target(x))
    estimate.implied_probability = estimate.omega_star / (1.0 + estimate.omega_star)
    return estimate


def melo_probability(draws: DrawsLike, x: np.ndarray) -> MeloEstimate:
    return melo_from_draws(draws, probability_target(x))
