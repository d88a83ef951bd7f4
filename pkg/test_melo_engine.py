import numpy as np
import pytest
from scipy.special import ndtr, ndtri

from melo.core import melo_engine
from melo.core.distributions import RandomStream, vech
from melo.core.exceptions import (
    DegenerateWeights,
    MomentsUndefined,
    NonFiniteTarget,
    SamplerQuality,
)
from melo.core.melo_engine import (
    RationalTarget,
    coordinate_target,
    melo_from_draws,
    melo_odds_ratio,
    melo_optimal_input_closed_form,
    melo_probability,
    melo_structural_closed_form,
    melo_tangency_portfolio,
    optimal_input_target,
    structural_target,
    tangency_target,
)
from melo.core.posteriors import (
    LinearModelPosterior,
    PosteriorDraws,
    fit_linear_model,
    fit_multivariate_regression,
    mean_cov_names,
    multivariate_regression_draws,
    mvn_mean_cov_gibbs,
)
from melo.core.problems import REDUCED_FORM_SLOPES, gen_optimal_input, gen_portfolio, gen_structural


def reciprocal_target():
    return RationalTarget(labels=["inv"], ratio=lambda theta: (np.ones_like(theta[:, 0]), theta[:, 0]))


def test_reciprocal_hand_example():
    estimate = melo_from_draws(np.array([[1.0], [2.0], [4.0]]), reciprocal_target())
    assert estimate.value == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_singular_draw_contributes_nothing():
    estimate = melo_from_draws(np.array([[1.0], [2.0], [4.0], [0.0]]), reciprocal_target())
    assert estimate.value == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert estimate.weights[0, 3] == 0.0


def test_all_singular_draws_raise():
    with pytest.raises(DegenerateWeights):
        melo_from_draws(np.zeros((5, 1)), reciprocal_target())


def test_non_finite_target_raises():
    target = RationalTarget(labels=["bad"], ratio=lambda theta: (np.full(theta.shape[0], np.inf), theta[:, 0]))
    with pytest.raises(NonFiniteTarget):
        melo_from_draws(np.ones((4, 1)), target)


def test_constant_weights_give_posterior_mean(rng):
    draws = rng.generator.standard_normal((500, 3))
    estimate = melo_from_draws(draws, coordinate_target([0, 2]))
    np.testing.assert_allclose(estimate.omega_star, draws.mean(axis=0)[[0, 2]], atol=1e-12)
    np.testing.assert_allclose(estimate.weights.sum(axis=1), 1.0)
    np.testing.assert_allclose(estimate.ess, 500.0)


def test_point_mass_returns_target_value():
    draws = np.tile([3.0, -0.5], (200, 1))
    estimate = melo_from_draws(draws, optimal_input_target(0.75))
    assert estimate.value == pytest.approx((0.75 - 3.0) / (2 * -0.5))


def test_even_odds():
    estimate = melo_odds_ratio(np.zeros((200, 2)), np.array([1.0, 1.0]))
    assert estimate.value == pytest.approx(1.0)
    np.testing.assert_allclose(estimate.implied_probability, [0.5])


def test_odds_two_point_posterior():
    draws = np.array([[ndtri(0.2)], [ndtri(0.8)]])
    estimate = melo_odds_ratio(draws, np.array([1.0]))
    assert estimate.value == pytest.approx(0.32 / 0.68, abs=1e-9)


def test_odds_labels_per_covariate_row():
    estimate = melo_odds_ratio(np.zeros((150, 2)), np.array([[1.0, 45.0], [1.0, 69.56]]))
    assert estimate.labels == ["x=(1,45)", "x=(1,69.56)"]


def test_probability_symmetric_posterior():
    draws = np.array([[1.3], [-1.3]] * 100)
    assert melo_probability(draws, np.array([1.0])).value == pytest.approx(0.5, abs=1e-12)


def test_probability_point_mass():
    beta = np.array([0.4, -0.1])
    x = np.array([1.0, 2.0])
    estimate = melo_probability(np.tile(beta, (120, 1)), x)
    assert estimate.value == pytest.approx(ndtr(0.2))


def test_optimal_input_closed_form_at_zero_variance():
    x = np.linspace(0.0, 10.0, 12)
    X = np.column_stack([x, x ** 2])
    post = fit_linear_model(X @ np.array([1.5, -0.002]), X)
    assert melo_optimal_input_closed_form(post, 0.75) == pytest.approx(187.5)


def test_optimal_input_closed_form_needs_moments(linear_posterior):
    post = LinearModelPosterior(
        beta_hat=linear_posterior.beta_hat,
        s2=1.0,
        dof=2,
        xtx_inv=linear_posterior.xtx_inv,
        xtx=linear_posterior.xtx,
        X=linear_posterior.X,
        y=linear_posterior.y,
    )
    with pytest.raises(MomentsUndefined):
        melo_optimal_input_closed_form(post, 0.75)


def test_optimal_input_closed_form_matches_sampling():
    rng = RandomStream(seed=3)
    data, _ = gen_optimal_input(100, 1.0, rng.spawn(0))
    post = fit_linear_model(data.response, data.design)
    sampled = melo_from_draws(post.draws(100_000, rng.spawn(1)), optimal_input_target(0.75))
    closed = melo_optimal_input_closed_form(post, 0.75)
    assert sampled.value == pytest.approx(closed, rel=0.005)


def test_structural_point_mass_recovers_truth():
    result = melo_structural_closed_form(np.array([0.9, -0.4, 0.75, 0.5]))
    np.testing.assert_allclose(result, [-0.8, 1.5, 1.2, -1.0], atol=1e-12)


def test_structural_shrinks_with_price_slope_uncertainty():
    mean = np.array([0.9, -0.4, 0.75, 0.5])
    magnitudes = []
    for variance in (0.0, 0.01, 0.1, 1.0):
        cov = np.zeros((4, 4))
        cov[3, 3] = variance
        magnitudes.append(abs(melo_structural_closed_form(mean, cov)[0]))
    assert all(a > b for a, b in zip(magnitudes, magnitudes[1:]))


def test_structural_closed_form_matches_sampling():
    rng = RandomStream(seed=4)
    data, instance = gen_structural(200, 1.0, rng.spawn(0))
    post = fit_multivariate_regression(data.response, data.design)
    draws = multivariate_regression_draws(post, 50_000, rng.spawn(1))
    sampled = melo_from_draws(draws, structural_target(REDUCED_FORM_SLOPES)).omega_star
    mean, cov = post.posterior_moments()
    slopes = list(REDUCED_FORM_SLOPES)
    closed = melo_structural_closed_form(mean[slopes], cov[np.ix_(slopes, slopes)])
    np.testing.assert_allclose(sampled, closed, rtol=0.01)


def test_tangency_point_mass():
    row = np.concatenate([[0.1, 0.1], vech(np.eye(2))])
    draws = PosteriorDraws(np.tile(row, (150, 1)), mean_cov_names(2))
    np.testing.assert_allclose(melo_tangency_portfolio(draws).omega_star, [0.5, 0.5])


def test_tangency_weights_sum_to_one(rng):
    data, _ = gen_portfolio(3, 60, rng.spawn(0))
    draws = mvn_mean_cov_gibbs(data.response, 5000, rng.spawn(1))
    estimate = melo_tangency_portfolio(draws)
    assert estimate.omega_star.sum() == pytest.approx(1.0)
    assert estimate.skipped_draws == 0


def test_tangency_solves_each_draw_once(rng, monkeypatch):
    data, _ = gen_portfolio(3, 60, rng.spawn(0))
    draws = mvn_mean_cov_gibbs(data.response, 2000, rng.spawn(1))
    calls = []
    solve = melo_engine._tangency_solutions

    def counting(mus, sigmas):
        calls.append(mus.shape[0])
        return solve(mus, sigmas)

    monkeypatch.setattr(melo_engine, "_tangency_solutions", counting)
    estimate = melo_tangency_portfolio(draws)
    assert calls == [2000]
    monkeypatch.undo()
    generic = melo_from_draws(draws, tangency_target(3))
    np.testing.assert_allclose(estimate.omega_star, generic.omega_star, rtol=1e-12)


def _with_broken_covariances(broken: int, total: int = 200) -> PosteriorDraws:
    good = np.concatenate([[0.1, 0.2], vech(np.array([[1.0, 0.2], [0.2, 1.0]]))])
    bad = np.concatenate([[0.1, 0.2], vech(np.array([[1.0, 2.0], [2.0, 1.0]]))])
    rows = np.vstack([np.tile(good, (total - broken, 1)), np.tile(bad, (broken, 1))])
    return PosteriorDraws(rows, mean_cov_names(2))


def test_tangency_skips_few_failed_draws():
    estimate = melo_tangency_portfolio(_with_broken_covariances(1))
    assert estimate.skipped_draws == 1
    assert estimate.omega_star.sum() == pytest.approx(1.0)


def test_tangency_rejects_many_failed_draws():
    with pytest.raises(SamplerQuality):
        melo_tangency_portfolio(_with_broken_covariances(5))
