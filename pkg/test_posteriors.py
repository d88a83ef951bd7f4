import numpy as np
import pytest

from melo.core.datasets import DEFAULT_SCHEMAS, dataset_for_problem, load_csv_dataset
from melo.core.exceptions import (
    CompleteSeparation,
    DimensionMismatch,
    InsufficientData,
    InvalidParameter,
    MomentsUndefined,
    SingularDesign,
)
from melo.core.posteriors import (
    LinearModelPosterior,
    PosteriorDraws,
    fit_linear_model,
    fit_multivariate_regression,
    fit_mvn_mean_cov,
    geweke_z,
    multivariate_regression_gibbs,
    mvn_mean_cov_gibbs,
    probit_gibbs,
    standardizing_map,
    unpack_mean_cov,
    unpack_regression,
)
from melo.core.problems import gen_odds_ratio
from melo.models.schemas import ProblemName


def test_posterior_draws_validation():
    with pytest.raises(InvalidParameter):
        PosteriorDraws(np.array([[1.0, np.nan]]), ["a", "b"])
    with pytest.raises(InvalidParameter):
        PosteriorDraws(np.zeros((3, 2)), ["a", "a"])
    with pytest.raises(DimensionMismatch):
        PosteriorDraws(np.zeros((3, 2)), ["a"])


def test_posterior_draws_accessors():
    draws = PosteriorDraws(np.arange(6.0).reshape(3, 2), ["mu1", "Sigma[1,1]"])
    np.testing.assert_array_equal(draws.column("Sigma[1,1]"), [1.0, 3.0, 5.0])
    assert draws.n_draws == 3 and draws.dim == 2
    assert draws.subset(np.array([True, False, True])).n_draws == 2


def test_perfect_fit_collapses_to_point_mass():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    post = fit_linear_model(X @ np.array([2.0, -0.5]), X)
    np.testing.assert_allclose(post.beta_hat, [2.0, -0.5], atol=1e-10)
    assert post.degenerate_residual
    assert post.s2 == 0.0


def test_too_few_observations():
    X = np.column_stack([np.ones(4), np.arange(4.0)])
    with pytest.raises(InsufficientData):
        fit_linear_model(np.arange(4.0), X)


def test_rank_deficient_design():
    z = np.arange(20.0)
    with pytest.raises(SingularDesign):
        fit_linear_model(z, np.column_stack([np.ones(20), z, 2 * z]))


def test_student_t_covariance(linear_posterior, rng):
    draws = linear_posterior.draw_beta(200_000, rng)
    np.testing.assert_allclose(np.cov(draws, rowvar=False), linear_posterior.posterior_cov, rtol=0.05, atol=1e-4)
    np.testing.assert_allclose(draws.mean(axis=0), linear_posterior.beta_hat, atol=0.01)


def test_joint_draws_carry_sigma2(linear_posterior, rng):
    draws = linear_posterior.draw_joint(100_000, rng)
    assert draws.names == ["beta1", "beta2", "sigma2"]
    dof = linear_posterior.dof
    expected = dof * linear_posterior.s2 / (dof - 2)
    assert draws.column("sigma2").mean() == pytest.approx(expected, rel=0.02)


def test_posterior_covariance_undefined_for_small_dof(linear_posterior):
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
        post.posterior_cov


def test_probit_single_class_rejected(rng):
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    with pytest.raises(CompleteSeparation):
        probit_gibbs(np.ones(10), X, iters=100, rng=rng)


def test_probit_posterior_covers_truth(rng):
    data, instance = gen_odds_ratio(1000, rng.spawn(0))
    draws = probit_gibbs(data.response, data.design, iters=3000, burn_in=500, rng=rng.spawn(1))
    assert draws.n_draws == 2500
    truth = instance.true_parameters
    sd = draws.draws.std(axis=0)
    assert np.all(np.abs(draws.mean() - truth) < 4 * sd)
    stats = draws.per_iteration_stats
    assert stats.beta_hat.shape == (2500, 3)
    assert np.all(stats.s2 > 0)


def test_probit_dogmatic_prior(rng):
    gen = rng.spawn(5).generator
    X = np.column_stack([np.ones(200), gen.standard_normal(200)])
    y = (gen.random(200) < 0.5).astype(int)
    prior_mean = np.array([0.3, -0.2])
    draws = probit_gibbs(y, X, prior_mean=prior_mean, prior_cov=1e-8 * np.eye(2), iters=600, burn_in=100, rng=rng)
    np.testing.assert_allclose(draws.mean(), prior_mean, atol=1e-3)


def test_geweke_on_iid_chain(rng):
    chain = rng.generator.standard_normal((20_000, 2))
    assert np.all(np.abs(geweke_z(chain)) < 4)


def test_mean_cov_needs_enough_periods(rng):
    with pytest.raises(InsufficientData):
        fit_mvn_mean_cov(rng.generator.standard_normal((4, 2)))


def test_mean_cov_posterior_moments(rng):
    R = rng.spawn(1).generator.standard_normal((50, 2)) @ np.array([[1.0, 0.0], [0.5, 0.8]])
    post = fit_mvn_mean_cov(R)
    draws = mvn_mean_cov_gibbs(R, 20_000, rng)
    mus, sigmas = unpack_mean_cov(draws)
    assert mus.shape == (20_000, 2) and sigmas.shape == (20_000, 2, 2)
    expected = post.S_matrix / (post.T - post.dim - 2)
    scale = np.sqrt(np.outer(np.diag(expected), np.diag(expected)))
    assert np.all(np.abs(sigmas.mean(axis=0) - expected) < 0.03 * scale)
    mc_se = np.sqrt(np.diag(expected) / post.T / 20_000)
    assert np.all(np.abs(mus.mean(axis=0) - post.mu_hat) < 5 * mc_se)


def test_multivariate_regression_exact_fit():
    X = np.column_stack([np.ones(12), np.arange(12.0), np.arange(12.0) ** 2])
    B = np.array([[1.0, -1.0], [0.5, 2.0], [0.1, 0.0]])
    post = fit_multivariate_regression(X @ B, X)
    np.testing.assert_allclose(post.B_hat, B, atol=1e-8)
    assert post.dof == 9


def test_single_equation_matches_linear_model(linear_data, rng):
    y, X = linear_data
    linear = fit_linear_model(y, X)
    n_draws = 100_000
    draws = multivariate_regression_gibbs(y, X, n_draws, rng)
    coefs, sigmas = unpack_regression(draws, 2, 1)
    expected = linear.posterior_cov
    variances = np.diag(expected)
    # normal-theory sampling sd of each sample covariance entry
    mc_sd = np.sqrt((np.outer(variances, variances) + expected ** 2) / n_draws)
    assert np.all(np.abs(np.cov(coefs[:, :, 0], rowvar=False) - expected) < 5 * mc_sd + 0.02 * np.abs(expected))
    assert sigmas.mean() == pytest.approx(linear.s2 * linear.dof / (linear.dof - 2), rel=0.02)


def test_unpack_regression_layout(rng):
    gen = rng.spawn(2).generator
    X = np.column_stack([np.ones(40), gen.standard_normal(40)])
    Y = X @ np.array([[1.0, 3.0], [2.0, -1.0]]) + gen.standard_normal((40, 2))
    post = fit_multivariate_regression(Y, X)
    draws = multivariate_regression_gibbs(Y, X, 20_000, rng)
    assert draws.names[:4] == ["B[1,1]", "B[2,1]", "B[1,2]", "B[2,2]"]
    coefs, _ = unpack_regression(draws, 2, 2)
    np.testing.assert_allclose(coefs.mean(axis=0), post.B_hat, atol=0.02)


def test_linear_model_rejects_transposed_design(linear_data):
    y, X = linear_data
    with pytest.raises(InvalidParameter):
        fit_linear_model(y, X.T)


def test_linear_model_accepts_single_column():
    x = np.arange(1.0, 11.0)
    post = fit_linear_model(3.0 * x, x)
    np.testing.assert_allclose(post.beta_hat, [3.0])


def test_standardizing_map_centers_and_scales():
    gen = np.random.default_rng(3)
    X = np.column_stack([np.ones(30), gen.normal(70.0, 7.0, 30), gen.normal(-5.0, 0.1, 30)])
    Z = X @ standardizing_map(X)
    np.testing.assert_allclose(Z[:, 0], 1.0)
    np.testing.assert_allclose(Z[:, 1:].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Z[:, 1:].std(axis=0), 1.0)


def test_standardizing_map_without_intercept_only_rescales():
    X = np.column_stack([np.arange(1.0, 9.0), np.arange(1.0, 9.0) ** 2])
    M = standardizing_map(X)
    np.testing.assert_allclose(M, np.diag(1.0 / X.std(axis=0)))


def test_probit_chain_mixes_on_uncentered_covariate(challenger_path, rng):
    schema = DEFAULT_SCHEMAS[ProblemName.ODDS_RATIO]
    data = dataset_for_problem(ProblemName.ODDS_RATIO, load_csv_dataset(challenger_path, schema), schema)
    chains = [
        probit_gibbs(data.response, data.design, iters=6000, burn_in=1000, rng=rng.spawn(seed))
        for seed in (1, 2)
    ]
    sd = chains[0].draws.std(axis=0)
    assert np.all(np.abs(chains[0].mean() - chains[1].mean()) < 0.25 * sd)
