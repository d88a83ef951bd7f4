import numpy as np
import pytest

from melo.core.distributions import (
    RandomStream,
    TruncationSide,
    psd_factor,
    robust_cholesky,
    sample_inverse_wishart,
    sample_mvn,
    sample_mvt,
    sample_scaled_chisq,
    sample_truncated_normal,
    unvech,
    vech,
)
from melo.core.exceptions import DimensionMismatch, InvalidParameter, NonPositiveDefinite


def test_same_stream_reproduces_draws():
    a = RandomStream(seed=7, stream_id=3).generator.random(5)
    b = RandomStream(seed=7, stream_id=3).generator.random(5)
    np.testing.assert_array_equal(a, b)


def test_distinct_streams_differ():
    a = RandomStream.for_replication(7, replication=0).generator.random(5)
    b = RandomStream.for_replication(7, replication=1).generator.random(5)
    assert not np.allclose(a, b)


def test_cell_stream_is_separate_from_replications():
    cell = RandomStream.for_cell(7, config=2).generator.random(5)
    np.testing.assert_array_equal(cell, RandomStream.for_cell(7, config=2).generator.random(5))
    assert not np.allclose(cell, RandomStream.for_cell(7, config=3).generator.random(5))
    assert not np.allclose(cell, RandomStream.for_replication(7, replication=0, config=2).generator.random(5))


def test_spawn_is_deterministic(rng):
    np.testing.assert_array_equal(rng.spawn(4).generator.random(3), RandomStream(seed=12345).spawn(4).generator.random(3))


def test_mvn_zero_covariance_returns_mean(rng):
    draws = sample_mvn(np.array([1.0, -2.0]), np.zeros((2, 2)), 10, rng)
    np.testing.assert_array_equal(draws, np.tile([1.0, -2.0], (10, 1)))


def test_mvn_empirical_covariance(rng):
    cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    draws = sample_mvn(np.array([1.0, 2.0]), cov, 200_000, rng)
    np.testing.assert_allclose(np.cov(draws, rowvar=False), cov, rtol=0.03)
    np.testing.assert_allclose(draws.mean(axis=0), [1.0, 2.0], atol=0.02)


def test_mvn_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        sample_mvn(np.zeros(3), np.eye(2), 5, rng)


def test_mvt_variance_formula(rng):
    draws = sample_mvt(np.zeros(1), np.eye(1), 5, 400_000, rng)
    assert draws.var() == pytest.approx(5.0 / 3.0, rel=0.03)


def test_mvt_gaussian_limit(rng):
    scale = np.array([[1.0, 0.5], [0.5, 2.0]])
    draws = sample_mvt(np.zeros(2), scale, 1e6, 200_000, rng)
    np.testing.assert_allclose(np.cov(draws, rowvar=False), scale, rtol=0.03, atol=0.01)


def test_mvt_median_is_location(rng):
    draws = sample_mvt(np.array([3.0, 3.0]), np.eye(2), 4, 50_000, rng)
    np.testing.assert_allclose(np.median(draws, axis=0), [3.0, 3.0], atol=0.03)


def test_mvt_rejects_nonpositive_dof(rng):
    with pytest.raises(InvalidParameter):
        sample_mvt(np.zeros(1), np.eye(1), 0, 10, rng)


def test_inverse_wishart_scalar_mean(rng):
    draws = sample_inverse_wishart(10, np.array([[2.0]]), 100_000, rng)
    assert draws.shape == (100_000, 1, 1)
    assert draws.mean() == pytest.approx(2.0 / 8.0, rel=0.03)


def test_inverse_wishart_matrix_mean(rng):
    draws = sample_inverse_wishart(10, np.eye(2), 50_000, rng)
    mean = draws.mean(axis=0)
    np.testing.assert_allclose(np.diag(mean), [1 / 7, 1 / 7], rtol=0.05)
    assert abs(mean[0, 1]) < 0.01
    np.linalg.cholesky(draws)


def test_inverse_wishart_rejects_small_dof(rng):
    with pytest.raises(InvalidParameter):
        sample_inverse_wishart(1, np.eye(3), 5, rng)


def test_truncated_normal_half_normal_mean(rng):
    draws = sample_truncated_normal(np.zeros(1_000_000), 1.0, TruncationSide.ABOVE_ZERO, rng)
    assert np.all(draws > 0)
    assert draws.mean() == pytest.approx(np.sqrt(2 / np.pi), rel=0.01)


def test_truncated_normal_far_tail_is_finite(rng):
    draws = sample_truncated_normal(np.full(1000, -8.0), 1.0, "above_zero", rng)
    assert np.all(np.isfinite(draws))
    assert np.all(draws > 0)
    assert draws.mean() < 0.5


def test_truncated_normal_sides_mirror():
    means = np.array([-1.0, 0.3, 2.5, -7.0])
    below = sample_truncated_normal(means, 1.0, TruncationSide.BELOW_ZERO, RandomStream(seed=1))
    above = sample_truncated_normal(-means, 1.0, TruncationSide.ABOVE_ZERO, RandomStream(seed=1))
    np.testing.assert_array_equal(below, -above)
    assert np.all(below <= 0)


def test_truncated_normal_scalar_input(rng):
    draw = sample_truncated_normal(0.5, 2.0, TruncationSide.BELOW_ZERO, rng)
    assert isinstance(draw, float)
    assert draw <= 0


def test_truncated_normal_rejects_zero_variance(rng):
    with pytest.raises(InvalidParameter):
        sample_truncated_normal(0.0, 0.0, TruncationSide.ABOVE_ZERO, rng)


def test_scaled_chisq_mean(rng):
    draws = sample_scaled_chisq(8, 3.0, 100_000, rng)
    assert draws.mean() == pytest.approx(3.0, rel=0.01)


def test_vech_layout():
    a = np.array([[1.0, 2.0, 4.0], [2.0, 3.0, 5.0], [4.0, 5.0, 6.0]])
    np.testing.assert_array_equal(vech(a), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    np.testing.assert_array_equal(unvech(vech(a), 3), a)


def test_robust_cholesky_repairs_singular_matrix():
    factor = robust_cholesky(np.ones((2, 2)))
    np.testing.assert_allclose(factor @ factor.T, np.ones((2, 2)), atol=1e-8)


def test_robust_cholesky_rejects_indefinite_matrix():
    with pytest.raises(NonPositiveDefinite):
        robust_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_psd_factor_of_zero_matrix():
    np.testing.assert_array_equal(psd_factor(np.zeros((3, 3))), np.zeros((3, 3)))
