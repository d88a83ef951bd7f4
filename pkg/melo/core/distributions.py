"""Sampling kernels for the posterior families used by the estimators.

All samplers draw from a :class:`RandomStream`, a seedable stream whose
identity is the pair ``(seed, stream_id)``. Streams for replications and
chains are derived deterministically so that parallel runs reproduce serial
ones bit for bit.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri
from scipy.stats import invwishart

from melo.core.config import settings
from melo.core.exceptions import DimensionMismatch, InvalidParameter, NonPositiveDefinite

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def derive_stream_id(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a 64-bit stream id."""
    state = np.random.SeedSequence(entropy=[int(k) for k in keys]).generate_state(2, np.uint32)
    return (int(state[0]) << 32) | int(state[1])


@dataclass
class RandomStream:
    seed: int
    stream_id: int = 0
    _generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise InvalidParameter("seed and stream_id must be non-negative")
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._generator = np.random.Generator(np.random.Philox(sequence))

    @classmethod
    def for_replication(cls, seed: int, replication: int, chain: int = 0, config: int = 0) -> "RandomStream":
        return cls(seed=seed, stream_id=derive_stream_id(config, replication, chain))

    @classmethod
    def for_cell(cls, seed: int, config: int) -> "RandomStream":
        """Stream shared by every replication of a grid cell."""
        return cls(seed=seed, stream_id=derive_stream_id(config))

    def spawn(self, key: int) -> "RandomStream":
        return RandomStream(seed=self.seed, stream_id=derive_stream_id(self.stream_id, key))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator


class TruncationSide(str, Enum):
    BELOW_ZERO = "below_zero"
    ABOVE_ZERO = "above_zero"


# Symmetric matrices are stored dense; statistics over them use the lower
# triangle in row-major order: (0,0), (1,0), (1,1), (2,0), ...

def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def vech(a: np.ndarray) -> np.ndarray:
    rows, cols = np.tril_indices(a.shape[-1])
    return a[..., rows, cols]


def unvech(v: np.ndarray, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (dim, dim))
    rows, cols = np.tril_indices(dim)
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out


def vech_dim(length: int) -> int:
    dim = int((np.sqrt(8 * length + 1) - 1) / 2)
    if dim * (dim + 1) // 2 != length:
        raise DimensionMismatch(f"{length} is not a triangular number")
    return dim


def robust_cholesky(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying with diagonal jitter on failure."""
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {matrix.shape}")
    dim = matrix.shape[0]
    jitter = settings.jitter_scale * np.trace(matrix) / dim
    candidate = matrix
    for attempt in range(settings.jitter_retries + 1):
        try:
            return linalg.cholesky(candidate, lower=True)
        except (linalg.LinAlgError, ValueError):
            if attempt == settings.jitter_retries or not jitter > 0:
                break
            candidate = matrix + jitter * (attempt + 1) * np.eye(dim)
            logger.warning(f"Cholesky failed, retrying with jitter {jitter * (attempt + 1):.3e}")
    raise NonPositiveDefinite(f"matrix of dimension {dim} is not positive definite")


def psd_factor(matrix: np.ndarray) -> np.ndarray:
    """Return F with F F' = matrix for positive semidefinite input.

    Falls back to a clipped eigen-decomposition when the Cholesky repair
    fails, which covers exactly singular covariances such as a point mass.
    """
    try:
        return robust_cholesky(matrix)
    except NonPositiveDefinite:
        pass
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    scale = max(1.0, float(np.max(np.abs(eigenvalues)))) if eigenvalues.size else 1.0
    if eigenvalues.min() < -1e-8 * scale:
        raise NonPositiveDefinite(f"matrix has negative eigenvalue {eigenvalues.min():.3e}")
    return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def _validate_location(mean: np.ndarray, cov: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.size, mean.size):
        raise DimensionMismatch(f"mean has dimension {mean.size} but covariance has shape {cov.shape}")
    return mean, cov


def sample_mvn(mean: np.ndarray, cov: np.ndarray, n: int, rng: RandomStream) -> np.ndarray:
    mean, cov = _validate_location(mean, cov)
    factor = psd_factor(cov)
    z = rng.generator.standard_normal((n, mean.size))
    return mean + z @ factor.T


def sample_mvt(location: np.ndarray, scale: np.ndarray, dof: float, n: int, rng: RandomStream) -> np.ndarray:
    """Multivariate Student-t draws as a Gaussian scale mixture."""
    if not dof > 0:
        raise InvalidParameter(f"degrees of freedom must be positive, got {dof}")
    location, scale = _validate_location(location, scale)
    z = sample_mvn(np.zeros(location.size), scale, n, rng)
    if np.isinf(dof):
        return location + z
    mixing = rng.generator.chisquare(dof, n) / dof
    return location + z / np.sqrt(mixing)[:, None]


def sample_inverse_wishart(dof: float, scale: np.ndarray, n: int, rng: RandomStream) -> np.ndarray:
    """Draw ``n`` inverse-Wishart matrices, returned with shape (n, d, d)."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    dim = scale.shape[0]
    if scale.shape != (dim, dim):
        raise DimensionMismatch(f"scale must be square, got shape {scale.shape}")
    if not dof > dim - 1:
        raise InvalidParameter(f"inverse-Wishart needs dof > {dim - 1}, got {dof}")
    robust_cholesky(scale)
    draws = invwishart.rvs(df=dof, scale=symmetrize(scale), size=n, random_state=rng.generator)
    return symmetrize(np.reshape(draws, (n, dim, dim)))


def _standard_upper_tail(lower: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Standard normal draws conditioned on z > lower, elementwise."""
    out = np.empty_like(lower)
    tail = lower > settings.truncnorm_tail_threshold
    body = ~tail

    if body.any():
        mass = ndtr(-lower[body])
        u = 1.0 - gen.random(int(body.sum()))
        out[body] = -ndtri(u * mass)

    if tail.any():
        # exponential proposal with the optimal rate for the bound
        a = lower[tail]
        rate = 0.5 * (a + np.sqrt(a * a + 4.0))
        result = np.empty_like(a)
        pending = np.arange(a.size)
        while pending.size:
            z = a[pending] + gen.exponential(1.0 / rate[pending])
            accept = np.log(gen.random(pending.size)) <= -0.5 * (z - rate[pending]) ** 2
            result[pending[accept]] = z[accept]
            pending = pending[~accept]
        out[tail] = result
    return out


def sample_truncated_normal(
    mean: ArrayLike,
    var: ArrayLike,
    side: Union[TruncationSide, str],
    rng: RandomStream,
) -> ArrayLike:
    """N(mean, var) restricted to (-inf, 0] or (0, inf); broadcasts over arrays."""
    side = TruncationSide(side)
    mean_arr, var_arr = np.broadcast_arrays(np.asarray(mean, dtype=float), np.asarray(var, dtype=float))
    if np.any(var_arr <= 0):
        raise InvalidParameter("variance must be positive")
    sd = np.sqrt(var_arr)
    signed_mean = mean_arr if side == TruncationSide.ABOVE_ZERO else -mean_arr
    lower = np.atleast_1d(-signed_mean / sd).astype(float)
    z = _standard_upper_tail(lower.ravel(), rng.generator).reshape(lower.shape)
    draws = np.atleast_1d(signed_mean) + np.atleast_1d(sd) * z
    if side == TruncationSide.BELOW_ZERO:
        draws = -draws
    if np.ndim(mean) == 0 and np.ndim(var) == 0:
        return float(draws[0])
    return draws


def sample_scaled_chisq(dof: int, scale: float, n: int, rng: RandomStream) -> np.ndarray:
    if dof < 1 or not scale > 0:
        raise InvalidParameter(f"need dof >= 1 and scale > 0, got dof={dof}, scale={scale}")
    return scale * rng.generator.chisquare(dof, n) / dof
