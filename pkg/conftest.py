from pathlib import Path

import numpy as np
import pytest

from melo.core.distributions import RandomStream
from melo.core.posteriors import fit_linear_model

ROOT = Path(__file__).resolve().parent


@pytest.fixture
def rng():
    return RandomStream(seed=12345)


@pytest.fixture
def challenger_path():
    return ROOT / "data" / "challenger.csv"


@pytest.fixture
def linear_data(rng):
    """Well-conditioned regression y = 1 + 2 z + u with unit noise."""
    gen = rng.spawn(99).generator
    X = np.column_stack([np.ones(50), gen.standard_normal(50)])
    y = X @ np.array([1.0, 2.0]) + gen.standard_normal(50)
    return y, X


@pytest.fixture
def linear_posterior(linear_data):
    y, X = linear_data
    return fit_linear_model(y, X)
