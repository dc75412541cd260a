import numpy as np
import pytest

from entroproj.constraints import LinearConstraint
from entroproj.measure import TimeGrid
from entroproj.reference import drifted_brownian_spec, gaussian_oracle_drifted_bm


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


@pytest.fixture
def mean_constraint():
    return LinearConstraint(lambda x: x, growth_bound=1.0)


@pytest.fixture
def case1_grid():
    return TimeGrid.uniform(1.0, 50)


@pytest.fixture
def case1_spec():
    return drifted_brownian_spec(-0.5, 1.0, lambda t: t, lambda t: 1.0, lambda t: 0.0)


@pytest.fixture
def case1_oracle(case1_grid):
    return gaussian_oracle_drifted_bm(-0.5, 1.0, case1_grid, lambda t: t,
                                      lambda t: 1.0, lambda t: 0.0)
