import numpy as np
import pytest

from nodalgp.core import Grid, make_params
from nodalgp.discretization import LaplacianOp, eigenpairs


@pytest.fixture(scope="session")
def line_op():
    return LaplacianOp(Grid((np.pi,), (200,)))


@pytest.fixture(scope="session")
def line_basis(line_op):
    return eigenpairs(line_op, 12)


@pytest.fixture(scope="session")
def small_op():
    return LaplacianOp(Grid((np.pi,), (40,)))


@pytest.fixture
def bench_params():
    return make_params([1.0, 1.0], 0.1, [1e-3, 1e-3], 1, [np.pi])


@pytest.fixture
def mixed_params():
    return make_params(
        [1.2, -0.8, 0.6], [[0, 0.5, -0.7], [0.5, 0, -0.4], [-0.7, -0.4, 0]], [0.5, 0.3, 0.8], 1, [np.pi]
    )
