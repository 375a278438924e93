import numpy as np
import pytest

from levyflow.appio import reference_params


@pytest.fixture
def day224():
    return reference_params("day224")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
