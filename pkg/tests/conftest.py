import numpy as np
import pytest

from brownray.model import RaySystem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def k1_system():
    # single ray with strong mean reversion; Markov extension needs delta > M + 1
    return RaySystem.from_arrays([4.5], [3.0], [1.0], rho=0.2, horizon=1)


@pytest.fixture
def queue_system():
    return RaySystem.from_arrays([4.0], [4.0], [1.0], rho=-0.1, horizon=2)
