import numpy as np
import pytest

from harmbounds.simulation import Scenario


@pytest.fixture(scope="session")
def scenario1():
    """Homogeneous-effect scenario, noise scale 1."""
    return Scenario.from_id(1, 1.0)


@pytest.fixture(scope="session")
def scenario2():
    """Heterogeneous-effect scenario, noise scale 1."""
    return Scenario.from_id(2, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
