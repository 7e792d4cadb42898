import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ambiguity_limits.market_model import UtilitySpec, payoff_kernel, uninformative_family

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def two_value():
    """Uniform prices on [-1, 1], values -1/1, P(x=1) in {1/4, 3/4}, risk neutral."""
    family = uninformative_family(200)
    return family, payoff_kernel(family, UtilitySpec.linear(), [-1.0, 0.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
