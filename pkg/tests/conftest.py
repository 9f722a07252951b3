import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gauge_xray.geometry import metric_from_spec
from gauge_xray.transport import BoundaryGrid

settings.register_profile(
    "default", deadline=None, max_examples=15,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.register_profile("ci", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def flat():
    return metric_from_spec({"name": "flat"})


@pytest.fixture(scope="session")
def sphere_cap():
    return metric_from_spec({"name": "positive", "c": 0.5})


@pytest.fixture(scope="session")
def small_bgrid():
    return BoundaryGrid(16, 8, 0.05)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))
