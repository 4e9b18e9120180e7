import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reverb_forge.fixtures import exponential_rir

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def exp_parent():
    return exponential_rir(0.6, 5.0, duration=2.6, rng=np.random.default_rng(7), rir_id="exp06")
