import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("netsar", deadline=None, max_examples=50)
settings.load_profile("netsar")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
