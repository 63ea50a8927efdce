import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def assets():
    from dlgdd.ded import AssetLibrary

    return AssetLibrary.default()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
