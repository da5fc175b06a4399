import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vapors.config import ModelConfig, PlateConfig
from vapors.platesim import PlateSim

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


MINI_MODEL = ModelConfig(
    grid=8,
    deter_dim=8,
    latent_dim=4,
    hidden_dim=8,
    patch1=2,
    patch2=2,
    conv1_channels=2,
    conv2_channels=2,
    dtype="float64",
)


@pytest.fixture
def sim():
    return PlateSim(PlateConfig(), budget=8)


@pytest.fixture
def deterministic_sim():
    return PlateSim(PlateConfig(acquire_prob=1.0), budget=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
