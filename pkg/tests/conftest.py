"""
Shared fixtures: tiny network configs, synthetic scenes, quiet loggers.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from segcrowd.config import ModelConfig, SegCrowdConfig
from segcrowd.data import SceneSynthesizer
from segcrowd.groundtruth import AnnotatedImage
from segcrowd.logging_utils import quiet_logger


def tiny_model_config(**overrides) -> ModelConfig:
    """Same layout as the default network with a handful of filters."""
    values = dict(
        branch_filters=2,
        trunk_filters=[4, 4],
        trunk_dilations=[1, 2],
        head_filters=4,
        spp_levels=[1, 2, 4],
        fc_widths=[8, 5],
        init_std=0.1,
        seed=0,
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_config(**train_overrides) -> SegCrowdConfig:
    config = SegCrowdConfig()
    config.model = tiny_model_config()
    config.train.iterations = 5
    config.train.learning_rate = 1e-3
    config.train.log_every = 0
    for key, value in train_overrides.items():
        setattr(config.train, key, value)
    return config.check()


@pytest.fixture
def tiny_model_cfg() -> ModelConfig:
    return tiny_model_config()


@pytest.fixture
def small_config() -> SegCrowdConfig:
    return tiny_config()


@pytest.fixture
def logger():
    return quiet_logger("Test")


@pytest.fixture
def synthesizer() -> SceneSynthesizer:
    return SceneSynthesizer(logger=quiet_logger(SceneSynthesizer.MODULE_NAME))


@pytest.fixture
def scenes(synthesizer):
    """Four 64x64 synthetic scenes, counts 5-20, two scene ids."""
    return synthesizer.render_many(seed=7, num_images=4, count_range=(5, 20), dims=(64, 64), scenes=2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_image(points, dims=(64, 64), value=0.5, **kwargs) -> AnnotatedImage:
    return AnnotatedImage(
        pixels=np.full(dims, value),
        points=np.asarray(points, dtype=np.float64).reshape(-1, 2),
        **kwargs,
    )
