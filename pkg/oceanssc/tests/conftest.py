import numpy as np
import pytest

from oceanssc.config import default_config
from oceanssc.harness.fixtures import generate_scene

'''
pytest -v oceanssc/tests
'''


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope='session')
def desk_config():
    return default_config()


@pytest.fixture(scope='session')
def desk_scene(desk_config):
    return generate_scene(desk_config, seed=0)


@pytest.fixture(scope='session')
def small_config():
    """Two SGDA layers on a 16x16x2 grid; quick enough for repeated forward passes."""
    return default_config(
        image_height=32, image_width=32,
        camera={"fx": 16.0, "fy": 16.0, "cx": 16.0, "cy": 16.0, "height": 1.0},
        grid={"dims": [16, 16, 2], "origin": [0.0, -3.2, -0.4], "resolution": 0.4},
        binning={"d_min": 1.0, "d_max": 7.0, "num_bins": 6},
        channels=6, feature_channels={"4": 4, "8": 5, "16": 6}, context_channels=6,
        sam_channels=3, head_channels=4, layers=2, sampling_points=2,
        instances={"min": 2, "max": 3},
    )


@pytest.fixture(scope='session')
def small_scene(small_config):
    return generate_scene(small_config, seed=1)
