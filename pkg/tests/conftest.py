import numpy as np
import pytest

from harvestcast.model import YieldNetConfig, build


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    return YieldNetConfig(lstm_units=6, lstm_layers=2, dense_units=5, static_dense_layers=2, post_concat_layers=2)


@pytest.fixture
def small_net(small_config):
    return build(small_config, seed=3)
