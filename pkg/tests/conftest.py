import pytest

from helpers import random_constants, tiny_config
from msgc.network import MSGCNetwork


@pytest.fixture
def tiny_network():
    def make(seed: int = 0, **overrides) -> MSGCNetwork:
        cfg = tiny_config(seed=seed, **overrides)
        return MSGCNetwork(cfg, random_constants(cfg, seed=seed))
    return make
