import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_volume(rng, dims, channels=1, scale=1.0):
    from featreg.volume import FeatureVolume

    data = rng.standard_normal(tuple(dims) + (channels,)).astype(np.float32) * scale
    return FeatureVolume(data)
