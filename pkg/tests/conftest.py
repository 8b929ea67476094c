import numpy as np
import pytest

from cogfatigue.volume import VolumeSeries


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_volume(rng, shape=(6, 4, 5, 5), voxel_dims=(2.0, 3.0, 3.0), tr=2.0) -> VolumeSeries:
    data = rng.standard_normal(shape).astype(np.float32)
    return VolumeSeries(data=data, voxel_dims_mm=voxel_dims, tr_seconds=tr)


@pytest.fixture
def small_volume(rng):
    return random_volume(rng)
