import numpy as np
import pytest

from radiomotion.env import EnvironmentGrid


def make_grid(building=None, road=None, size=None):
    """Small helper: build an EnvironmentGrid from optional boolean masks."""
    if building is not None:
        size = building.shape[0]
    elif road is not None:
        size = road.shape[0]
    b = building if building is not None else np.zeros((size, size), bool)
    r = road if road is not None else np.zeros((size, size), bool)
    return EnvironmentGrid(size=size, resolution=1.0, building_mask=b,
                           road_mask=r)


@pytest.fixture
def open_grid():
    """16x16 all-ground grid (no buildings, no roads)."""
    return make_grid(size=16)


@pytest.fixture
def corridor_grid():
    """64x64 grid with one horizontal road corridor at rows y=30..32."""
    road = np.zeros((64, 64), bool)
    road[:, 30:33] = True
    return make_grid(road=road)
