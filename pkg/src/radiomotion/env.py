"""Static urban layouts: building/road occupancy rasters and their generation.

Grids are indexed ``mask[i, j]`` where ``i`` is the x index and ``j`` the y
index; cell ``(i, j)`` covers the continuous square ``(i, i+1] x (j, j+1]``
in meters (1 m resolution by default), so the cell center is at
``(i + 0.5, j + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# 8-bit grayscale coding for raster import/export.
BUILDING_VALUE = 0
ROAD_VALUE = 128
GROUND_VALUE = 255


class GenerationError(ValueError):
    """Layout parameters admit no valid street circuit."""


@dataclass(frozen=True, eq=False)
class EnvironmentGrid:
    """Immutable occupancy raster of one urban layout.

    ``building_mask`` and ``road_mask`` are disjoint; cells in neither are
    open ground (signals pass, vehicles do not drive there).
    """

    size: int
    resolution: float
    building_mask: np.ndarray
    road_mask: np.ndarray
    env_id: int = 0

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"size must be positive, got {self.size}")
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        for name in ("building_mask", "road_mask"):
            mask = getattr(self, name)
            if mask.shape != (self.size, self.size):
                raise ValueError(f"{name} shape {mask.shape} != ({self.size}, {self.size})")
            if mask.dtype != np.bool_:
                raise ValueError(f"{name} must be boolean")
        if np.any(self.building_mask & self.road_mask):
            raise ValueError("building_mask and road_mask overlap")
        self.building_mask.setflags(write=False)
        self.road_mask.setflags(write=False)


def _segment_axis(rng: np.random.Generator, size: int,
                  block_range: tuple[int, int],
                  street_range: tuple[int, int]) -> list[tuple[int, int]]:
    """Alternate block/street spans along one axis; return street intervals."""
    streets = []
    pos = int(rng.integers(block_range[0], block_range[1] + 1))
    while pos < size:
        width = int(rng.integers(street_range[0], street_range[1] + 1))
        end = min(pos + width, size)
        streets.append((pos, end))
        pos = end + int(rng.integers(block_range[0], block_range[1] + 1))
    return streets


def generate_environment(seed: int, size: int = 64,
                         block_size_range: tuple[int, int] = (8, 14),
                         street_width_range: tuple[int, int] = (3, 4),
                         resolution: float = 1.0,
                         env_id: int = 0) -> EnvironmentGrid:
    """Generate a city of rectangular building blocks separated by streets.

    Deterministic for a fixed ``(seed, params)``. Blocks are inset by one
    cell of open ground (sidewalk) where they are large enough, so the cell
    semantics stay ternary. Raises :class:`GenerationError` when the
    parameters cannot yield at least two streets per axis (no circuit).
    """
    for name, rng_pair in (("block_size_range", block_size_range),
                           ("street_width_range", street_width_range)):
        lo, hi = rng_pair
        if lo <= 0 or hi < lo:
            raise ValueError(f"{name} must be positive and ordered, got {rng_pair}")
        if lo >= size:
            raise GenerationError(f"{name} lower bound {lo} leaves no room for streets in size {size}")

    rng = np.random.default_rng(seed)
    x_streets = _segment_axis(rng, size, block_size_range, street_width_range)
    y_streets = _segment_axis(rng, size, block_size_range, street_width_range)
    if len(x_streets) < 2 or len(y_streets) < 2:
        raise GenerationError(
            f"parameters produced {len(x_streets)}x{len(y_streets)} streets; "
            "need at least 2 per axis for a closed circuit")

    road = np.zeros((size, size), dtype=bool)
    for a, b in x_streets:
        road[a:b, :] = True
    for a, b in y_streets:
        road[:, a:b] = True

    # Blocks are the complement intervals; keep a 1-cell ground frame when
    # the block is at least 3 cells wide in that axis.
    def blocks(streets):
        edges = [0] + [e for s in streets for e in s] + [size]
        return [(edges[k], edges[k + 1]) for k in range(0, len(edges), 2)
                if edges[k + 1] - edges[k] > 0]

    building = np.zeros((size, size), dtype=bool)
    for x0, x1 in blocks(x_streets):
        dx = 1 if x1 - x0 >= 3 else 0
        for y0, y1 in blocks(y_streets):
            dy = 1 if y1 - y0 >= 3 else 0
            building[x0 + dx:x1 - dx, y0 + dy:y1 - dy] = True

    return EnvironmentGrid(size=size, resolution=resolution,
                           building_mask=building, road_mask=road,
                           env_id=env_id)


def drivable_cells(env: EnvironmentGrid) -> set[tuple[int, int]]:
    """Exactly the cells where ``road_mask`` is true."""
    ii, jj = np.nonzero(env.road_mask)
    return {(int(i), int(j)) for i, j in zip(ii, jj)}


def ground_cells(env: EnvironmentGrid) -> set[tuple[int, int]]:
    """Open-ground cells: neither building nor road."""
    ii, jj = np.nonzero(~env.building_mask & ~env.road_mask)
    return {(int(i), int(j)) for i, j in zip(ii, jj)}


def load_environment(image, building_value: int = BUILDING_VALUE,
                     road_value: int = ROAD_VALUE,
                     ground_value: int = GROUND_VALUE,
                     strict: bool = False,
                     resolution: float = 1.0,
                     env_id: int = 0) -> EnvironmentGrid:
    """Build an environment from an 8-bit grayscale raster.

    ``image`` is an N x N uint8 array or a path to a grayscale PNG. Pixels
    equal to ``building_value`` become buildings, ``road_value`` roads, and
    anything else open ground; with ``strict`` any pixel outside the three
    coded values is an error.
    """
    if isinstance(image, (str, Path)):
        with Image.open(image) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    else:
        arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"environment raster must be square, got shape {arr.shape}")
    if strict:
        known = np.isin(arr, [building_value, road_value, ground_value])
        if not known.all():
            bad = np.unique(arr[~known])
            raise ValueError(f"unknown pixel values {bad.tolist()} in strict mode")
    return EnvironmentGrid(size=arr.shape[0], resolution=resolution,
                           building_mask=arr == building_value,
                           road_mask=arr == road_value,
                           env_id=env_id)


def environment_to_image(env: EnvironmentGrid) -> np.ndarray:
    """Encode the grid as a uint8 raster (inverse of :func:`load_environment`)."""
    arr = np.full((env.size, env.size), GROUND_VALUE, dtype=np.uint8)
    arr[env.building_mask] = BUILDING_VALUE
    arr[env.road_mask] = ROAD_VALUE
    return arr


def save_environment(env: EnvironmentGrid, path) -> None:
    """Write the grid as an 8-bit grayscale PNG (row = x index)."""
    Image.fromarray(environment_to_image(env), mode="L").save(path, format="PNG")
