import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radiomotion.env import (BUILDING_VALUE, GROUND_VALUE, ROAD_VALUE,
                             EnvironmentGrid, GenerationError, drivable_cells,
                             environment_to_image, generate_environment,
                             ground_cells, load_environment, save_environment)


def find_cycle_in_road_graph(road: np.ndarray) -> bool:
    """DFS cycle search on the 4-adjacency graph of road cells."""
    n = road.shape[0]
    cells = {(i, j) for i, j in zip(*np.nonzero(road))}
    parent = {}
    visited = set()
    for start in cells:
        if start in visited:
            continue
        stack = [(start, None)]
        while stack:
            node, prev = stack.pop()
            if node in visited:
                continue
            visited.add(node)
            parent[node] = prev
            i, j = node
            for nb in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if nb not in cells:
                    continue
                if nb == prev:
                    continue
                if nb in visited:
                    return True
                stack.append((nb, node))
    return False


class TestGenerateEnvironment:
    def test_deterministic_for_fixed_seed(self):
        a = generate_environment(7, size=64)
        b = generate_environment(7, size=64)
        assert np.array_equal(a.building_mask, b.building_mask)
        assert np.array_equal(a.road_mask, b.road_mask)

    def test_different_seeds_differ(self):
        a = generate_environment(1, size=64)
        b = generate_environment(2, size=64)
        assert not np.array_equal(a.road_mask, b.road_mask)

    def test_block_size_equal_to_size_fails(self):
        with pytest.raises(GenerationError):
            generate_environment(0, size=64, block_size_range=(64, 64))

    def test_oversized_blocks_fail(self):
        # One street at most fits: no circuit possible.
        with pytest.raises(GenerationError):
            generate_environment(3, size=32, block_size_range=(30, 31))

    def test_road_graph_contains_cycle(self):
        env = generate_environment(1, size=64)
        assert find_cycle_in_road_graph(env.road_mask)

    def test_invalid_ranges_rejected(self):
        with pytest.raises(ValueError):
            generate_environment(0, size=64, block_size_range=(0, 4))
        with pytest.raises(ValueError):
            generate_environment(0, size=64, street_width_range=(5, 3))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_masks_disjoint_and_ternary(self, seed):
        env = generate_environment(seed, size=48)
        assert not np.any(env.building_mask & env.road_mask)
        assert env.road_mask.sum() > 0
        # ternary: some open ground next to each block (sidewalks)
        assert (~env.building_mask & ~env.road_mask).sum() > 0


class TestDrivableCells:
    def test_all_building_grid_empty(self):
        n = 8
        env = EnvironmentGrid(size=n, resolution=1.0,
                              building_mask=np.ones((n, n), bool),
                              road_mask=np.zeros((n, n), bool))
        assert drivable_cells(env) == set()

    def test_all_road_grid(self):
        env = EnvironmentGrid(size=4, resolution=1.0,
                              building_mask=np.zeros((4, 4), bool),
                              road_mask=np.ones((4, 4), bool))
        assert len(drivable_cells(env)) == 16

    def test_matches_popcount(self):
        env = generate_environment(5, size=64)
        cells = drivable_cells(env)
        assert len(cells) == int(env.road_mask.sum())
        assert all(env.road_mask[c] for c in cells)
        assert not any(env.building_mask[c] for c in cells)


class TestLoadEnvironment:
    def test_uniform_road_image(self):
        img = np.full((8, 8), ROAD_VALUE, np.uint8)
        env = load_environment(img)
        assert env.road_mask.all()
        assert not env.building_mask.any()

    def test_round_trip(self, tmp_path):
        env = generate_environment(9, size=32)
        path = tmp_path / "env.png"
        save_environment(env, path)
        loaded = load_environment(path)
        assert np.array_equal(loaded.building_mask, env.building_mask)
        assert np.array_equal(loaded.road_mask, env.road_mask)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            load_environment(np.zeros((64, 65), np.uint8))

    def test_strict_mode_rejects_unknown_values(self):
        img = np.full((4, 4), GROUND_VALUE, np.uint8)
        img[0, 0] = 17
        with pytest.raises(ValueError):
            load_environment(img, strict=True)
        env = load_environment(img, strict=False)
        assert not env.building_mask[0, 0] and not env.road_mask[0, 0]

    def test_image_coding(self):
        env = generate_environment(2, size=32)
        img = environment_to_image(env)
        assert set(np.unique(img)) <= {BUILDING_VALUE, ROAD_VALUE, GROUND_VALUE}
        assert np.array_equal(img == BUILDING_VALUE, env.building_mask)


class TestGridInvariants:
    def test_overlapping_masks_rejected(self):
        mask = np.ones((4, 4), bool)
        with pytest.raises(ValueError):
            EnvironmentGrid(size=4, resolution=1.0, building_mask=mask,
                            road_mask=mask)

    def test_bad_size_rejected(self):
        with pytest.raises(ValueError):
            EnvironmentGrid(size=0, resolution=1.0,
                            building_mask=np.zeros((0, 0), bool),
                            road_mask=np.zeros((0, 0), bool))

    def test_ground_cells_partition(self):
        env = generate_environment(4, size=48)
        n_ground = len(ground_cells(env))
        assert n_ground == 48 * 48 - env.building_mask.sum() - env.road_mask.sum()
