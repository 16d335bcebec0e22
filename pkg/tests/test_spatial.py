import logging

import numpy as np
import pytest

from segerr.apis.data import PointCloud
from segerr.errors import SceneValidationError
from segerr.spatial import (
    RADIUS_TOLERANCE_M,
    brute_force_neighbors,
    build_grid,
    iter_neighbor_pairs,
    parallel_map,
    radius_neighbors,
    squared_distances,
)
from segerr.utils import chunk_slices, collect_paths, expand_ranges, resolve_workers
from tests.test_classes.oracles import naive_neighbors


@pytest.fixture(scope="module")
def random_cloud():
    rng = np.random.default_rng(3)
    return PointCloud(rng.uniform(0.0, 0.5, (600, 3)))


class TestGrid:
    def test_every_point_in_its_cell(self, random_cloud):
        grid = build_grid(random_cloud, 0.05)
        positions = random_cloud.positions.astype(np.float64)
        low = grid.origin + grid.point_cells * grid.cell_size
        high = grid.origin + (grid.point_cells + 1) * grid.cell_size
        assert (low <= positions).all()
        assert (positions < high).all()

    def test_permutation_groups_cells(self, random_cloud):
        grid = build_grid(random_cloud, 0.05)
        assert sorted(grid.permutation.tolist()) == list(range(random_cloud.count))
        assert grid.cell_counts.sum() == random_cloud.count
        cells = zip(grid.cell_keys, grid.cell_starts, grid.cell_counts)
        for key, start, count in cells:
            members = grid.permutation[start : start + count]
            assert (grid.point_keys[members] == key).all()
            np.testing.assert_array_equal(members, np.sort(members))

    def test_deterministic(self, random_cloud):
        assert build_grid(random_cloud, 0.05) == build_grid(random_cloud, 0.05)

    def test_stencil(self, random_cloud):
        grid = build_grid(random_cloud, 0.05)
        assert grid.stencil.shape == (27,)
        assert grid.stencil[0] == 0
        assert len(set(grid.stencil.tolist())) == 27

    def test_cell_members(self, random_cloud):
        grid = build_grid(random_cloud, 0.05)
        key = grid.point_keys[0]
        assert 0 in grid.cell_members(key)

    def test_validation(self, random_cloud):
        with pytest.raises(SceneValidationError, match=r"empty cloud"):
            build_grid(PointCloud(np.zeros((0, 3))), 0.1)
        with pytest.raises(ValueError, match=r"cell_size must be positive"):
            build_grid(random_cloud, 0.0)
        with pytest.raises(ValueError, match=r"too large"):
            build_grid(PointCloud([[0, 0, 0], [1e7, 1e7, 1e7]]), 1e-5)

    def test_single_point(self):
        grid = build_grid(PointCloud([[1.0, 2.0, 3.0]]), 0.1)
        assert grid.num_cells == 1
        assert radius_neighbors(grid, PointCloud([[1.0, 2.0, 3.0]]), 0, 0.1).size == 0


class TestRadiusNeighbors:
    @pytest.mark.parametrize("r", [0.01, 0.03, 0.05])
    def test_matches_oracle(self, random_cloud, r):
        grid = build_grid(random_cloud, 0.05)
        for i in range(0, random_cloud.count, 7):
            found = radius_neighbors(grid, random_cloud, i, r)
            expected = brute_force_neighbors(random_cloud, i, r)
            np.testing.assert_array_equal(found, expected)
            assert set(found.tolist()) == naive_neighbors(random_cloud.positions, i, r)

    def test_closed_ball(self):
        cloud = PointCloud([[0.0, 0.0, 0.0], [0.06, 0.0, 0.0]])
        grid = build_grid(cloud, 0.06)
        np.testing.assert_array_equal(radius_neighbors(grid, cloud, 0, 0.06), [1])
        cloud = PointCloud([[0.12, 0.0, 0.0], [0.18, 0.0, 0.0]])
        grid = build_grid(cloud, 0.06)
        np.testing.assert_array_equal(radius_neighbors(grid, cloud, 0, 0.06), [1])
        np.testing.assert_array_equal(brute_force_neighbors(cloud, 1, 0.06), [0])
        cloud = PointCloud([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]])
        grid = build_grid(cloud, 0.06)
        np.testing.assert_array_equal(radius_neighbors(grid, cloud, 0, 0.06), [1])
        np.testing.assert_array_equal(radius_neighbors(grid, cloud, 1, 0.06), [0])

    @pytest.mark.parametrize("offset", [0.5, 1.0, 2.34, 5.0, 50.0])
    def test_translation_invariant(self, offset):
        positions = np.outer(np.arange(8) * 0.02, [1.0, 1.0, 0.0])
        cloud = PointCloud(positions)
        moved = PointCloud(positions + offset)
        r = 0.06 * np.sqrt(2.0)
        grid = build_grid(moved, r)
        for i in range(8):
            expected = brute_force_neighbors(cloud, i, r)
            assert expected.size >= 3
            np.testing.assert_array_equal(radius_neighbors(grid, moved, i, r), expected)
            np.testing.assert_array_equal(brute_force_neighbors(moved, i, r), expected)

    def test_tolerance_is_tight(self):
        cloud = PointCloud([[0.0, 0.0, 0.0], [0.0601, 0.0, 0.0]])
        grid = build_grid(cloud, 0.06)
        assert radius_neighbors(grid, cloud, 0, 0.06).size == 0
        assert 0.06 + RADIUS_TOLERANCE_M < 0.0601

    def test_coincident_points(self):
        cloud = PointCloud(np.zeros((4, 3)))
        grid = build_grid(cloud, 0.1)
        np.testing.assert_array_equal(radius_neighbors(grid, cloud, 2, 0.1), [0, 1, 3])

    def test_radius_above_cell_size(self, random_cloud):
        grid = build_grid(random_cloud, 0.05)
        with pytest.raises(ValueError, match=r"exceeds the grid cell size"):
            radius_neighbors(grid, random_cloud, 0, 0.06)

    def test_bad_index(self, random_cloud):
        grid = build_grid(random_cloud, 0.05)
        with pytest.raises(IndexError):
            radius_neighbors(grid, random_cloud, random_cloud.count, 0.05)

    def test_pairs_are_symmetric(self, random_cloud):
        grid = build_grid(random_cloud, 0.05)
        pairs = set()
        for owners, neighbors in iter_neighbor_pairs(
            grid,
            random_cloud.positions.astype(np.float64),
            np.arange(random_cloud.count),
            0.05,
        ):
            pairs.update(zip(owners.tolist(), neighbors.tolist()))
        assert all((b, a) in pairs for a, b in pairs)
        assert all(a != b for a, b in pairs)


def test_squared_distances_axis_order():
    positions = np.array([[0.1, 0.2, 0.3], [0.4, 0.8, 1.5]])
    d = positions[1] - positions[0]
    expected = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    assert squared_distances(positions, np.array([0]), np.array([1]))[0] == expected


def test_resolve_workers():
    assert resolve_workers(3) == 3
    assert resolve_workers(None) >= 1
    with pytest.raises(ValueError, match=r"must be positive"):
        resolve_workers(0)


def test_chunk_slices():
    slices = chunk_slices(10, 3)
    assert [s.start for s in slices] == [0, 4, 8]
    assert slices[-1].stop == 10
    assert chunk_slices(0, 4) == []
    assert len(chunk_slices(100, 1, chunk_size=30)) == 4


def test_expand_ranges():
    np.testing.assert_array_equal(
        expand_ranges(np.array([5, 0, 9]), np.array([2, 0, 3])), [5, 6, 9, 10, 11]
    )
    assert expand_ranges(np.array([1]), np.array([0])).shape == (0,)


def test_parallel_map_keeps_order():
    slices = chunk_slices(100, 4, chunk_size=10)
    results = parallel_map(lambda s: (s.start, s.stop), slices, 4)
    assert results == [(s.start, s.stop) for s in slices]


def test_collect_paths(tmp_path, caplog):
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "x.json").write_text("{}")
    (tmp_path / "a" / "y.txt").write_text("")
    single = tmp_path / "z.json"
    with caplog.at_level(logging.DEBUG, logger="segerr.utils"):
        found = list(collect_paths([tmp_path / "a", single], "json"))
    assert found == [tmp_path / "a" / "x.json", single]
    assert "found 1 .json files under" in caplog.text
