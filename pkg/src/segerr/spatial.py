"""
Uniform-grid acceleration structure for closed-ball radius queries, and the
quadratic full-scan oracle it is checked against.

Points are bucketed into cubic cells of ``cell_size`` and stored as a
cell-sorted permutation (structure of arrays). A query of radius
``r <= cell_size`` only needs the 27 cells around the query cell.

Positions are stored as float32, so two points meant to lie exactly ``r`` apart
land a few ulps either side of ``r`` depending on where the scene sits. Every
closed-ball test therefore accepts distances up to ``r + RADIUS_TOLERANCE_M``,
and grids pad their cells by the same amount.
"""
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from logging import getLogger
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from segerr.apis.data import PointCloud
from segerr.errors import SceneValidationError
from segerr.typing import Array
from segerr.utils import expand_ranges

_logger = getLogger(__name__)

_MAX_KEY_SPACE = 2**62

# covers float32 rounding of coordinates up to ~100 m from the origin
RADIUS_TOLERANCE_M = 1e-5

T = TypeVar("T")


def squared_distances(positions: Array, i: Array, j: Array) -> Array:
    """Squared euclidean distance between rows ``i`` and ``j`` of ``positions``.

    The three axes are summed in a fixed order so every consumer (grid, oracle,
    boundary pass) gets bit-identical results for the same pair.
    """
    d = positions[j] - positions[i]
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def as_float64(cloud: PointCloud) -> Array:
    return cloud.positions.astype(np.float64)


def radius_bound(r: float) -> float:
    """Squared distance threshold of the closed ball of radius ``r``."""
    return (r + RADIUS_TOLERANCE_M) ** 2


class SpatialGrid:
    """Cell-sorted uniform grid over a point cloud.

    Cell coordinates are padded by one on every side before being linearised into
    int64 keys, so the 27 stencil offsets never alias onto another cell.

    Args:
        cell_size: Edge length of a cell in meters
        origin: Minimum corner of cell (0, 0, 0)
        dims: Number of occupied cell coordinates per axis
        point_cells: Integer cell coordinate of every point, shape [N, 3]
        permutation: Point indices grouped by cell key, stable within a cell
        cell_keys: Sorted keys of the occupied cells
        cell_starts: Start of each occupied cell inside ``permutation``
        cell_counts: Number of points in each occupied cell
    """

    def __init__(
        self,
        cell_size: float,
        origin: Array,
        dims: Array,
        point_cells: Array,
        permutation: Array,
        cell_keys: Array,
        cell_starts: Array,
        cell_counts: Array,
    ):
        self._cell_size = float(cell_size)
        self._origin = _readonly(origin)
        self._dims = _readonly(dims)
        self._point_cells = _readonly(point_cells)
        self._point_keys = _readonly(self.keys_of(point_cells))
        self._permutation = _readonly(permutation)
        self._cell_keys = _readonly(cell_keys)
        self._cell_starts = _readonly(cell_starts)
        self._cell_counts = _readonly(cell_counts)
        padded = self._dims + 2
        self._stencil = _readonly(
            np.array(
                [
                    (dx * padded[1] + dy) * padded[2] + dz
                    for dx, dy, dz in sorted(
                        product((-1, 0, 1), repeat=3), key=lambda o: o != (0, 0, 0)
                    )
                ],
                dtype=np.int64,
            )
        )

    @property
    def cell_size(self) -> float:
        return self._cell_size

    @property
    def origin(self) -> Array:
        return self._origin

    @property
    def dims(self) -> Array:
        return self._dims

    @property
    def point_cells(self) -> Array:
        return self._point_cells

    @property
    def point_keys(self) -> Array:
        return self._point_keys

    @property
    def permutation(self) -> Array:
        return self._permutation

    @property
    def cell_keys(self) -> Array:
        return self._cell_keys

    @property
    def cell_starts(self) -> Array:
        return self._cell_starts

    @property
    def cell_counts(self) -> Array:
        return self._cell_counts

    @property
    def stencil(self) -> Array:
        """Key offsets of the 27 neighbor cells, the center cell first."""
        return self._stencil

    @property
    def num_points(self) -> int:
        return self._permutation.shape[0]

    @property
    def num_cells(self) -> int:
        return self._cell_keys.shape[0]

    def keys_of(self, cells: Array) -> Array:
        return _linear_keys(cells, self._dims)

    def cell_ranges(self, keys: Array) -> Tuple[Array, Array]:
        """Start in the permutation and point count of the cells with ``keys``.

        Unoccupied cells get a count of 0.
        """
        idx = np.searchsorted(self._cell_keys, keys)
        idx = np.minimum(idx, self.num_cells - 1)
        found = self._cell_keys[idx] == keys
        return self._cell_starts[idx], np.where(found, self._cell_counts[idx], 0)

    def cell_members(self, key: int) -> Array:
        """Point indices stored in the cell with ``key``."""
        starts, counts = self.cell_ranges(np.array([key], dtype=np.int64))
        return self._permutation[starts[0] : starts[0] + counts[0]]

    def stencil_reduce(self, per_cell: Array, ufunc: np.ufunc, fill) -> Array:
        """Reduces a per-occupied-cell value over each cell's 27-cell stencil."""
        result = np.full_like(per_cell, fill)
        for offset in self._stencil:
            neighbor = self._cell_keys + offset
            idx = np.searchsorted(self._cell_keys, neighbor)
            idx = np.minimum(idx, self.num_cells - 1)
            found = self._cell_keys[idx] == neighbor
            result = ufunc(result, np.where(found, per_cell[idx], fill))
        return result

    def __eq__(self, other):
        if not isinstance(other, SpatialGrid):
            return NotImplemented
        return self.cell_size == other.cell_size and all(
            np.array_equal(a, b)
            for a, b in (
                (self.origin, other.origin),
                (self.dims, other.dims),
                (self.point_cells, other.point_cells),
                (self.permutation, other.permutation),
                (self.cell_keys, other.cell_keys),
                (self.cell_starts, other.cell_starts),
                (self.cell_counts, other.cell_counts),
            )
        )


def build_grid(cloud: PointCloud, cell_size: float) -> SpatialGrid:
    """Buckets the points of ``cloud`` into a uniform grid.

    Construction is a stable sort by cell key, so it is deterministic given the
    input order.

    Args:
        cloud: A non-empty point cloud
        cell_size: Positive cell edge length in meters, padded by
            ``RADIUS_TOLERANCE_M`` so the grid serves queries of radius ``cell_size``

    Returns: The grid
    """
    if cloud.count == 0:
        raise SceneValidationError("Can't build a grid over an empty cloud")
    if not cell_size > 0 or not np.isfinite(cell_size):
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    cell_size = cell_size + RADIUS_TOLERANCE_M

    positions = as_float64(cloud)
    origin = positions.min(axis=0)
    cells = np.floor((positions - origin) / cell_size).astype(np.int64)
    # floor() may land one cell off after rounding, re-establish
    # origin + cell * size <= p < origin + (cell + 1) * size exactly
    cells -= (origin + cells * cell_size > positions).astype(np.int64)
    cells += (origin + (cells + 1) * cell_size <= positions).astype(np.int64)

    dims = cells.max(axis=0) + 1
    if float(np.prod((dims + 2).astype(np.float64))) >= _MAX_KEY_SPACE:
        raise ValueError(
            f"Cloud extent is too large for cell_size {cell_size}: {dims} cells"
        )
    keys = _linear_keys(cells, dims)
    permutation = np.argsort(keys, kind="stable")
    cell_keys, cell_starts, cell_counts = np.unique(
        keys[permutation], return_index=True, return_counts=True
    )
    _logger.debug(
        f"grid over {cloud.count} points: cell size {cell_size}, "
        f"{cell_keys.shape[0]} occupied cells of {int(np.prod(dims))}"
    )
    return SpatialGrid(
        cell_size=cell_size,
        origin=origin,
        dims=dims,
        point_cells=cells,
        permutation=permutation,
        cell_keys=cell_keys,
        cell_starts=cell_starts.astype(np.int64),
        cell_counts=cell_counts.astype(np.int64),
    )


def check_radius(grid: SpatialGrid, r: float):
    if not r > 0:
        raise ValueError(f"Radius must be positive, got {r}")
    if r + RADIUS_TOLERANCE_M > grid.cell_size:
        raise ValueError(
            f"Radius {r} exceeds the grid cell size {grid.cell_size}, "
            "the 27-cell stencil would miss neighbors"
        )


def stencil_candidates(
    grid: SpatialGrid, query: Array, offset: int
) -> Tuple[Array, Array]:
    """All (query point, point) pairs between each query and one stencil cell.

    No distance test is applied and self pairs are included.
    """
    starts, counts = grid.cell_ranges(grid.point_keys[query] + offset)
    return np.repeat(query, counts), grid.permutation[expand_ranges(starts, counts)]


def within_radius(positions: Array, owners: Array, neighbors: Array, r: float) -> Array:
    """Closed-ball test for candidate pairs, self pairs excluded."""
    return (squared_distances(positions, owners, neighbors) <= radius_bound(r)) & (
        neighbors != owners
    )


def iter_neighbor_pairs(
    grid: SpatialGrid, positions: Array, query: Array, r: float
) -> Iterator[Tuple[Array, Array]]:
    """Yields every (query point, neighbor) pair within distance ``r``.

    Pairs come one stencil cell at a time, the query's own cell first. A query
    point is never paired with itself.

    Args:
        grid: Grid built over ``positions``
        positions: float64 positions, shape [N, 3]
        query: Indices of the query points
        r: Closed-ball radius, at most ``grid.cell_size``
    """
    check_radius(grid, r)
    query = np.asarray(query, dtype=np.int64)
    for offset in grid.stencil:
        owners, neighbors = stencil_candidates(grid, query, offset)
        keep = within_radius(positions, owners, neighbors, r)
        yield owners[keep], neighbors[keep]


def radius_neighbors(
    grid: SpatialGrid, cloud: PointCloud, query_index: int, r: float
) -> Array:
    """Indices of all other points within distance ``r`` of a query point.

    Args:
        grid: Grid built over ``cloud``
        cloud: The points
        query_index: Index of the query point
        r: Closed-ball radius, at most ``grid.cell_size``

    Returns: Sorted int64 array of neighbor indices
    """
    check_radius(grid, r)
    _check_index(cloud, query_index)
    found = [
        neighbors
        for _, neighbors in iter_neighbor_pairs(
            grid, as_float64(cloud), np.array([query_index]), r
        )
    ]
    return np.sort(np.concatenate(found))


def brute_force_neighbors(cloud: PointCloud, query_index: int, r: float) -> Array:
    """Full-scan closed-ball neighbor search, the quadratic oracle."""
    _check_index(cloud, query_index)
    others = np.arange(cloud.count)
    close = within_radius(
        as_float64(cloud), np.full(cloud.count, query_index), others, r
    )
    return np.flatnonzero(close)


def parallel_map(
    fn: Callable[[slice], T], slices: Sequence[slice], workers: int
) -> List[T]:
    """Applies ``fn`` to every slice on a thread pool, results in slice order.

    The numpy kernels release the GIL, so threads give real parallelism here.
    """
    if workers <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, slices))


def _check_index(cloud: PointCloud, query_index: Optional[int]):
    if not 0 <= query_index < cloud.count:
        raise IndexError(f"Query index {query_index} out of range [0, {cloud.count})")


def _readonly(array: Array) -> Array:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def _linear_keys(cells: Array, dims: Array) -> Array:
    padded = np.asarray(dims, dtype=np.int64) + 2
    cells = np.asarray(cells, dtype=np.int64) + 1
    return (cells[..., 0] * padded[1] + cells[..., 1]) * padded[2] + cells[..., 2]
