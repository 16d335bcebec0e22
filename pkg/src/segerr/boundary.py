"""
Boundary pseudo-labels: a point is a boundary point when another annotated point
with a different label lies within radius r of it.

Every point is an independent query over the 27-cell grid stencil, so the pass
is split into contiguous chunks of point indices, each chunk writing only its
own output slots. Before any distance is computed, cells whose whole stencil
holds a single label are skipped: away from boundaries the work per point is
constant.
"""
from functools import partial
from logging import getLogger
from typing import Optional, Tuple

import numpy as np

from segerr.apis.data import BoundaryMask, LabelField, PointCloud
from segerr.errors import SceneValidationError
from segerr.spatial import (
    SpatialGrid,
    as_float64,
    build_grid,
    check_radius,
    parallel_map,
    radius_bound,
    squared_distances,
    stencil_candidates,
    within_radius,
)
from segerr.typing import Array
from segerr.utils import chunk_slices, resolve_workers

_logger = getLogger(__name__)

_HIGH = np.iinfo(np.int64).max
_LOW = np.iinfo(np.int64).min
_BRUTE_FORCE_BLOCK = 2**22


def compute_boundary_mask(
    cloud: PointCloud,
    labels: LabelField,
    r: float,
    grid: Optional[SpatialGrid] = None,
    workers: Optional[int] = None,
) -> BoundaryMask:
    """Flags every annotated point that has a differently labeled annotated
    neighbor within distance ``r``.

    Args:
        cloud: The points
        labels: Labels over ``cloud``; ignore points never become boundary points
        and never make their neighbors boundary points.
        r: Closed-ball radius in meters
        grid: A grid over ``cloud`` with ``cell_size >= r``, built when missing
        workers: Number of threads, the hardware parallelism when None

    Returns: The boundary mask, independent of the number of workers
    """
    _check_lengths(cloud, labels.count, "labels")
    return BoundaryMask(
        differing_neighbor_flags(
            cloud, labels.labels.astype(np.int64), labels.valid, r, grid, workers
        )
    )


def binary_boundary_zone(
    cloud: PointCloud,
    mask: Array,
    valid: Array,
    r: float,
    grid: Optional[SpatialGrid] = None,
    workers: Optional[int] = None,
) -> BoundaryMask:
    """The two-sided strip of width ``r`` around the contour of a binary mask.

    A valid point is in the zone when a valid point on the other side of the
    mask lies within ``r``.

    Args:
        cloud: The points
        mask: Binary mask over ``cloud``
        valid: Points taking part, the others are invisible
        r: Closed-ball radius in meters
        grid: A grid over ``cloud`` with ``cell_size >= r``, built when missing
        workers: Number of threads, the hardware parallelism when None
    """
    mask = np.asarray(mask, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    _check_lengths(cloud, mask.shape[0], "mask")
    _check_lengths(cloud, valid.shape[0], "valid")
    return BoundaryMask(
        differing_neighbor_flags(cloud, mask.astype(np.int64), valid, r, grid, workers)
    )


def boundary_overlap_counts(a: BoundaryMask, b: BoundaryMask) -> Tuple[int, int, int]:
    """Returns ``(|a|, |b|, |a & b|)`` over point indices."""
    if len(a) != len(b):
        raise SceneValidationError(
            f"Length mismatch: masks have {len(a)} and {len(b)} points"
        )
    return a.num_boundary, b.num_boundary, int(np.count_nonzero(a.flags & b.flags))


def differing_neighbor_flags(
    cloud: PointCloud,
    keys: Array,
    valid: Array,
    r: float,
    grid: Optional[SpatialGrid] = None,
    workers: Optional[int] = None,
) -> Array:
    """Core pass shared by the label and binary-mask variants.

    Args:
        cloud: The points
        keys: int64 value per point, neighbors are compared on it
        valid: Points taking part
        r: Closed-ball radius
        grid: A grid over ``cloud`` with ``cell_size >= r``
        workers: Number of threads

    Returns: Boolean flags, one per point
    """
    flags = np.zeros(cloud.count, dtype=bool)
    if cloud.count == 0:
        return flags
    if grid is None:
        grid = build_grid(cloud, r)
    elif grid.num_points != cloud.count:
        raise SceneValidationError(
            f"Grid holds {grid.num_points} points, cloud has {cloud.count}"
        )
    check_radius(grid, r)
    workers = resolve_workers(workers)

    candidates = _mixed_stencil_points(grid, keys, valid)
    _logger.debug(
        f"{candidates.shape[0]} of {cloud.count} points lie in mixed-label stencils"
    )
    scan = partial(
        _scan_chunk,
        grid=grid,
        positions=as_float64(cloud),
        keys=keys,
        valid=valid,
        r=r,
        candidates=candidates,
    )
    for hits in parallel_map(scan, chunk_slices(candidates.shape[0], workers), workers):
        flags[hits] = True
    return flags


def _mixed_stencil_points(grid: SpatialGrid, keys: Array, valid: Array) -> Array:
    """Valid points whose 27-cell stencil holds at least two distinct keys."""
    sorted_keys = keys[grid.permutation]
    sorted_valid = valid[grid.permutation]
    cell_min = np.minimum.reduceat(
        np.where(sorted_valid, sorted_keys, _HIGH), grid.cell_starts
    )
    cell_max = np.maximum.reduceat(
        np.where(sorted_valid, sorted_keys, _LOW), grid.cell_starts
    )
    mixed = grid.stencil_reduce(cell_min, np.minimum, _HIGH) < grid.stencil_reduce(
        cell_max, np.maximum, _LOW
    )
    in_mixed_cell = np.repeat(mixed, grid.cell_counts)
    return np.sort(grid.permutation[in_mixed_cell & sorted_valid])


def _scan_chunk(
    chunk: slice,
    grid: SpatialGrid,
    positions: Array,
    keys: Array,
    valid: Array,
    r: float,
    candidates: Array,
) -> Array:
    remaining = candidates[chunk]
    hits = []
    for offset in grid.stencil:
        if remaining.shape[0] == 0:
            break
        owners, neighbors = stencil_candidates(grid, remaining, offset)
        differ = valid[neighbors] & (keys[neighbors] != keys[owners])
        owners, neighbors = owners[differ], neighbors[differ]
        found = np.unique(owners[within_radius(positions, owners, neighbors, r)])
        if found.shape[0]:
            hits.append(found)
            # a point stops scanning at its first differing neighbor
            remaining = remaining[~np.isin(remaining, found, assume_unique=True)]
    return np.concatenate(hits) if hits else np.empty(0, dtype=np.int64)


def brute_force_boundary_mask(
    cloud: PointCloud, labels: LabelField, r: float
) -> BoundaryMask:
    """Quadratic full-scan boundary pass, the reference the grid pass must match."""
    _check_lengths(cloud, labels.count, "labels")
    n = cloud.count
    flags = np.zeros(n, dtype=bool)
    if n == 0:
        return BoundaryMask(flags)
    positions = as_float64(cloud)
    values = labels.labels
    valid = labels.valid
    others = np.arange(n)
    rows = max(1, _BRUTE_FORCE_BLOCK // n)
    for start in range(0, n, rows):
        query = np.arange(start, min(start + rows, n))[:, None]
        d2 = squared_distances(positions, query, others[None, :])
        close = d2 <= radius_bound(r)
        differ = valid[None, :] & (values[None, :] != values[query])
        flags[start : start + rows] = (close & differ).any(axis=1) & valid[query[:, 0]]
    return BoundaryMask(flags)


def _check_lengths(cloud: PointCloud, length: int, name: str):
    if length != cloud.count:
        raise SceneValidationError(
            f"Length mismatch: {name} has {length} entries, cloud has "
            f"{cloud.count} points"
        )
