"""
Benchmark harness for the boundary pseudo-label pass.

Every method computes the same boundary mask: ``grid`` is the production path,
``brute`` the quadratic full scan and ``kdtree`` a k-d tree pair search used as
an outside reference. Before anything is timed, the grid output is checked
against the full scan on scenes small enough for it.
"""
import time
from logging import getLogger
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from tqdm import tqdm

from segerr.apis.data import BoundaryMask, LabelField, PointCloud
from segerr.apis.results import BenchResult
from segerr.boundary import brute_force_boundary_mask, compute_boundary_mask
from segerr.errors import InvariantViolation
from segerr.names import BenchMethod, GeneratorKind
from segerr.spatial import RADIUS_TOLERANCE_M, radius_bound, squared_distances
from segerr.synth import SceneSpec, generate_scene
from segerr.utils import resolve_workers

_logger = getLogger(__name__)

BENCH_DENSITY = 2500.0  # points per square meter, scanned-floor density
BENCH_NUM_CLASSES = 8
POINTS_PER_BLOB = 2000
ORACLE_GATE_MAX_POINTS = 5000
BRUTE_FORCE_MAX_POINTS = 50_000
MIN_MEANINGFUL_POINTS = 1000
WARMUP_RUNS = 1


def bench_scene(num_points: int, seed: int = 0) -> Tuple[PointCloud, LabelField]:
    """A planar random multi-label scene of ``num_points`` points.

    The square side grows with the point count so the density, and with it the
    number of neighbors per query, stays constant.
    """
    side = float(np.sqrt(num_points / BENCH_DENSITY))
    spec = SceneSpec(
        GeneratorKind.RANDOM_BLOBS,
        extent=(side, side, 0.0),
        num_points=num_points,
        num_blobs=max(BENCH_NUM_CLASSES, num_points // POINTS_PER_BLOB),
        num_classes=BENCH_NUM_CLASSES,
        seed=seed,
    )
    return generate_scene(spec)


def kdtree_boundary_mask(
    cloud: PointCloud, labels: LabelField, r: float
) -> BoundaryMask:
    """Boundary mask from the closed-ball pairs of a k-d tree.

    The tree is queried slightly wide and its pairs are re-tested with the
    grid's own distance test, so all methods agree on ties.
    """
    valid = labels.valid
    indices = np.flatnonzero(valid)
    positions = cloud.positions[indices].astype(np.float64)
    tree = cKDTree(positions)
    pairs = tree.query_pairs(r + 2 * RADIUS_TOLERANCE_M, output_type="ndarray")
    d2 = squared_distances(positions, pairs[:, 0], pairs[:, 1])
    pairs = pairs[d2 <= radius_bound(r)]
    values = labels.labels[indices]
    differing = pairs[values[pairs[:, 0]] != values[pairs[:, 1]]]
    flags = np.zeros(cloud.count, dtype=bool)
    flags[indices[differing.reshape(-1)]] = True
    return BoundaryMask(flags)


def check_against_oracle(
    cloud: PointCloud, labels: LabelField, r: float, workers: Optional[int] = None
):
    """Raises InvariantViolation when the grid and full-scan masks differ."""
    fast = compute_boundary_mask(cloud, labels, r, workers=workers)
    slow = brute_force_boundary_mask(cloud, labels, r)
    if fast != slow:
        differing = np.flatnonzero(fast.flags != slow.flags)
        raise InvariantViolation(
            f"Grid and brute-force boundary masks differ on {differing.shape[0]} "
            f"points, first at {int(differing[0])}"
        )
    _logger.info(f"grid matches the brute-force oracle on {cloud.count} points")


def _method_runner(
    method: BenchMethod,
    cloud: PointCloud,
    labels: LabelField,
    r: float,
    workers: int,
) -> Callable[[], BoundaryMask]:
    if method is BenchMethod.GRID:
        return lambda: compute_boundary_mask(cloud, labels, r, workers=workers)
    if method is BenchMethod.BRUTE:
        return lambda: brute_force_boundary_mask(cloud, labels, r)
    return lambda: kdtree_boundary_mask(cloud, labels, r)


def time_method(
    run: Callable[[], object], repeat: int, description: str, progress: bool = True
) -> List[float]:
    """Wall time in milliseconds of ``repeat`` runs after the warm-up."""
    for _ in range(WARMUP_RUNS):
        run()
    times = []
    for _ in tqdm(range(repeat), desc=description, disable=not progress, leave=False):
        start = time.perf_counter()
        run()
        times.append((time.perf_counter() - start) * 1000.0)
    return times


def run_bench(
    num_points: int,
    radius_m: float,
    methods: Sequence[BenchMethod] = (BenchMethod.GRID, BenchMethod.BRUTE),
    repeat: int = BenchResult.MIN_REPETITIONS,
    workers: Optional[int] = None,
    seed: int = 0,
    brute_max_points: int = BRUTE_FORCE_MAX_POINTS,
    progress: bool = True,
) -> List[BenchResult]:
    """Times the boundary pass of every method on one seeded scene.

    Args:
        num_points: Scene size N
        radius_m: Neighborhood radius
        methods: Methods to time, in order
        repeat: Timed repetitions per method, at least 3
        workers: Threads of the grid method, the hardware parallelism when None
        seed: Scene seed
        brute_max_points: The full scan is skipped above this scene size
        progress: Whether to show progress bars

    Returns: One result per timed method

    Raises:
        InvariantViolation: when the grid disagrees with the full scan on a scene
        of at most 5,000 points
    """
    methods = [BenchMethod(m) for m in methods]
    if repeat < BenchResult.MIN_REPETITIONS:
        raise ValueError(
            f"At least {BenchResult.MIN_REPETITIONS} repetitions are needed, "
            f"got {repeat}"
        )
    if num_points < MIN_MEANINGFUL_POINTS:
        _logger.warning(f"timings of {num_points} points are mostly overhead")
    workers = resolve_workers(workers)
    cloud, labels = bench_scene(num_points, seed)
    if num_points <= ORACLE_GATE_MAX_POINTS:
        check_against_oracle(cloud, labels, radius_m, workers)

    results = []
    for method in methods:
        if method is BenchMethod.BRUTE and num_points > brute_max_points:
            _logger.warning(
                f"skipping brute force: {num_points} points exceed {brute_max_points}"
            )
            continue
        method_workers = workers if method is BenchMethod.GRID else 1
        run = _method_runner(method, cloud, labels, radius_m, method_workers)
        times = time_method(run, repeat, method.value, progress)
        result = BenchResult(method, num_points, radius_m, times, method_workers)
        _logger.info(result.summary())
        results.append(result)
    return results
