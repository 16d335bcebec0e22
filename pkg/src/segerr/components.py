"""
Connected components of the same-label radius graph: two annotated points are
adjacent when they share a label and lie within distance r of each other.
Components are the regions ("samples") the region classification error counts.
"""
from dataclasses import dataclass, field
from functools import partial
from logging import getLogger
from typing import List, Optional, Tuple

import numpy as np

from segerr.apis.data import LabelField, PointCloud
from segerr.errors import SceneValidationError
from segerr.spatial import (
    SpatialGrid,
    as_float64,
    build_grid,
    iter_neighbor_pairs,
    parallel_map,
)
from segerr.typing import Array
from segerr.utils import chunk_slices, resolve_workers

_logger = getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Component:
    """A maximal connected set of same-label points.

    Attributes:
        label: The class id shared by every member
        point_indices: Sorted member indices
    """

    label: int
    point_indices: Array = field(repr=False)

    def __post_init__(self):
        indices = np.array(self.point_indices, dtype=np.int64, copy=True)
        if indices.size == 0:
            raise SceneValidationError("A component can't be empty")
        indices.setflags(write=False)
        object.__setattr__(self, "point_indices", indices)

    @property
    def size(self) -> int:
        return self.point_indices.shape[0]

    @property
    def root(self) -> int:
        """Smallest member index."""
        return int(self.point_indices[0])

    def __eq__(self, other):
        if not isinstance(other, Component):
            return NotImplemented
        return self.label == other.label and np.array_equal(
            self.point_indices, other.point_indices
        )


class DisjointSet:
    """Union-find over ``num_vertices`` integer vertices.

    Every parent pointer goes to a smaller index, so once all merges are done
    the root of a set is its smallest member.
    """

    def __init__(self, num_vertices: int):
        self.parents = np.arange(num_vertices, dtype=np.int64)

    def find(self, index: int) -> int:
        parents = self.parents
        root = index
        while root != parents[root]:
            root = parents[root]
        while parents[index] != root:
            parents[index], index = root, parents[index]
        return int(root)

    def merge(self, a: int, b: int):
        a = self.find(a)
        b = self.find(b)
        if a != b:
            self.parents[max(a, b)] = min(a, b)

    def merge_pairs(self, a: Array, b: Array):
        """Merges the sets of every pair ``(a[k], b[k])``.

        Each round hooks every root that touches a smaller root onto the smallest
        one it touches, then compresses all paths. Every active root is either
        hooked or hooked onto, so the number of rounds is logarithmic.
        """
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        rounds = 0
        while a.shape[0]:
            self._compress()
            root_a, root_b = self.parents[a], self.parents[b]
            differ = root_a != root_b
            if not differ.any():
                break
            a, b = a[differ], b[differ]
            root_a, root_b = root_a[differ], root_b[differ]
            np.minimum.at(
                self.parents,
                np.maximum(root_a, root_b),
                np.minimum(root_a, root_b),
            )
            rounds += 1
        self._compress()
        _logger.debug(f"union-find converged after {rounds} hooking rounds")

    def _compress(self):
        a = self.parents
        b = a[a]
        while (a != b).any():
            a = b
            b = a[a]
        self.parents = a

    def get_components(self) -> Array:
        """Root of every vertex."""
        self._compress()
        return self.parents.copy()

    def get_num_components(self) -> int:
        return int(np.count_nonzero(self.get_components() == np.arange(len(self))))

    def __len__(self):
        return self.parents.shape[0]


def component_ids(
    cloud: PointCloud,
    labels: LabelField,
    r: float,
    grid: Optional[SpatialGrid] = None,
    workers: Optional[int] = None,
) -> Array:
    """Component root (smallest member index) of every point, -1 for ignore points.

    Args:
        cloud: The points
        labels: Labels over ``cloud``
        r: Adjacency radius in meters
        grid: A grid over ``cloud`` with ``cell_size >= r``, built when missing
        workers: Number of threads used for edge generation
    """
    if labels.count != cloud.count:
        raise SceneValidationError(
            f"Length mismatch: labels has {labels.count} entries, cloud has "
            f"{cloud.count} points"
        )
    ids = np.full(cloud.count, -1, dtype=np.int64)
    valid_points = np.flatnonzero(labels.valid)
    if valid_points.shape[0] == 0:
        return ids
    if grid is None:
        grid = build_grid(cloud, r)
    workers = resolve_workers(workers)

    edges = partial(
        _same_label_edges,
        grid=grid,
        positions=as_float64(cloud),
        values=labels.labels,
        valid=labels.valid,
        r=r,
        query=valid_points,
    )
    found = parallel_map(edges, chunk_slices(valid_points.shape[0], workers), workers)
    sources = np.concatenate([a for a, _ in found])
    targets = np.concatenate([b for _, b in found])
    _logger.debug(f"{sources.shape[0]} same-label edges over {cloud.count} points")

    forest = DisjointSet(cloud.count)
    forest.merge_pairs(sources, targets)
    ids[valid_points] = forest.get_components()[valid_points]
    return ids


def _same_label_edges(
    chunk: slice,
    grid: SpatialGrid,
    positions: Array,
    values: Array,
    valid: Array,
    r: float,
    query: Array,
) -> Tuple[Array, Array]:
    sources, targets = [], []
    for owners, neighbors in iter_neighbor_pairs(grid, positions, query[chunk], r):
        keep = (owners < neighbors) & valid[neighbors]
        keep &= values[neighbors] == values[owners]
        sources.append(owners[keep])
        targets.append(neighbors[keep])
    return np.concatenate(sources), np.concatenate(targets)


def components_from_ids(ids: Array, labels: LabelField) -> List[Component]:
    """Groups points by component root, ordered by (label, smallest member)."""
    members = np.flatnonzero(ids >= 0)
    if members.shape[0] == 0:
        return []
    order = np.argsort(ids[members], kind="stable")
    members = members[order]
    roots, starts = np.unique(ids[members], return_index=True)
    groups = np.split(members, starts[1:])
    components = [
        Component(label=int(labels.labels[root]), point_indices=group)
        for root, group in zip(roots, groups)
    ]
    components.sort(key=lambda c: (c.label, c.root))
    return components


def extract_components(
    cloud: PointCloud,
    labels: LabelField,
    r: float,
    grid: Optional[SpatialGrid] = None,
    workers: Optional[int] = None,
) -> List[Component]:
    """Connected components of the same-label radius-``r`` graph.

    The components partition the annotated points.

    Returns: Components sorted by (label, smallest member index)
    """
    components = components_from_ids(
        component_ids(cloud, labels, r, grid, workers), labels
    )
    _logger.debug(f"{len(components)} components over {cloud.count} points")
    return components


def plurality_predicted_label(component: Component, pred: LabelField) -> int:
    """The predicted label most frequent among the members, smallest id on ties."""
    return int(np.argmax(np.bincount(pred.labels[component.point_indices])))
