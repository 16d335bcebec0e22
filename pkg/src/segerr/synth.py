"""
Deterministic synthetic scenes whose labels are a pure function of position, and
label corruptions that each induce one kind of segmentation error.

All randomness comes from a Philox-4x64 counter-based generator keyed directly
with the 64-bit scene seed, so a spec always produces the same bytes.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from logging import getLogger
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from segerr.apis.data import (
    DEFAULT_MIN_COMPONENT_SIZE,
    DEFAULT_RADIUS_M,
    LabelField,
    PointCloud,
)
from segerr.apis.data_loading import LabeledScene, SceneSource
from segerr.apis.processing import Corruptor
from segerr.boundary import compute_boundary_mask
from segerr.components import component_ids, components_from_ids, extract_components
from segerr.errors import SceneValidationError
from segerr.names import CorruptionMode, GeneratorKind
from segerr.spatial import as_float64, build_grid, iter_neighbor_pairs, radius_neighbors
from segerr.typing import Array

_logger = getLogger(__name__)

_MAX_SEED = 2**64
_NO_LABEL = np.iinfo(np.int64).max
DEFAULT_PATCH_RADIUS_M = 0.03


def make_rng(seed: int) -> np.random.Generator:
    """Philox-4x64 generator whose key is the seed itself."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic scene.

    Attributes:
        kind: The generator
        extent: Size of the scene box along x, y, z in meters; lattice generators
        only use x and y
        pitch: Lattice spacing in meters
        num_points: Number of points of a random-blobs scene
        split: x coordinate where a two-planes scene changes label
        tile: Checkerboard tile size in meters, a multiple of the pitch
        num_spheres: Number of spheres of a spheres-in-box scene
        sphere_radius: Sphere radius in meters
        sphere_spacing: Distance between consecutive sphere centers
        floor: Whether a spheres-in-box scene has a floor plane under the spheres
        floor_gap: Clearance between the floor and the bottom of the spheres
        num_blobs: Number of label centers of a random-blobs scene
        num_classes: Number of classes M
        jitter: Standard deviation of the gaussian position noise, 0 for none
        seed: 64-bit seed
    """

    kind: GeneratorKind
    extent: Tuple[float, float, float] = (1.0, 1.0, 0.0)
    pitch: float = 0.02
    num_points: int = 5000
    split: float = 0.5
    tile: float = 0.1
    num_spheres: int = 2
    sphere_radius: float = 0.1
    sphere_spacing: float = 1.0
    floor: bool = True
    floor_gap: float = 0.2
    num_blobs: int = 8
    num_classes: int = 2
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", GeneratorKind(self.kind))
        extent = tuple(float(e) for e in self.extent)
        object.__setattr__(self, "extent", extent)
        if len(extent) != 3 or min(extent) < 0 or not all(np.isfinite(extent)):
            raise SceneValidationError(f"Invalid extent {self.extent}")
        if extent[0] <= 0 or extent[1] <= 0:
            raise SceneValidationError("The x and y extents must be positive")
        if not self.pitch > 0:
            raise SceneValidationError(f"pitch must be positive, got {self.pitch}")
        if not 0 <= self.seed < _MAX_SEED:
            raise SceneValidationError("seed must be a 64-bit unsigned integer")
        if self.num_classes < 2:
            raise SceneValidationError("A synthetic scene needs at least 2 classes")
        if self.jitter < 0:
            raise SceneValidationError("jitter can't be negative")
        if self.kind is GeneratorKind.CHECKERBOARD:
            ratio = self.tile / self.pitch
            if self.tile <= 0 or abs(ratio - round(ratio)) > 1e-6:
                raise SceneValidationError(
                    f"tile {self.tile} must be a positive multiple of "
                    f"pitch {self.pitch}"
                )
        if self.kind is GeneratorKind.SPHERES_IN_BOX:
            if self.num_spheres < 1 or self.sphere_radius <= 0:
                raise SceneValidationError(
                    "Need at least one sphere of positive radius"
                )
            if self.floor_gap < 0:
                raise SceneValidationError("floor_gap can't be negative")
        if self.kind is GeneratorKind.RANDOM_BLOBS:
            if self.num_points < 1 or self.num_blobs < 1:
                raise SceneValidationError("Need at least one point and one blob")

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["kind"] = self.kind.value
        result["extent"] = list(self.extent)
        return result

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(document) - known)
        if unknown:
            raise SceneValidationError(f"Unknown scene spec keys: {unknown}")
        if "kind" not in document:
            raise SceneValidationError("Scene spec is missing the kind")
        return cls(**document)

    def spec_like_this(self, **changes) -> "SceneSpec":
        return SceneSpec(**{**asdict(self), **changes})


def _lattice_steps(length: float, pitch: float) -> int:
    return int(np.floor(length / pitch + 1e-9)) + 1


def _plane_lattice(spec: SceneSpec) -> Tuple[Array, Array, Array]:
    """Integer lattice indices and positions of the z = 0 plane."""
    nx = _lattice_steps(spec.extent[0], spec.pitch)
    ny = _lattice_steps(spec.extent[1], spec.pitch)
    i, j = (a.ravel() for a in np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij"))
    positions = np.stack((i * spec.pitch, j * spec.pitch, np.zeros(i.shape[0])), axis=1)
    return i, j, positions


def _two_planes(spec: SceneSpec, rng: np.random.Generator) -> Tuple[Array, Array]:
    i, _, positions = _plane_lattice(spec)
    split_index = int(np.ceil(spec.split / spec.pitch - 1e-9))
    return positions, (i >= split_index).astype(np.int32)


def _checkerboard(spec: SceneSpec, rng: np.random.Generator) -> Tuple[Array, Array]:
    i, j, positions = _plane_lattice(spec)
    per_tile = int(round(spec.tile / spec.pitch))
    return positions, ((i // per_tile + j // per_tile) % spec.num_classes).astype(
        np.int32
    )


def _spheres_in_box(spec: SceneSpec, rng: np.random.Generator) -> Tuple[Array, Array]:
    radius = spec.sphere_radius
    steps = int(np.floor(radius / spec.pitch + 1e-9))
    offsets = np.stack(
        [
            a.ravel()
            for a in np.meshgrid(*[np.arange(-steps, steps + 1)] * 3, indexing="ij")
        ],
        axis=1,
    ) * spec.pitch
    offsets = offsets[(offsets**2).sum(axis=1) <= radius * radius + 1e-12]

    positions: List[Array] = []
    labels: List[Array] = []
    if spec.floor:
        _, _, floor = _plane_lattice(spec)
        positions.append(floor)
        labels.append(np.zeros(floor.shape[0], dtype=np.int32))
    for k in range(spec.num_spheres):
        center = np.array(
            [
                spec.extent[0] / 2
                + (k - (spec.num_spheres - 1) / 2) * spec.sphere_spacing,
                spec.extent[1] / 2,
                spec.floor_gap + radius,
            ]
        )
        positions.append(center + offsets)
        label = 1 + k % (spec.num_classes - 1)
        labels.append(np.full(offsets.shape[0], label, dtype=np.int32))
    return np.concatenate(positions), np.concatenate(labels)


def _random_blobs(spec: SceneSpec, rng: np.random.Generator) -> Tuple[Array, Array]:
    extent = np.asarray(spec.extent)
    positions = rng.uniform(0.0, 1.0, (spec.num_points, 3)) * extent
    centers = rng.uniform(0.0, 1.0, (spec.num_blobs, 3)) * extent
    positions = positions.astype(np.float32).astype(np.float64)
    closest = np.full(spec.num_points, np.inf)
    nearest = np.zeros(spec.num_points, dtype=np.int64)
    # ties go to the lower blob index
    for k, center in enumerate(centers):
        distances = ((positions - center) ** 2).sum(axis=1)
        closer = distances < closest
        closest[closer] = distances[closer]
        nearest[closer] = k
    return positions, (nearest % spec.num_classes).astype(np.int32)


_GENERATORS = {
    GeneratorKind.TWO_PLANES: _two_planes,
    GeneratorKind.CHECKERBOARD: _checkerboard,
    GeneratorKind.SPHERES_IN_BOX: _spheres_in_box,
    GeneratorKind.RANDOM_BLOBS: _random_blobs,
}


def generate_scene(spec: SceneSpec) -> Tuple[PointCloud, LabelField]:
    """Builds the scene a spec describes.

    Args:
        spec: A validated spec

    Returns: The cloud and its ground truth, bitwise identical for equal specs
    """
    rng = make_rng(spec.seed)
    positions, labels = _GENERATORS[spec.kind](spec, rng)
    if spec.jitter > 0:
        positions = positions + rng.normal(0.0, spec.jitter, positions.shape)
    _logger.debug(f"{spec.kind.value} scene with {positions.shape[0]} points")
    return PointCloud(positions), LabelField(labels)


def _as_field(labels: Array, valid: Array) -> LabelField:
    return LabelField(np.where(valid, labels, -1), -1)


class RegionSwapCorruptor(Corruptor):
    """Relabels whole ground-truth components to the next class.

    The magnitude is the number of components.
    """

    def __init__(
        self,
        num_classes: int,
        radius_m: float = DEFAULT_RADIUS_M,
        min_component_size: int = DEFAULT_MIN_COMPONENT_SIZE,
    ):
        super().__init__(num_classes)
        self.radius_m = radius_m
        self.min_component_size = min_component_size

    def _corrupt(self, cloud, labels, valid, magnitude, rng) -> Array:
        components = [
            c
            for c in extract_components(cloud, _as_field(labels, valid), self.radius_m)
            if c.size >= self.min_component_size
        ]
        count = min(int(magnitude), len(components))
        out = labels.copy()
        if count == 0:
            return out
        for idx in np.sort(rng.choice(len(components), size=count, replace=False)):
            component = components[idx]
            out[component.point_indices] = (component.label + 1) % self.num_classes
        _logger.debug(f"swapped the class of {count} components")
        return out

    @property
    def mode(self) -> CorruptionMode:
        return CorruptionMode.REGION_SWAP


class ContourShiftCorruptor(Corruptor):
    """Moves the contour of one class outwards (dilate) or inwards (erode).

    The magnitude is the shift in meters. Dilation gives the class to every
    point within the magnitude of it; erosion gives every point of the class
    within the magnitude of another class the smallest such neighbor label.
    The search grid never gets finer than ``radius_m``.
    """

    def __init__(
        self,
        num_classes: int,
        dilate: bool = True,
        target_class: int = 0,
        radius_m: float = DEFAULT_RADIUS_M,
    ):
        super().__init__(num_classes)
        if not 0 <= target_class < num_classes:
            raise SceneValidationError(
                f"target_class {target_class} is not a class of {num_classes}"
            )
        self.dilate = dilate
        self.target_class = target_class
        self.radius_m = radius_m

    def _corrupt(self, cloud, labels, valid, magnitude, rng) -> Array:
        out = labels.copy()
        if magnitude == 0 or cloud.count == 0:
            return out
        is_target = valid & (labels == self.target_class)
        if self.dilate:
            sources, receivers = is_target, valid & ~is_target
        else:
            sources, receivers = valid & ~is_target, is_target
        grid = build_grid(cloud, max(magnitude, self.radius_m))
        closest = np.full(cloud.count, _NO_LABEL, dtype=np.int64)
        for owners, neighbors in iter_neighbor_pairs(
            grid, as_float64(cloud), np.flatnonzero(receivers), magnitude
        ):
            keep = sources[neighbors]
            np.minimum.at(closest, owners[keep], labels[neighbors[keep]])
        moved = closest != _NO_LABEL
        out[moved] = closest[moved]
        _logger.debug(f"{np.count_nonzero(moved)} points moved across the contour")
        return out

    @property
    def mode(self) -> CorruptionMode:
        return CorruptionMode.DILATE if self.dilate else CorruptionMode.ERODE


class MergeCorruptor(Corruptor):
    """Relabels components to the most frequent label bordering them, erasing
    the boundary between them and their neighbor.

    The magnitude is the number of components. A component touching an already
    merged one is left alone.
    """

    def __init__(
        self,
        num_classes: int,
        radius_m: float = DEFAULT_RADIUS_M,
        min_component_size: int = DEFAULT_MIN_COMPONENT_SIZE,
    ):
        super().__init__(num_classes)
        self.radius_m = radius_m
        self.min_component_size = min_component_size

    def _corrupt(self, cloud, labels, valid, magnitude, rng) -> Array:
        out = labels.copy()
        if int(magnitude) == 0 or not valid.any():
            return out
        field = _as_field(labels, valid)
        grid = build_grid(cloud, self.radius_m)
        ids = component_ids(cloud, field, self.radius_m, grid)
        components = components_from_ids(ids, field)

        owner_roots, neighbor_labels, neighbor_roots = [], [], []
        for owners, neighbors in iter_neighbor_pairs(
            grid, as_float64(cloud), np.flatnonzero(valid), self.radius_m
        ):
            keep = valid[neighbors] & (labels[neighbors] != labels[owners])
            owner_roots.append(ids[owners[keep]])
            neighbor_labels.append(labels[neighbors[keep]])
            neighbor_roots.append(ids[neighbors[keep]])
        owner_roots = np.concatenate(owner_roots)
        neighbor_labels = np.concatenate(neighbor_labels)
        neighbor_roots = np.concatenate(neighbor_roots)

        blocked = set()
        merged = 0
        for idx in rng.permutation(len(components)):
            if merged == int(magnitude):
                break
            component = components[idx]
            if component.size < self.min_component_size or component.root in blocked:
                continue
            touching = owner_roots == component.root
            if not touching.any():
                continue
            out[component.point_indices] = np.argmax(
                np.bincount(neighbor_labels[touching])
            )
            blocked.add(component.root)
            blocked.update(np.unique(neighbor_roots[touching]).tolist())
            merged += 1
        _logger.debug(f"merged {merged} components into their neighbors")
        return out

    @property
    def mode(self) -> CorruptionMode:
        return CorruptionMode.MERGE


class SpeckleCorruptor(Corruptor):
    """Paints small patches of a wrong class far away from every true boundary.

    The magnitude is the number of patches. Patch centers keep a distance of more
    than ``patch_radius + 2 * radius_m`` to any other class, so the predicted
    neighborhood of every true boundary point is untouched.
    """

    def __init__(
        self,
        num_classes: int,
        radius_m: float = DEFAULT_RADIUS_M,
        patch_radius: float = DEFAULT_PATCH_RADIUS_M,
    ):
        super().__init__(num_classes)
        self.radius_m = radius_m
        self.patch_radius = patch_radius

    def _corrupt(self, cloud, labels, valid, magnitude, rng) -> Array:
        out = labels.copy()
        if int(magnitude) == 0 or not valid.any():
            return out
        margin = self.patch_radius + 2 * self.radius_m
        zone = compute_boundary_mask(cloud, _as_field(labels, valid), margin).flags
        candidates = np.flatnonzero(valid & ~zone)
        if candidates.shape[0] == 0:
            _logger.warning("no point is far enough from a boundary for a speckle")
            return out
        count = min(int(magnitude), candidates.shape[0])
        centers = np.sort(rng.choice(candidates, size=count, replace=False))
        grid = build_grid(cloud, self.patch_radius)
        for center in centers:
            patch = np.append(
                radius_neighbors(grid, cloud, int(center), self.patch_radius), center
            )
            patch = patch[valid[patch]]
            out[patch] = (labels[center] + 1) % self.num_classes
        _logger.debug(f"painted {count} speckle patches")
        return out

    @property
    def mode(self) -> CorruptionMode:
        return CorruptionMode.SPECKLE


def make_corruptor(
    mode: CorruptionMode,
    num_classes: int,
    radius_m: float = DEFAULT_RADIUS_M,
    target_class: int = 0,
) -> Corruptor:
    mode = CorruptionMode(mode)
    if mode is CorruptionMode.REGION_SWAP:
        return RegionSwapCorruptor(num_classes, radius_m)
    if mode is CorruptionMode.MERGE:
        return MergeCorruptor(num_classes, radius_m)
    if mode is CorruptionMode.SPECKLE:
        return SpeckleCorruptor(num_classes, radius_m)
    return ContourShiftCorruptor(
        num_classes,
        dilate=mode is CorruptionMode.DILATE,
        target_class=target_class,
        radius_m=radius_m,
    )


def corrupt_labels(
    gt: LabelField,
    cloud: PointCloud,
    mode: CorruptionMode,
    magnitude: float,
    seed: int,
    num_classes: Optional[int] = None,
    radius_m: float = DEFAULT_RADIUS_M,
    target_class: int = 0,
) -> LabelField:
    """Turns a ground truth into a synthetic prediction with one kind of error.

    Args:
        gt: The ground truth
        cloud: The points
        mode: The corruption
        magnitude: Number of components or patches, or a distance in meters for
        contour shifts
        seed: 64-bit seed
        num_classes: Number of classes, one more than the largest label when None
        radius_m: Neighborhood radius the corruption is designed for
        target_class: Class whose contour a dilation or erosion shifts

    Returns: A prediction for every point, deterministic per seed

    Raises:
        ValueError: for an unknown mode
    """
    mode = CorruptionMode(mode)
    if num_classes is None:
        present = gt.labels[gt.valid]
        num_classes = max(2, int(present.max()) + 1 if present.size else 2)
    present = gt.labels[gt.valid]
    if present.size and present.max() >= num_classes:
        raise SceneValidationError(
            f"Label {present.max()} is not below num_classes {num_classes}"
        )
    corruptor = make_corruptor(mode, num_classes, radius_m, target_class)
    return corruptor(cloud, gt, magnitude, make_rng(seed))


class SyntheticCase(NamedTuple):
    """A scene spec with the corruption turning its ground truth into a prediction;
    no corruption predicts the ground truth itself."""

    spec: SceneSpec
    mode: Optional[CorruptionMode] = None
    magnitude: float = 0.0
    seed: int = 0


_MIXED_CORRUPTIONS: Sequence[Tuple[Optional[CorruptionMode], float]] = (
    (None, 0.0),
    (CorruptionMode.REGION_SWAP, 1),
    (CorruptionMode.DILATE, 0.04),
    (CorruptionMode.ERODE, 0.04),
    (CorruptionMode.MERGE, 2),
    (CorruptionMode.SPECKLE, 3),
)


class SyntheticSceneSource(SceneSource):
    """An indexable family of seeded synthetic (scene, prediction) pairs."""

    def __init__(
        self, cases: Sequence[SyntheticCase], radius_m: float = DEFAULT_RADIUS_M
    ):
        self._cases = list(cases)
        self._radius_m = radius_m

    @classmethod
    def mixed(cls, count: int, seed: int = 0, radius_m: float = DEFAULT_RADIUS_M):
        """``count`` small scenes cycling through every generator and corruption.

        Every scene holds at most 5,000 points.
        """
        cases = []
        for i in range(count):
            kind = list(GeneratorKind)[i % len(GeneratorKind)]
            spec = _mixed_spec(kind, i, seed)
            mode, magnitude = _MIXED_CORRUPTIONS[i % len(_MIXED_CORRUPTIONS)]
            cases.append(SyntheticCase(spec, mode, magnitude, (seed + i) % _MAX_SEED))
        return cls(cases, radius_m)

    @property
    def cases(self) -> List[SyntheticCase]:
        return list(self._cases)

    def __getitem__(self, idx: int) -> LabeledScene:
        case = self._cases[idx]
        cloud, gt = generate_scene(case.spec)
        if case.mode is None:
            pred = gt
        else:
            pred = corrupt_labels(
                gt,
                cloud,
                case.mode,
                case.magnitude,
                case.seed,
                num_classes=case.spec.num_classes,
                radius_m=self._radius_m,
            )
        mode = case.mode.value if case.mode is not None else "clean"
        return LabeledScene(f"{idx}-{case.spec.kind.value}-{mode}", cloud, gt, pred)

    def __len__(self):
        return len(self._cases)

    @property
    def name(self) -> str:
        return "synthetic"

    @property
    def signature(self) -> str:
        document = [
            {
                "spec": case.spec.to_dict(),
                "mode": None if case.mode is None else case.mode.value,
                "magnitude": case.magnitude,
                "seed": case.seed,
            }
            for case in self._cases
        ]
        payload = json.dumps({"radius_m": self._radius_m, "cases": document})
        return hashlib.sha256(payload.encode()).hexdigest()


def _mixed_spec(kind: GeneratorKind, i: int, seed: int) -> SceneSpec:
    scene_seed = (seed * 1_000_003 + i) % _MAX_SEED
    if kind is GeneratorKind.TWO_PLANES:
        return SceneSpec(
            kind, extent=(0.6 + 0.1 * (i % 3), 0.6, 0.0), split=0.3, seed=scene_seed
        )
    if kind is GeneratorKind.CHECKERBOARD:
        return SceneSpec(
            kind,
            extent=(0.8, 0.8, 0.0),
            tile=0.1 if i % 2 else 0.2,
            num_classes=2 + i % 2,
            seed=scene_seed,
        )
    if kind is GeneratorKind.SPHERES_IN_BOX:
        return SceneSpec(
            kind, extent=(1.0, 0.6, 0.0), sphere_spacing=0.5, seed=scene_seed
        )
    return SceneSpec(
        kind,
        extent=(1.0, 1.0, 0.3 * (i % 2)),
        num_points=2000 + 500 * (i % 5),
        num_blobs=6,
        num_classes=3,
        seed=scene_seed,
    )
