"""
Core domain types shared by every segerr component: the point cloud, the
per-point label and boundary fields defined over it, the evaluation
configuration and the validated scene bundle.

All types are immutable after construction. Arrays handed out by properties are
read-only views, so instances can be shared freely between concurrent readers.
"""
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Iterator, Mapping, Optional

import numpy as np

from segerr.errors import SceneValidationError
from segerr.names import DErrSampleMode
from segerr.typing import Array

DEFAULT_IGNORE_LABEL = -1
DEFAULT_RADIUS_M = 0.06
DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_MIN_COMPONENT_SIZE = 50


def _frozen(array: Array, dtype) -> Array:
    frozen = np.array(array, dtype=dtype, copy=True)
    frozen.setflags(write=False)
    return frozen


class PointCloud:
    """Positions and optional per-point attributes of N points.

    Args:
      positions: Coordinates in meters, shape [N, 3], stored as float32.
      colors: Optional RGB triples in 0-255, shape [N, 3], stored as uint8.
      normals: Optional unit normals, shape [N, 3], stored as float32.
    """

    def __init__(
        self,
        positions: Array,
        colors: Optional[Array] = None,
        normals: Optional[Array] = None,
    ):
        positions = np.asarray(positions)
        if positions.size == 0:
            positions = positions.reshape(0, 3)
        self._positions = _frozen(positions, np.float32)
        self._colors = None if colors is None else self._checked_colors(colors)
        self._normals = None if normals is None else _frozen(normals, np.float32)
        self.check_dimensions()
        self.check_finite()

    @staticmethod
    def _checked_colors(colors: Array) -> Array:
        colors = np.asarray(colors)
        if colors.size and (colors.min() < 0 or colors.max() > 255):
            raise SceneValidationError("Colors must be integers in [0, 255]")
        return _frozen(colors, np.uint8)

    @property
    def positions(self) -> Array:
        return self._positions

    @property
    def colors(self) -> Optional[Array]:
        return self._colors

    @property
    def normals(self) -> Optional[Array]:
        return self._normals

    @property
    def count(self) -> int:
        """Number of points N."""
        return self._positions.shape[0]

    def __len__(self):
        return self.count

    def check_dimensions(self):
        """Positions are [N, 3] and every optional attribute has N rows."""
        if self._positions.ndim != 2 or self._positions.shape[1] != 3:
            raise SceneValidationError(
                f"Positions must have shape [N, 3], got {self._positions.shape}"
            )
        for name, attribute in (("colors", self._colors), ("normals", self._normals)):
            if attribute is not None and attribute.shape != self._positions.shape:
                raise SceneValidationError(
                    f"Length mismatch: {name} has shape {attribute.shape}, "
                    f"positions have {self._positions.shape}"
                )

    def check_finite(self):
        """Every coordinate is finite."""
        if not np.isfinite(self._positions).all():
            bad = int(np.flatnonzero(~np.isfinite(self._positions).all(axis=1))[0])
            raise SceneValidationError(f"Non-finite coordinate at point {bad}")

    def select(self, indices: Array) -> "PointCloud":
        """Returns the sub-cloud made of ``indices``, in that order."""
        return PointCloud(
            positions=self._positions[indices],
            colors=None if self._colors is None else self._colors[indices],
            normals=None if self._normals is None else self._normals[indices],
        )

    def cloud_like_this(
        self,
        positions: Optional[Array] = None,
        colors: Optional[Array] = None,
        normals: Optional[Array] = None,
    ) -> "PointCloud":
        return PointCloud(
            positions=positions if positions is not None else self.positions,
            colors=colors if colors is not None else self.colors,
            normals=normals if normals is not None else self.normals,
        )

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return bool(
            np.array_equal(self.positions, other.positions)
            and _optional_equal(self.colors, other.colors)
            and _optional_equal(self.normals, other.normals)
        )


class LabelField:
    """Per-point class ids with an ignore sentinel.

    Used for ground truth as well as for predictions.

    Args:
      labels: Class id per point, stored as int32.
      ignore_label: Sentinel marking unannotated points.
    """

    def __init__(self, labels: Array, ignore_label: int = DEFAULT_IGNORE_LABEL):
        self._labels = _frozen(np.asarray(labels).reshape(-1), np.int32)
        self._ignore_label = int(ignore_label)
        self.check_labels()

    @property
    def labels(self) -> Array:
        return self._labels

    @property
    def ignore_label(self) -> int:
        return self._ignore_label

    @property
    def count(self) -> int:
        return self._labels.shape[0]

    @property
    def valid(self) -> Array:
        """Boolean mask of annotated points."""
        return self._labels != self._ignore_label

    def __len__(self):
        return self.count

    def check_labels(self):
        """Every non-ignore label is non-negative."""
        bad = (self._labels < 0) & (self._labels != self._ignore_label)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise SceneValidationError(
                f"Negative label {self._labels[idx]} at point {idx} "
                f"(ignore label is {self._ignore_label})"
            )

    def masked(self, valid: Array) -> "LabelField":
        """Returns a copy whose points outside ``valid`` carry the ignore label."""
        return LabelField(
            np.where(valid, self._labels, self._ignore_label), self._ignore_label
        )

    def select(self, indices: Array) -> "LabelField":
        return LabelField(self._labels[indices], self._ignore_label)

    def labels_like_this(
        self, labels: Optional[Array] = None, ignore_label: Optional[int] = None
    ) -> "LabelField":
        return LabelField(
            labels=labels if labels is not None else self.labels,
            ignore_label=(
                ignore_label if ignore_label is not None else self.ignore_label
            ),
        )

    def __eq__(self, other):
        if not isinstance(other, LabelField):
            return NotImplemented
        return bool(
            self.ignore_label == other.ignore_label
            and np.array_equal(self.labels, other.labels)
        )


class BoundaryMask:
    """Per-point boundary flag, as produced by the boundary pseudo-label pass."""

    def __init__(self, flags: Array):
        self._flags = _frozen(np.asarray(flags).reshape(-1), bool)

    @property
    def flags(self) -> Array:
        return self._flags

    @property
    def num_boundary(self) -> int:
        return int(np.count_nonzero(self._flags))

    def __len__(self):
        return self._flags.shape[0]

    def check_ignore(self, labels: LabelField):
        """Ignore points are never flagged."""
        if len(labels) != len(self):
            raise SceneValidationError(
                f"Length mismatch: mask has {len(self)} points, labels {len(labels)}"
            )
        if (self._flags & ~labels.valid).any():
            raise SceneValidationError("Ignore points can't be boundary points")

    def __eq__(self, other):
        if not isinstance(other, BoundaryMask):
            return NotImplemented
        return bool(np.array_equal(self.flags, other.flags))


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol parameters.

    Attributes:
      num_classes: Number of classes M
      radius_m: Neighborhood radius r in meters
      iou_threshold: Sample qualification threshold theta, as a fraction
      min_component_size: Smallest ground-truth component counted as a region
      ignore_label: Sentinel for unannotated points
      derr_samples: Whether displacement samples are class masks or components
    """

    num_classes: int
    radius_m: float = DEFAULT_RADIUS_M
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    min_component_size: int = DEFAULT_MIN_COMPONENT_SIZE
    ignore_label: int = DEFAULT_IGNORE_LABEL
    derr_samples: DErrSampleMode = DErrSampleMode.CLASS

    def __post_init__(self):
        if self.num_classes < 1:
            raise SceneValidationError("num_classes must be at least 1")
        if not self.radius_m > 0 or not np.isfinite(self.radius_m):
            raise SceneValidationError(
                f"radius_m must be positive, got {self.radius_m}"
            )
        if not 0 < self.iou_threshold < 1:
            raise SceneValidationError(
                f"iou_threshold must be in (0, 1), got {self.iou_threshold}"
            )
        if self.min_component_size < 1:
            raise SceneValidationError("min_component_size must be at least 1")
        if not isinstance(self.derr_samples, DErrSampleMode):
            object.__setattr__(self, "derr_samples", DErrSampleMode(self.derr_samples))

    def config_like_this(self, **changes) -> "EvalConfig":
        fields = {
            "num_classes": self.num_classes,
            "radius_m": self.radius_m,
            "iou_threshold": self.iou_threshold,
            "min_component_size": self.min_component_size,
            "ignore_label": self.ignore_label,
            "derr_samples": self.derr_samples,
        }
        fields.update(changes)
        return EvalConfig(**fields)


class ClassGroups(Mapping):
    """Named, pairwise disjoint sets of class ids, e.g. head/common/tail.

    Args:
      groups: group name to class ids
      num_classes: When given, every id must lie in [0, num_classes).
    """

    def __init__(
        self, groups: Mapping[str, Iterable[int]], num_classes: Optional[int] = None
    ):
        self._groups: Dict[str, FrozenSet[int]] = {
            str(name): frozenset(int(c) for c in ids) for name, ids in groups.items()
        }
        self.check_disjoint()
        if num_classes is not None:
            self.check_num_classes(num_classes)

    def check_disjoint(self):
        seen: Dict[int, str] = {}
        for name, ids in self._groups.items():
            for class_id in sorted(ids):
                if class_id in seen:
                    raise SceneValidationError(
                        f"Groups {seen[class_id]} and {name} overlap "
                        f"on class {class_id}"
                    )
                seen[class_id] = name

    def check_num_classes(self, num_classes: int):
        for name, ids in self._groups.items():
            bad = [c for c in ids if not 0 <= c < num_classes]
            if bad:
                raise SceneValidationError(
                    f"Group {name} holds class ids outside [0, {num_classes}): "
                    f"{sorted(bad)}"
                )

    def __getitem__(self, name: str) -> FrozenSet[int]:
        return self._groups[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._groups)

    def __len__(self):
        return len(self._groups)

    def to_dict(self) -> Dict[str, list]:
        return {name: sorted(ids) for name, ids in self._groups.items()}

    def __eq__(self, other):
        if isinstance(other, ClassGroups):
            return self._groups == other._groups
        return NotImplemented

    def __repr__(self):
        return f"ClassGroups({self.to_dict()})"


class Scene:
    """A validated (cloud, ground truth, prediction, configuration) bundle.

    Only :func:`validate_scene` should build these.
    """

    def __init__(
        self, cloud: PointCloud, gt: LabelField, pred: LabelField, cfg: EvalConfig
    ):
        self._cloud = cloud
        self._gt = gt
        self._pred = pred
        self._cfg = cfg

    @property
    def cloud(self) -> PointCloud:
        return self._cloud

    @property
    def gt(self) -> LabelField:
        return self._gt

    @property
    def pred(self) -> LabelField:
        return self._pred

    @property
    def cfg(self) -> EvalConfig:
        return self._cfg

    @property
    def valid(self) -> Array:
        """Points annotated in the ground truth."""
        return self._gt.valid

    @property
    def masked_pred(self) -> LabelField:
        """The prediction restricted to the annotated points."""
        return self._pred.masked(self._gt.valid)

    def swapped(self) -> "Scene":
        """The same scene with ground truth and prediction exchanged."""
        return validate_scene(self.cloud, self.pred, self.gt, self.cfg)

    def __len__(self):
        return self._cloud.count


def validate_scene(
    cloud: PointCloud, gt: LabelField, pred: LabelField, cfg: EvalConfig
) -> Scene:
    """Checks every cross-object invariant of an evaluation input.

    Args:
        cloud: The points
        gt: Ground-truth labels, may contain the ignore label
        pred: Predicted labels, every point must be predicted
        cfg: Evaluation configuration

    Returns: A :class:`Scene` bundle

    Raises:
        SceneValidationError: on length mismatch, out of range labels, non-finite
        coordinates or an ignore label inside the prediction.
    """
    for name, field in (("ground truth", gt), ("prediction", pred)):
        if len(field) != cloud.count:
            raise SceneValidationError(
                f"Length mismatch: {name} has {len(field)} labels, "
                f"cloud has {cloud.count} points"
            )
    cloud.check_finite()
    if gt.ignore_label != cfg.ignore_label:
        raise SceneValidationError(
            f"Ground truth ignore label {gt.ignore_label} differs from the "
            f"configured {cfg.ignore_label}"
        )
    if (pred.labels == cfg.ignore_label).any():
        raise SceneValidationError("prediction contains ignore label")
    for name, field in (("ground truth", gt), ("prediction", pred)):
        labels = field.labels[field.labels != cfg.ignore_label]
        if labels.size and labels.max() >= cfg.num_classes:
            raise SceneValidationError(
                f"{name} label {labels.max()} is not below num_classes "
                f"{cfg.num_classes}"
            )
    return Scene(
        cloud, gt, pred.labels_like_this(ignore_label=cfg.ignore_label), cfg
    )


def _optional_equal(a: Optional[Array], b: Optional[Array]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return bool(np.array_equal(a, b))

