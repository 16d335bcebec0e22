"""
Traditional segmentation metrics and the four error metrics.

Every error metric is a ratio of integer counters. Counters are collected per
scene by :class:`~segerr.apis.metrics.SceneCounter` implementations and the
metrics are recomputed from pooled counters, so aggregating scenes is a
micro-average (sum the counters, divide once).
"""
from dataclasses import dataclass
from functools import cached_property
from logging import getLogger
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from segerr.apis.data import (
    BoundaryMask,
    ClassGroups,
    EvalConfig,
    LabelField,
    PointCloud,
    Scene,
    validate_scene,
)
from segerr.apis.metrics import ErrorMetric, SceneCounter
from segerr.apis.results import MetricsReport
from segerr.boundary import (
    binary_boundary_zone,
    boundary_overlap_counts,
    compute_boundary_mask,
)
from segerr.components import (
    Component,
    component_ids,
    extract_components,
    plurality_predicted_label,
)
from segerr.errors import SceneValidationError
from segerr.names import CounterType, DErrSampleMode, MetricType
from segerr.spatial import SpatialGrid, build_grid
from segerr.typing import Array
from segerr.utils import resolve_workers

_logger = getLogger(__name__)

DEFAULT_SWEEP_RADII = (0.02, 0.04, 0.06, 0.08, 0.10)


class FalseResponseError(ErrorMetric):
    """Share of predicted boundary points with no ground-truth boundary point."""

    def _calculate_metric(self, counters: Mapping[CounterType, int]) -> Optional[float]:
        pred = counters[CounterType.PRED_BOUNDARY]
        if pred == 0:
            return None
        return (pred - counters[CounterType.BOUNDARY_OVERLAP]) / pred

    @property
    def type(self) -> MetricType:
        return MetricType.FERR

    @property
    def required_counters(self) -> Sequence[CounterType]:
        return CounterType.PRED_BOUNDARY, CounterType.BOUNDARY_OVERLAP


class MergeError(ErrorMetric):
    """Share of ground-truth boundary points the prediction does not reproduce."""

    def _calculate_metric(self, counters: Mapping[CounterType, int]) -> Optional[float]:
        gt = counters[CounterType.GT_BOUNDARY]
        if gt == 0:
            return None
        return (gt - counters[CounterType.BOUNDARY_OVERLAP]) / gt

    @property
    def type(self) -> MetricType:
        return MetricType.MERR

    @property
    def required_counters(self) -> Sequence[CounterType]:
        return CounterType.GT_BOUNDARY, CounterType.BOUNDARY_OVERLAP


class RegionError(ErrorMetric):
    """Share of qualifying regions predicted with the wrong class."""

    def _calculate_metric(self, counters: Mapping[CounterType, int]) -> Optional[float]:
        total = counters[CounterType.RERR_ALL]
        if total == 0:
            return None
        return (total - counters[CounterType.RERR_TP]) / total

    @property
    def type(self) -> MetricType:
        return MetricType.RERR

    @property
    def required_counters(self) -> Sequence[CounterType]:
        return CounterType.RERR_TP, CounterType.RERR_ALL


class DisplacementError(ErrorMetric):
    """Share of the ground-truth interior contour strip the prediction misses."""

    def _calculate_metric(self, counters: Mapping[CounterType, int]) -> Optional[float]:
        den = counters[CounterType.DERR_DEN]
        if den == 0:
            return None
        return (den - counters[CounterType.DERR_NUM]) / den

    @property
    def type(self) -> MetricType:
        return MetricType.DERR

    @property
    def required_counters(self) -> Sequence[CounterType]:
        return CounterType.DERR_NUM, CounterType.DERR_DEN


ERROR_METRICS: Sequence[ErrorMetric] = (
    FalseResponseError(),
    MergeError(),
    RegionError(),
    DisplacementError(),
)


class SceneContext:
    """One scene with the intermediate results its counters share.

    The grid, both boundary masks and both component labelings are computed at
    most once per scene.
    """

    def __init__(self, scene: Scene, workers: Optional[int] = None):
        self._scene = scene
        self._workers = resolve_workers(workers)

    @property
    def scene(self) -> Scene:
        return self._scene

    @property
    def cfg(self) -> EvalConfig:
        return self._scene.cfg

    @property
    def workers(self) -> int:
        return self._workers

    @cached_property
    def grid(self) -> Optional[SpatialGrid]:
        if self._scene.cloud.count == 0:
            return None
        return build_grid(self._scene.cloud, self.cfg.radius_m)

    @cached_property
    def gt_boundary(self) -> BoundaryMask:
        return compute_boundary_mask(
            self._scene.cloud,
            self._scene.gt,
            self.cfg.radius_m,
            self.grid,
            self._workers,
        )

    @cached_property
    def pred_boundary(self) -> BoundaryMask:
        return compute_boundary_mask(
            self._scene.cloud,
            self._scene.masked_pred,
            self.cfg.radius_m,
            self.grid,
            self._workers,
        )

    @cached_property
    def gt_components(self) -> List[Component]:
        return extract_components(
            self._scene.cloud,
            self._scene.gt,
            self.cfg.radius_m,
            self.grid,
            self._workers,
        )

    @cached_property
    def pred_component_ids(self) -> Array:
        return component_ids(
            self._scene.cloud,
            self._scene.masked_pred,
            self.cfg.radius_m,
            self.grid,
            self._workers,
        )


class BoundaryCounter(SceneCounter):
    def _count(self, context: SceneContext) -> Dict[CounterType, int]:
        _, _, counters = ferr_merr(context.gt_boundary, context.pred_boundary)
        return counters

    @property
    def counter_types(self) -> Sequence[CounterType]:
        return (
            CounterType.PRED_BOUNDARY,
            CounterType.GT_BOUNDARY,
            CounterType.BOUNDARY_OVERLAP,
        )


class RegionCounter(SceneCounter):
    def _count(self, context: SceneContext) -> Dict[CounterType, int]:
        scene = context.scene
        _, tp, total = rerr(
            context.gt_components,
            scene.cloud,
            scene.gt,
            scene.pred,
            scene.cfg,
            pred_ids=context.pred_component_ids,
        )
        return {CounterType.RERR_TP: tp, CounterType.RERR_ALL: total}

    @property
    def counter_types(self) -> Sequence[CounterType]:
        return CounterType.RERR_TP, CounterType.RERR_ALL


class DisplacementCounter(SceneCounter):
    def _count(self, context: SceneContext) -> Dict[CounterType, int]:
        scene = context.scene
        components, pred_ids = None, None
        if scene.cfg.derr_samples is DErrSampleMode.COMPONENT:
            components, pred_ids = context.gt_components, context.pred_component_ids
        _, num, den = derr(
            scene.cloud,
            scene.gt,
            scene.pred,
            scene.cfg,
            grid=context.grid,
            workers=context.workers,
            components=components,
            pred_ids=pred_ids,
        )
        return {CounterType.DERR_NUM: num, CounterType.DERR_DEN: den}

    @property
    def counter_types(self) -> Sequence[CounterType]:
        return CounterType.DERR_NUM, CounterType.DERR_DEN


SCENE_COUNTERS: Sequence[SceneCounter] = (
    BoundaryCounter(),
    RegionCounter(),
    DisplacementCounter(),
)


@dataclass(frozen=True, eq=False)
class TraditionalMetrics:
    """Confusion-matrix metrics of one label field against another."""

    confusion: Array
    class_iou: Tuple[Optional[float], ...]
    miou: Optional[float]
    macc: Optional[float]
    oacc: Optional[float]
    group_iou: Dict[str, Optional[float]]


def confusion_matrix(gt: LabelField, pred: LabelField, num_classes: int) -> Array:
    """M x M counts over the annotated points, rows ground truth, columns prediction."""
    valid = gt.valid
    flat = gt.labels[valid].astype(np.int64) * num_classes + pred.labels[valid]
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def class_iou(confusion: Array) -> Tuple[Optional[float], ...]:
    """IoU per class, None for classes absent from both ground truth and prediction."""
    hits = np.diag(confusion)
    union = confusion.sum(axis=1) + confusion.sum(axis=0) - hits
    return tuple(
        None if u == 0 else int(h) / int(u) for h, u in zip(hits, union)
    )


def mean_iou(confusion: Array) -> Optional[float]:
    return _mean([iou for iou in class_iou(confusion) if iou is not None])


def mean_accuracy(confusion: Array) -> Optional[float]:
    """Mean recall over the classes present in the ground truth."""
    hits = np.diag(confusion)
    rows = confusion.sum(axis=1)
    return _mean([int(h) / int(n) for h, n in zip(hits, rows) if n > 0])


def overall_accuracy(confusion: Array) -> Optional[float]:
    total = int(confusion.sum())
    if total == 0:
        return None
    return int(np.trace(confusion)) / total


def group_iou(
    ious: Sequence[Optional[float]], groups: ClassGroups
) -> Dict[str, Optional[float]]:
    """Mean IoU of the member classes present, per group."""
    return {
        name: _mean([ious[c] for c in sorted(groups[name]) if ious[c] is not None])
        for name in groups
    }


def _mean(values: List[float]) -> Optional[float]:
    if not values:
        return None
    return float(np.mean(values))


def traditional_metrics(
    gt: LabelField,
    pred: LabelField,
    cfg: EvalConfig,
    groups: Optional[ClassGroups] = None,
) -> TraditionalMetrics:
    """mIoU, mAcc, oAcc, per-class and per-group IoU over the annotated points.

    Args:
        gt: Ground-truth labels, validated against ``cfg``
        pred: Predicted labels, validated against ``cfg``
        cfg: Evaluation configuration
        groups: Optional class groups, e.g. head/common/tail

    Returns: The metrics with the confusion matrix they come from
    """
    confusion = confusion_matrix(gt, pred, cfg.num_classes)
    ious = class_iou(confusion)
    return TraditionalMetrics(
        confusion=confusion,
        class_iou=ious,
        miou=mean_iou(confusion),
        macc=mean_accuracy(confusion),
        oacc=overall_accuracy(confusion),
        group_iou=group_iou(ious, groups if groups is not None else ClassGroups({})),
    )


def ferr_merr(
    gt_boundary: BoundaryMask, pred_boundary: BoundaryMask
) -> Tuple[Optional[float], Optional[float], Dict[CounterType, int]]:
    """False response and merge errors of two boundary masks.

    Args:
        gt_boundary: Boundary mask of the ground truth
        pred_boundary: Boundary mask of the prediction, same cloud and radius

    Returns: FErr, MErr (None when the denominator is 0) and their counters
    """
    gt, pred, overlap = boundary_overlap_counts(gt_boundary, pred_boundary)
    counters = {
        CounterType.PRED_BOUNDARY: pred,
        CounterType.GT_BOUNDARY: gt,
        CounterType.BOUNDARY_OVERLAP: overlap,
    }
    return FalseResponseError()(counters), MergeError()(counters), counters


def rerr(
    components: Sequence[Component],
    cloud: PointCloud,
    gt: LabelField,
    pred: LabelField,
    cfg: EvalConfig,
    pred_ids: Optional[Array] = None,
    grid: Optional[SpatialGrid] = None,
    workers: Optional[int] = None,
) -> Tuple[Optional[float], int, int]:
    """Region classification error over ground-truth components.

    A component large enough to be a sample is matched with the predicted
    components carrying its plurality predicted label that intersect it. It
    qualifies when their IoU exceeds ``cfg.iou_threshold``, and is correct when
    that label is its own.

    Args:
        components: Ground-truth components at ``cfg.radius_m``
        cloud: The points
        gt: Ground-truth labels
        pred: Predicted labels
        cfg: Evaluation configuration
        pred_ids: Component root per point of the masked prediction, computed
        when missing
        grid: Grid over ``cloud`` reused for the prediction components
        workers: Number of threads

    Returns: RErr (None without qualifying samples), TP and All
    """
    masked = _masked_prediction(gt, pred, cfg)
    pred_labels = masked.labels
    if pred_ids is None:
        pred_ids = component_ids(cloud, masked, cfg.radius_m, grid, workers)
    pred_sizes = np.bincount(pred_ids[pred_ids >= 0], minlength=cloud.count)

    tp, total = 0, 0
    for component in components:
        if component.size < cfg.min_component_size:
            continue
        members = component.point_indices
        label = plurality_predicted_label(component, pred)
        hit = pred_labels[members] == label
        overlap = int(np.count_nonzero(hit))
        predicted = int(pred_sizes[np.unique(pred_ids[members[hit]])].sum())
        if overlap / (predicted + component.size - overlap) > cfg.iou_threshold:
            total += 1
            tp += int(label == component.label)
    _logger.debug(f"{total} of {len(components)} components qualify, {tp} correct")
    counters = {CounterType.RERR_TP: tp, CounterType.RERR_ALL: total}
    return RegionError()(counters), tp, total


def derr(
    cloud: PointCloud,
    gt: LabelField,
    pred: LabelField,
    cfg: EvalConfig,
    grid: Optional[SpatialGrid] = None,
    workers: Optional[int] = None,
    components: Optional[Sequence[Component]] = None,
    pred_ids: Optional[Array] = None,
) -> Tuple[Optional[float], int, int]:
    """Displacement error: how much of the ground-truth interior contour strip the
    prediction's interior contour strip misses, over qualifying samples.

    Samples are class masks, or ground-truth components when ``cfg.derr_samples``
    says so.

    Args:
        cloud: The points
        gt: Ground-truth labels
        pred: Predicted labels
        cfg: Evaluation configuration
        grid: Grid over ``cloud`` with cell size ``cfg.radius_m``
        workers: Number of threads
        components: Ground-truth components, component samples only
        pred_ids: Prediction component roots, component samples only

    Returns: DErr (None when the denominator is 0), numerator and denominator
    """
    if grid is None and cloud.count:
        grid = build_grid(cloud, cfg.radius_m)
    valid = gt.valid
    if cfg.derr_samples is DErrSampleMode.CLASS:
        samples = _class_samples(gt, pred, cfg)
    else:
        samples = _component_samples(
            cloud, gt, pred, cfg, grid, workers, components, pred_ids
        )

    num, den, qualifying = 0, 0, 0
    for g_mask, p_mask in samples:
        overlap = np.count_nonzero(g_mask & p_mask)
        if overlap / np.count_nonzero(g_mask | p_mask) <= cfg.iou_threshold:
            continue
        qualifying += 1
        g_zone = binary_boundary_zone(cloud, g_mask, valid, cfg.radius_m, grid, workers)
        p_zone = binary_boundary_zone(cloud, p_mask, valid, cfg.radius_m, grid, workers)
        g_inner = g_zone.flags & g_mask
        num += int(np.count_nonzero(p_zone.flags & p_mask & g_inner))
        den += int(np.count_nonzero(g_inner))
    _logger.debug(f"{qualifying} qualifying displacement samples")
    counters = {CounterType.DERR_NUM: num, CounterType.DERR_DEN: den}
    return DisplacementError()(counters), num, den


def _masked_prediction(gt: LabelField, pred: LabelField, cfg: EvalConfig) -> LabelField:
    """The prediction with the points unannotated in the ground truth ignored."""
    labels = np.where(gt.valid, pred.labels, cfg.ignore_label)
    return LabelField(labels, cfg.ignore_label)


def _class_samples(gt: LabelField, pred: LabelField, cfg: EvalConfig):
    valid = gt.valid
    for c in range(cfg.num_classes):
        g_mask = valid & (gt.labels == c)
        if g_mask.any():
            yield g_mask, valid & (pred.labels == c)


def _component_samples(
    cloud: PointCloud,
    gt: LabelField,
    pred: LabelField,
    cfg: EvalConfig,
    grid: Optional[SpatialGrid],
    workers: Optional[int],
    components: Optional[Sequence[Component]],
    pred_ids: Optional[Array],
):
    masked = _masked_prediction(gt, pred, cfg)
    if components is None:
        components = extract_components(cloud, gt, cfg.radius_m, grid, workers)
    if pred_ids is None:
        pred_ids = component_ids(cloud, masked, cfg.radius_m, grid, workers)
    for component in components:
        if component.size < cfg.min_component_size:
            continue
        members = component.point_indices
        label = plurality_predicted_label(component, pred)
        g_mask = np.zeros(cloud.count, dtype=bool)
        g_mask[members] = True
        roots = np.unique(pred_ids[members[masked.labels[members] == label]])
        yield g_mask, np.isin(pred_ids, roots)


def report_from_counters(
    cfg: EvalConfig,
    groups: ClassGroups,
    confusion: Array,
    counters: Mapping[CounterType, int],
    num_scenes: int = 1,
) -> MetricsReport:
    """Builds a report whose every metric is recomputed from the raw counts."""
    ious = class_iou(confusion)
    metrics: Dict[MetricType, Optional[float]] = {
        MetricType.MIOU: mean_iou(confusion),
        MetricType.MACC: mean_accuracy(confusion),
        MetricType.OACC: overall_accuracy(confusion),
    }
    for metric in ERROR_METRICS:
        metrics[metric.type] = metric(counters)
    return MetricsReport(
        cfg=cfg,
        groups=groups,
        confusion=confusion,
        counters=counters,
        metrics=metrics,
        class_iou=ious,
        group_iou=group_iou(ious, groups),
        num_scenes=num_scenes,
    )


def evaluate_scene(
    cloud: PointCloud,
    gt: LabelField,
    pred: LabelField,
    cfg: EvalConfig,
    groups: Optional[ClassGroups] = None,
    workers: Optional[int] = None,
) -> MetricsReport:
    """Every metric of one scene, with the raw counters behind them.

    Args:
        cloud: The points
        gt: Ground-truth labels
        pred: Predicted labels
        cfg: Evaluation configuration
        groups: Optional class groups
        workers: Number of threads, the results do not depend on it

    Returns: The scene report
    """
    scene = validate_scene(cloud, gt, pred, cfg)
    groups = groups if groups is not None else ClassGroups({})
    groups.check_num_classes(cfg.num_classes)
    context = SceneContext(scene, workers)
    counters: Dict[CounterType, int] = {}
    for counter in SCENE_COUNTERS:
        counters.update(counter(context))
    report = report_from_counters(
        cfg, groups, confusion_matrix(scene.gt, scene.pred, cfg.num_classes), counters
    )
    _logger.debug(
        "scene counters: "
        + ", ".join(f"{t.value}={v}" for t, v in report.counters.items())
    )
    return report


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Micro-averages reports: counters and confusion matrices are summed and every
    metric is recomputed from the sums.

    Raises:
        SceneValidationError: when the reports disagree on the configuration or
        the groups
    """
    if not reports:
        raise ValueError("Nothing to aggregate")
    first = reports[0]
    for report in reports[1:]:
        if report.cfg.num_classes != first.cfg.num_classes:
            raise SceneValidationError(
                f"Can't aggregate reports with {first.cfg.num_classes} and "
                f"{report.cfg.num_classes} classes"
            )
        if report.cfg != first.cfg:
            raise SceneValidationError(
                f"Can't aggregate reports with different configurations: "
                f"{first.cfg} and {report.cfg}"
            )
        if report.groups != first.groups:
            raise SceneValidationError(
                f"Can't aggregate reports with different groups: {first.groups} "
                f"and {report.groups}"
            )
    counters = {t: sum(r[t] for r in reports) for t in CounterType}
    confusion = np.sum([r.confusion for r in reports], axis=0)
    return report_from_counters(
        first.cfg,
        first.groups,
        confusion,
        counters,
        num_scenes=sum(r.num_scenes for r in reports),
    )


def radius_sweep(
    cloud: PointCloud,
    gt: LabelField,
    pred: LabelField,
    cfg: EvalConfig,
    radii: Sequence[float] = DEFAULT_SWEEP_RADII,
    groups: Optional[ClassGroups] = None,
    workers: Optional[int] = None,
) -> Dict[float, MetricsReport]:
    """Evaluates the scene once per neighborhood radius.

    Returns: Reports keyed by radius, in the order of ``radii``
    """
    reports = {}
    for radius in map(float, radii):
        report = evaluate_scene(
            cloud, gt, pred, cfg.config_like_this(radius_m=radius), groups, workers
        )
        _logger.info(
            f"r={radius:g}: FErr={report[MetricType.FERR]} "
            f"DErr={report[MetricType.DERR]}"
        )
        reports[radius] = report
    return reports
