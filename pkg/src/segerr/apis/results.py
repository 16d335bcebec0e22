from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np

from segerr.apis.data import ClassGroups, EvalConfig
from segerr.names import BenchMethod, CounterType, MetricType
from segerr.typing import Array

SUMMARY_ORDER = (
    MetricType.MIOU,
    MetricType.MACC,
    MetricType.OACC,
    MetricType.FERR,
    MetricType.MERR,
    MetricType.RERR,
    MetricType.DERR,
)


class MetricsReport:
    """
    A container for the metrics of one scene, or of several scenes pooled together
    """

    def __init__(
        self,
        cfg: EvalConfig,
        groups: ClassGroups,
        confusion: Array,
        counters: Mapping[CounterType, int],
        metrics: Mapping[MetricType, Optional[float]],
        class_iou: Sequence[Optional[float]],
        group_iou: Mapping[str, Optional[float]],
        num_scenes: int = 1,
    ):
        """
        Args:
            cfg: The evaluation configuration the counters were collected with
            groups: Class groups the group IoUs are reported for
            confusion: M x M counts, rows ground truth and columns prediction
            counters: Raw integer counters of the error metrics
            metrics: Every metric, None where its denominator vanished
            class_iou: IoU per class, None for classes absent from both fields
            group_iou: Mean member IoU per group
            num_scenes: Number of scenes pooled into this report
        """
        confusion = np.array(confusion, dtype=np.int64, copy=True)
        if confusion.shape != (cfg.num_classes, cfg.num_classes):
            raise ValueError(
                f"Confusion matrix has shape {confusion.shape}, expected "
                f"{(cfg.num_classes, cfg.num_classes)}"
            )
        confusion.setflags(write=False)
        self._cfg = cfg
        self._groups = groups
        self._confusion = confusion
        self._counters = {t: int(counters[t]) for t in CounterType}
        self._metrics = {t: metrics[t] for t in MetricType}
        self._class_iou = tuple(class_iou)
        self._group_iou = dict(group_iou)
        self._num_scenes = int(num_scenes)

    def __getitem__(self, item: Union[MetricType, CounterType, str]):
        if isinstance(item, MetricType):
            return self._metrics[item]
        if isinstance(item, CounterType):
            return self._counters[item]
        return self._group_iou[item]

    @property
    def cfg(self) -> EvalConfig:
        return self._cfg

    @property
    def groups(self) -> ClassGroups:
        return self._groups

    @property
    def confusion(self) -> Array:
        return self._confusion

    @property
    def counters(self) -> Dict[CounterType, int]:
        return dict(self._counters)

    @property
    def metrics(self) -> Dict[MetricType, Optional[float]]:
        return dict(self._metrics)

    @property
    def class_iou(self):
        return self._class_iou

    @property
    def group_iou(self) -> Dict[str, Optional[float]]:
        return dict(self._group_iou)

    @property
    def num_scenes(self) -> int:
        return self._num_scenes

    @property
    def num_points(self) -> int:
        """Number of annotated points behind the confusion matrix."""
        return int(self._confusion.sum())

    def summary(self) -> str:
        """Fixed-order human readable summary, one metric per line."""
        lines = []
        for metric_type in SUMMARY_ORDER:
            name = metric_type.value
            if metric_type in (MetricType.RERR, MetricType.DERR):
                name = f"{name}_{self._cfg.iou_threshold:g}"
            lines.append(f"{name}: {_format_value(self._metrics[metric_type])}")
        for group, value in self._group_iou.items():
            lines.append(f"IoU[{group}]: {_format_value(value)}")
        return "\n".join(lines)

    def __eq__(self, other):
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return (
            self.cfg == other.cfg
            and self.groups == other.groups
            and np.array_equal(self.confusion, other.confusion)
            and self._counters == other._counters
            and self._metrics == other._metrics
            and self._class_iou == other._class_iou
            and self._group_iou == other._group_iou
            and self.num_scenes == other.num_scenes
        )


class BenchResult:
    """
    A container for the timings of one benchmark method
    """

    MIN_REPETITIONS = 3

    def __init__(
        self,
        method: BenchMethod,
        num_points: int,
        radius_m: float,
        times_ms: Sequence[float],
        workers: int = 1,
    ):
        """
        Args:
            method: The timed neighbor search
            num_points: Scene size N
            radius_m: Query radius
            times_ms: Wall time of every timed repetition, warm-up excluded
            workers: Number of threads the method ran with
        """
        self._method = BenchMethod(method)
        self._num_points = int(num_points)
        self._radius_m = float(radius_m)
        self._times_ms = tuple(float(t) for t in times_ms)
        self._workers = int(workers)
        if len(self._times_ms) < self.MIN_REPETITIONS:
            raise ValueError(
                f"At least {self.MIN_REPETITIONS} repetitions are needed, got "
                f"{len(self._times_ms)}"
            )
        if min(self._times_ms) <= 0:
            raise ValueError("Repetition times must be positive")

    @property
    def method(self) -> BenchMethod:
        return self._method

    @property
    def num_points(self) -> int:
        return self._num_points

    @property
    def radius_m(self) -> float:
        return self._radius_m

    @property
    def times_ms(self):
        return self._times_ms

    @property
    def workers(self) -> int:
        return self._workers

    @property
    def repetitions(self) -> int:
        return len(self._times_ms)

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self._times_ms))

    @property
    def median_ms(self) -> float:
        return float(np.median(self._times_ms))

    @property
    def throughput(self) -> float:
        """Points per second at the mean time."""
        return self._num_points / (self.mean_ms / 1000.0)

    def summary(self) -> str:
        return (
            f"{self._method.value}: N={self._num_points} r={self._radius_m:g} "
            f"workers={self._workers} mean={self.mean_ms:.1f} ms "
            f"median={self.median_ms:.1f} ms throughput={self.throughput:.0f} pts/s"
        )

    def __eq__(self, other):
        if not isinstance(other, BenchResult):
            return NotImplemented
        return (
            self.method == other.method
            and self.num_points == other.num_points
            and self.radius_m == other.radius_m
            and self.times_ms == other.times_ms
            and self.workers == other.workers
        )


def _format_value(value: Optional[float]) -> str:
    return "absent" if value is None else f"{value:.4f}"
