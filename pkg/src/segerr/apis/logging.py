from collections import deque
from logging import getLogger
from typing import Callable, Deque, List, Optional, Sequence, Tuple

from segerr.apis.results import MetricsReport
from segerr.names import MetricType

_logger = getLogger(__name__)

Aggregator = Callable[[Sequence[MetricsReport]], MetricsReport]


class EvaluationLogger:
    """
    Collects per-scene reports and reports their micro-averaged aggregate.

    The base class logs one line per scene and the aggregate through the standard
    logging machinery, inheriting classes may log elsewhere by overriding the
    ``_log_*`` hooks.
    """

    def __init__(
        self,
        aggregator: Aggregator,
        headline: Tuple[MetricType, ...] = tuple(MetricType),
    ):
        """
        Args:
            aggregator: Combines the scene reports into one
            headline: Metrics logged for every scene
        """
        self._aggregator = aggregator
        self._headline = headline
        self._scenes: Deque[Tuple[str, MetricsReport]] = deque()
        self.result: Optional[MetricsReport] = None

    def new_scene(self, report: MetricsReport, name: Optional[str] = None):
        """
        Reports the result of a single scene.

        Args:
            report: The scene report
            name: Scene name used in the log, its position when missing

        Returns: The report
        """
        name = name if name is not None else f"scene {len(self._scenes)}"
        self._scenes.append((name, report))
        self._log_scene(name, report)
        return report

    def finish(self) -> MetricsReport:
        """
        Aggregates every scene reported so far.

        Returns: The aggregated report
        """
        if not self._scenes:
            raise ValueError("No scene was reported")
        self.result = self._aggregator(self.reports)
        self._log_aggregate(self.result)
        return self.result

    @property
    def reports(self) -> List[MetricsReport]:
        return [report for _, report in self._scenes]

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self._scenes]

    @property
    def num_scenes(self) -> int:
        return len(self._scenes)

    def _log_scene(self, name: str, report: MetricsReport):
        _logger.info(f"{name}: {self._headline_text(report)}")

    def _log_aggregate(self, report: MetricsReport):
        _logger.info(
            f"aggregate over {report.num_scenes} scenes, {report.num_points} points: "
            f"{self._headline_text(report)}"
        )

    def _headline_text(self, report: MetricsReport) -> str:
        return " ".join(
            f"{t.value}={'absent' if report[t] is None else format(report[t], '.4f')}"
            for t in self._headline
        )
