from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Dict, Mapping, Optional, Sequence

from segerr.names import CounterType, MetricType

if TYPE_CHECKING:
    from segerr.metrics import SceneContext


class SceneCounter(ABC):
    """
    A base class for raw integer counters collected over a single scene
    """

    def __call__(self, context: "SceneContext") -> Dict[CounterType, int]:
        counters = self._count(context)
        for counter_type in self.counter_types:
            if counter_type not in counters:
                raise RuntimeError(
                    f"{type(self).__name__} did not produce counter "
                    f"{counter_type.value}"
                )
        return {t: int(counters[t]) for t in self.counter_types}

    @abstractmethod
    def _count(self, context: "SceneContext") -> Dict[CounterType, int]:
        """
        Implements the counting itself in concrete classes.

        Args:
            context: The scene with its shared grid, boundary masks and components

        Returns: The counters, keyed by type
        """
        pass

    @property
    @abstractmethod
    def counter_types(self) -> Sequence[CounterType]:
        """
        Returns: The counters produced by this counter
        """
        pass


class ErrorMetric(ABC):
    """
    A base class for error metrics calculated from counters pooled over any number
    of samples and scenes
    """

    def __call__(self, counters: Mapping[CounterType, int]) -> Optional[float]:
        for counter_type in self.required_counters:
            if counter_type not in counters.keys():
                raise IndexError(f"Counter {counter_type.value} is missing")
        return self._calculate_metric(counters)

    @abstractmethod
    def _calculate_metric(self, counters: Mapping[CounterType, int]) -> Optional[float]:
        """
        Implements the metric calculation itself in concrete classes.

        Args:
            counters: Pooled counters

        Returns: The metric as a simple float, None when its denominator is 0
        """
        pass

    @property
    @abstractmethod
    def type(self) -> MetricType:
        """
        Returns: The type of the metric
        """
        pass

    @property
    @abstractmethod
    def required_counters(self) -> Sequence[CounterType]:
        """
        Returns: The counters required for this metric.
        """
        pass
