from abc import ABC, abstractmethod

import numpy as np

from segerr.apis.data import LabelField, PointCloud
from segerr.errors import SceneValidationError
from segerr.names import CorruptionMode
from segerr.typing import Array


class Corruptor(ABC):
    """
    A base class for label corruptors - components that turn a ground truth into a
    synthetic prediction carrying one kind of segmentation error.
    """

    def __init__(self, num_classes: int):
        if type(self) is Corruptor:
            raise TypeError(
                "Corruptor API shouldn't be instantiated directly. Use subclasses."
            )
        if num_classes < 2:
            raise SceneValidationError("Corruption needs at least 2 classes")
        self.num_classes = num_classes

    def __call__(
        self,
        cloud: PointCloud,
        gt: LabelField,
        magnitude: float,
        rng: np.random.Generator,
    ) -> LabelField:
        """Corrupts a ground truth.

        Args:
            cloud: The points
            gt: The ground truth
            magnitude: Strength of the corruption, its unit depends on the mode
            rng: Source of randomness, the only one used

        Returns:
            A prediction over every point: ignore points of the ground truth are
            predicted as class 0.
        """
        if gt.count != cloud.count:
            raise SceneValidationError(
                f"Length mismatch: ground truth has {gt.count} labels, cloud has "
                f"{cloud.count} points"
            )
        if magnitude < 0:
            raise SceneValidationError(f"Magnitude must be non-negative: {magnitude}")
        labels = np.where(gt.valid, gt.labels, 0).astype(np.int64)
        corrupted = self._corrupt(cloud, labels, gt.valid, magnitude, rng)
        return LabelField(corrupted, gt.ignore_label)

    @abstractmethod
    def _corrupt(
        self,
        cloud: PointCloud,
        labels: Array,
        valid: Array,
        magnitude: float,
        rng: np.random.Generator,
    ) -> Array:
        """
        Implements the corruption itself in concrete classes.

        Args:
            cloud: The points
            labels: Ground-truth labels with ignore points already set to 0
            valid: Annotated points
            magnitude: Strength of the corruption
            rng: Source of randomness

        Returns: The corrupted labels
        """
        pass

    @property
    @abstractmethod
    def mode(self) -> CorruptionMode:
        pass
