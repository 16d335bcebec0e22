from abc import ABC, abstractmethod
from typing import Iterator, NamedTuple

from segerr.apis.data import LabelField, PointCloud


class LabeledScene(NamedTuple):
    """A cloud with its ground truth and a prediction over it."""

    name: str
    cloud: PointCloud
    gt: LabelField
    pred: LabelField


class SceneSource(ABC):
    """A base class for scene sources.

    Allows the evaluation to load scenes from synthetic generators and from files
    in the same way. Every scene comes with its ground truth and a prediction.
    """

    @abstractmethod
    def __getitem__(self, idx: int) -> LabeledScene:
        """
        Returns a single scene from the source.

        Args:
            idx: Index of the scene, in ``[0, len(self))``
        """
        pass

    @abstractmethod
    def __len__(self):
        """Total number of scenes."""
        pass

    def __iter__(self) -> Iterator[LabeledScene]:
        for idx in range(len(self)):
            yield self[idx]

    @property
    @abstractmethod
    def name(self) -> str:
        """The name of the source"""
        pass

    @property
    @abstractmethod
    def signature(self) -> str:
        """A string identifying the exact content of the source, equal for two
        sources that produce identical scenes."""
        pass
