from abc import ABC, abstractmethod
from typing import Dict, List

from torch import Tensor
from torch.nn import Module

from segerr.names import OutputType
from segerr.typing import Array


class Model(Module, ABC):
    """
    API for torch models evaluated forward only, on externally supplied weights.
    The outputs are keyed by type so losses can pick what they need.
    """

    @abstractmethod
    def forward(self, features: Tensor) -> Dict[OutputType, Tensor]:
        """
        The forward pass of the model.

        Args:
            features: Per-point input features, shape [N, in_dim]

        Returns: The outputs, a dictionary keyed by output type
        """
        pass

    @abstractmethod
    def matrices(self) -> List[Array]:
        """
        Returns: Every weight matrix and bias row of the model, in a fixed order
        """
        pass

    @abstractmethod
    def load_matrices(self, matrices: List[Array]):
        """
        Replaces the weights of the model.

        Args:
            matrices: Matrices in the order :meth:`matrices` returns them
        """
        pass
