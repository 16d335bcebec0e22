"""
Forward-only boundary-semantic block: the multi-layer feature is decoupled into
a boundary and a semantic branch, each branch is turned into query/key/value
queues, and the boundary query is fused into the semantic attention. Also holds
the semantic and boundary losses.

Everything runs in float64 on the CPU without gradients.
"""
import math
from dataclasses import dataclass, field
from logging import getLogger
from typing import Dict, List, NamedTuple, Sequence, Tuple, Type

import numpy as np
import torch
from torch import Tensor, nn

from segerr.apis.loss import LossFunc, LossResult
from segerr.apis.models import Model
from segerr.errors import ShapeError
from segerr.names import LabelType, LossType, OutputType
from segerr.typing import Array

_logger = getLogger(__name__)

EPSILON = 1e-7
DTYPE = torch.float64


def as_tensor(x) -> Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


class AttentionQueues(NamedTuple):
    q: Tensor
    k: Tensor
    v: Tensor


@dataclass(frozen=True)
class BlockConfig:
    """Dimensions of the boundary-semantic block.

    Attributes:
        in_dim: Channels of the input feature
        d_k: Width of every attention queue
        num_classes: Number of semantic classes M
        feature_dim: Output width of the decoupling MLPs
        hidden_widths: Hidden layer widths shared by every MLP, empty for a single
        affine layer
        seed: Seed of the weight initialization
    """

    in_dim: int
    d_k: int
    num_classes: int
    feature_dim: int = 32
    hidden_widths: Tuple[int, ...] = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        for name in ("in_dim", "d_k", "num_classes", "feature_dim"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive, got {getattr(self, name)}")
        if any(w < 1 for w in self.hidden_widths):
            raise ShapeError(f"Hidden widths must be positive: {self.hidden_widths}")


class AffineMap(nn.Module):
    """``x @ weight + bias`` with a weight of shape [in_dim, out_dim]."""

    def __init__(self, weight: Tensor, bias: Tensor):
        super().__init__()
        weight, bias = as_tensor(weight), as_tensor(bias).reshape(-1)
        if weight.ndim != 2 or bias.shape[0] != weight.shape[1]:
            raise ShapeError(
                f"Weight of shape {tuple(weight.shape)} doesn't match bias of "
                f"shape {tuple(bias.shape)}"
            )
        self.weight = nn.Parameter(weight, requires_grad=False)
        self.bias = nn.Parameter(bias, requires_grad=False)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def identity(cls, dim: int) -> "AffineMap":
        return cls(torch.eye(dim, dtype=DTYPE), torch.zeros(dim, dtype=DTYPE))

    @classmethod
    def seeded(cls, in_dim: int, out_dim: int, generator: torch.Generator):
        scale = 1.0 / math.sqrt(in_dim)
        weight = torch.randn(in_dim, out_dim, generator=generator, dtype=DTYPE)
        bias = torch.randn(out_dim, generator=generator, dtype=DTYPE)
        return cls(weight * scale, bias * scale)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"Expected input of shape [N, {self.in_dim}], got {tuple(x.shape)}"
            )
        return x @ self.weight + self.bias


def mlp(widths: Sequence[int], generator: torch.Generator) -> nn.Sequential:
    """Affine layers through ``widths`` with a rectifier between consecutive layers."""
    layers: List[nn.Module] = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        if i:
            layers.append(nn.ReLU())
        layers.append(AffineMap.seeded(a, b, generator))
    return nn.Sequential(*layers)


def split_queues(f: Tensor, stack: nn.Module) -> AttentionQueues:
    """Maps ``f`` and cuts the channels into query, key and value blocks.

    Args:
        f: Feature matrix [N, C]
        stack: Map whose output width is 3 * d_k

    Returns: The three [N, d_k] queues
    """
    with torch.no_grad():
        out = stack(as_tensor(f))
    if out.ndim != 2 or out.shape[1] % 3:
        raise ShapeError(
            f"Queue map output of shape {tuple(out.shape)} can't be split in 3"
        )
    blocks = out.reshape(out.shape[0], 3, out.shape[1] // 3)
    return AttentionQueues(blocks[:, 0], blocks[:, 1], blocks[:, 2])


def attention_weights(query: Tensor, keys: Tensor) -> Tensor:
    """Row-stochastic ``softmax(query @ keys.T / sqrt(d_k))``."""
    return torch.softmax(query @ keys.T / math.sqrt(keys.shape[1]), dim=1)


def fused_attention(
    qb: Tensor, qs: Tensor, ks: Tensor, vs: Tensor, fuse: nn.Module
) -> Tensor:
    """Semantic attention driven by the fusion of the boundary and semantic queries.

    Args:
        qb: Boundary query [N, d_k]
        qs: Semantic query [N, d_k]
        ks: Semantic key [N, d_k]
        vs: Semantic value [N, d_k]
        fuse: Map from 2 * d_k to d_k channels

    Returns: The enhanced semantic feature [N, d_k]
    """
    qb, qs, ks, vs = map(as_tensor, (qb, qs, ks, vs))
    shapes = {tuple(t.shape) for t in (qb, qs, ks, vs)}
    if len(shapes) != 1 or qb.ndim != 2:
        raise ShapeError(f"Queues must share one [N, d_k] shape, got {sorted(shapes)}")
    with torch.no_grad():
        query = fuse(torch.cat((qb, qs), dim=1))
        if query.shape != qs.shape:
            raise ShapeError(
                f"Fused query has shape {tuple(query.shape)}, expected "
                f"{tuple(qs.shape)}"
            )
        return attention_weights(query, ks) @ vs


class BoundarySemanticBlock(Model):
    """Decoupling, queue, fusion and output MLPs of the boundary-semantic block.

    The six MLPs never share weights. The semantic scores come from a linear
    classifier over the fused feature.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        generator = torch.Generator().manual_seed(cfg.seed)
        hidden = cfg.hidden_widths

        def stack(a: int, b: int) -> nn.Sequential:
            return mlp((a, *hidden, b), generator)

        self.boundary_decouple = stack(cfg.in_dim, cfg.feature_dim)
        self.semantic_decouple = stack(cfg.in_dim, cfg.feature_dim)
        self.boundary_queues = stack(cfg.feature_dim, 3 * cfg.d_k)
        self.semantic_queues = stack(cfg.feature_dim, 3 * cfg.d_k)
        self.fuse = stack(2 * cfg.d_k, cfg.d_k)
        self.boundary_head = stack(cfg.d_k, 1)
        self.classifier = mlp((cfg.d_k, cfg.num_classes), generator)

    def affine_maps(self) -> List[AffineMap]:
        return [m for m in self.modules() if isinstance(m, AffineMap)]

    def forward(self, features: Tensor) -> Dict[OutputType, Tensor]:
        features = as_tensor(features)
        if features.ndim != 2 or features.shape[1] != self.cfg.in_dim:
            raise ShapeError(
                f"Expected features of shape [N, {self.cfg.in_dim}], got "
                f"{tuple(features.shape)}"
            )
        with torch.no_grad():
            qb, _, _ = split_queues(
                self.boundary_decouple(features), self.boundary_queues
            )
            qs, ks, vs = split_queues(
                self.semantic_decouple(features), self.semantic_queues
            )
            fused = fused_attention(qb, qs, ks, vs, self.fuse)
            boundary = torch.sigmoid(self.boundary_head(qb))
            return {
                OutputType.SEMANTIC_SCORES: torch.softmax(
                    self.classifier(fused), dim=1
                ),
                OutputType.BOUNDARY_SCORES: boundary[:, 0],
            }

    def matrices(self) -> List[Array]:
        result = []
        for affine in self.affine_maps():
            result.append(affine.weight.detach().numpy().copy())
            result.append(affine.bias.detach().numpy().reshape(1, -1).copy())
        return result

    def load_matrices(self, matrices: List[Array]):
        affines = self.affine_maps()
        if len(matrices) != 2 * len(affines):
            raise ShapeError(
                f"Expected {2 * len(affines)} matrices, got {len(matrices)}"
            )
        for i, affine in enumerate(affines):
            weight = np.asarray(matrices[2 * i])
            bias = np.asarray(matrices[2 * i + 1])
            expected_bias = (1, affine.out_dim)
            expected_weight = tuple(affine.weight.shape)
            if weight.shape != expected_weight or bias.shape != expected_bias:
                raise ShapeError(
                    f"Matrix pair {i} has shapes {weight.shape} and {bias.shape}, "
                    f"expected {expected_weight} and {expected_bias}"
                )
            with torch.no_grad():
                affine.weight.copy_(as_tensor(weight))
                affine.bias.copy_(as_tensor(bias).reshape(-1))
        _logger.debug(f"loaded {len(affines)} affine maps")


def _check_same_shape(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"Shape mismatch: {tuple(a.shape)} and {tuple(b.shape)}")


def _ratio_or_zero(num: Tensor, den: Tensor) -> Tensor:
    if float(den) == 0.0:
        return torch.zeros((), dtype=DTYPE)
    return num / den


def dice_term(pred, target) -> Tensor:
    """``1 - 2 sum(P * P_g) / sum(P * P + P_g * P_g)`` over all points and classes.

    Args:
        pred: Scores in [0, 1], shape [N, M]
        target: One-hot targets, shape [N, M]
    """
    pred, target = as_tensor(pred), as_tensor(target)
    _check_same_shape(pred, target)
    overlap = 2 * (pred * target).sum()
    return 1 - _ratio_or_zero(overlap, (pred * pred).sum() + (target * target).sum())


def semantic_loss(pred, target) -> Tensor:
    """Mean cross-entropy plus :func:`dice_term`; scores are clamped to
    ``[EPSILON, 1 - EPSILON]`` inside the logarithm only.

    Raises:
        ValueError: when a target row is not one-hot
    """
    pred, target = as_tensor(pred), as_tensor(target)
    _check_same_shape(pred, target)
    if pred.ndim != 2:
        raise ShapeError(f"Scores must have shape [N, M], got {tuple(pred.shape)}")
    binary = ((target == 0) | (target == 1)).all(dim=1)
    if not bool((binary & (target.sum(dim=1) == 1)).all()):
        raise ValueError("Semantic targets must be one-hot rows")
    clamped = pred.clamp(EPSILON, 1 - EPSILON)
    cross_entropy = nn.functional.nll_loss(torch.log(clamped), target.argmax(dim=1))
    return cross_entropy + dice_term(pred, target)


def boundary_dice_term(e, eg) -> Tensor:
    """``1 - 2 sum(E * E_g) / sum(E + E_g)``."""
    e, eg = as_tensor(e), as_tensor(eg)
    _check_same_shape(e, eg)
    return 1 - _ratio_or_zero(2 * (e * eg).sum(), (e + eg).sum())


def boundary_loss(e, eg) -> Tensor:
    """Mean binary cross-entropy of the boundary scores against the boundary
    pseudo-labels, plus :func:`boundary_dice_term`.

    Args:
        e: Boundary scores in [0, 1], shape [N]
        eg: Binary pseudo-labels, shape [N]
    """
    e, eg = as_tensor(e), as_tensor(eg)
    _check_same_shape(e, eg)
    if e.ndim != 1:
        raise ShapeError(f"Boundary scores must have shape [N], got {tuple(e.shape)}")
    if not bool(((eg == 0) | (eg == 1)).all()):
        raise ValueError("Boundary pseudo-labels must be 0 or 1")
    clamped = e.clamp(EPSILON, 1 - EPSILON)
    bce = nn.functional.binary_cross_entropy(clamped, eg)
    return bce + boundary_dice_term(e, eg)


def total_loss(scores, target, e, eg, boundary_weight: float = 1.0) -> Tensor:
    return semantic_loss(scores, target) + boundary_weight * boundary_loss(e, eg)


class SemanticLossResult(LossResult):
    @property
    def type(self) -> LossType:
        return LossType.SEMANTIC


class BoundaryLossResult(LossResult):
    @property
    def type(self) -> LossType:
        return LossType.BOUNDARY


class TotalLossResult(LossResult):
    @property
    def type(self) -> LossType:
        return LossType.TOTAL


class SemanticLoss(LossFunc):
    def __call__(
        self, y: Dict[LabelType, Tensor], y_pred: Dict[OutputType, Tensor]
    ) -> Tensor:
        return semantic_loss(y_pred[OutputType.SEMANTIC_SCORES], y[LabelType.SEMANTIC])

    @property
    def type(self) -> LossType:
        return LossType.SEMANTIC

    @classmethod
    def result_class(cls) -> Type[LossResult]:
        return SemanticLossResult


class BoundaryLoss(LossFunc):
    def __call__(
        self, y: Dict[LabelType, Tensor], y_pred: Dict[OutputType, Tensor]
    ) -> Tensor:
        return boundary_loss(y_pred[OutputType.BOUNDARY_SCORES], y[LabelType.BOUNDARY])

    @property
    def type(self) -> LossType:
        return LossType.BOUNDARY

    @classmethod
    def result_class(cls) -> Type[LossResult]:
        return BoundaryLossResult


class TotalLoss(LossFunc):
    def __init__(self, boundary_weight: float = 1.0):
        self._boundary_weight = boundary_weight

    def __call__(
        self, y: Dict[LabelType, Tensor], y_pred: Dict[OutputType, Tensor]
    ) -> Tensor:
        return total_loss(
            y_pred[OutputType.SEMANTIC_SCORES],
            y[LabelType.SEMANTIC],
            y_pred[OutputType.BOUNDARY_SCORES],
            y[LabelType.BOUNDARY],
            self._boundary_weight,
        )

    @property
    def type(self) -> LossType:
        return LossType.TOTAL

    @classmethod
    def result_class(cls) -> Type[LossResult]:
        return TotalLossResult


def one_hot(labels: Array, num_classes: int) -> Tensor:
    """One-hot rows for integer class ids."""
    return nn.functional.one_hot(
        torch.as_tensor(np.asarray(labels), dtype=torch.int64), num_classes
    ).to(DTYPE)
