"""Task losses and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mer_util import constants, ops
from mer_util.errors import ConfigurationError, DatasetError, DimensionError
from mer_util.tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    """Attributes:
    lambda_f (float): Weight of the optical-flow loss.
    lambda_m (float): Weight of the landmark loss.
    """

    lambda_f: float = constants.LAMBDA_FLOW
    lambda_m: float = constants.LAMBDA_LANDMARK

    def __post_init__(self) -> None:
        if self.lambda_f < 0 or self.lambda_m < 0:
            raise ConfigurationError(f"negative loss weight in {self}")


def ce_loss(logits: Tensor, label: int) -> Tensor:
    """Cross entropy of the softmax of raw `logits` against class `label`."""
    return ops.softmax_cross_entropy(logits, label)


def _pairs(op: str, pred: Sequence[Tensor], gt: Sequence) -> list[tuple[Tensor, Tensor]]:
    if not pred or len(pred) != len(gt):
        raise DimensionError(op, (len(pred),), (len(gt),), detail="sequence lengths")
    pairs = []
    for p, g in zip(pred, gt):
        g = g if isinstance(g, Tensor) else Tensor(g)
        if p.shape != g.shape:
            raise DimensionError(op, p.shape, g.shape)
        pairs.append((p, g))
    return pairs


def flow_loss(pred: Sequence[Tensor], gt: Sequence) -> Tensor:
    """Mean over the t-1 pairs of the per-element squared error.

    Args:
        pred (Sequence[Tensor]): Predicted fields, each 2 x H x W.
        gt (Sequence[Tensor | np.ndarray]): Ground-truth fields.

    Raises:
        DimensionError: On differing lengths or shapes.

    Returns:
        Tensor: Scalar.
    """
    pairs = _pairs("flow_loss", pred, gt)
    terms = [ops.mean_all(ops.square(ops.sub(p, g))) for p, g in pairs]
    return ops.scale(ops.add_n(terms), 1.0 / len(terms))


def inter_ocular_distance(landmarks: np.ndarray) -> float:
    """Distance between the mean right-eye and mean left-eye positions.

    Args:
        landmarks (np.ndarray): 2m coordinates (x0, y0, ...) in the 68-point layout.

    Raises:
        ConfigurationError: When the layout has no eye landmarks.
    """
    points = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    if points.shape[0] <= max(constants.LEFT_EYE):
        raise ConfigurationError(f"{points.shape[0]} landmarks carry no eye positions")
    right = points[list(constants.RIGHT_EYE)].mean(axis=0)
    left = points[list(constants.LEFT_EYE)].mean(axis=0)
    return float(np.linalg.norm(left - right))


def landmark_loss(pred: Sequence[Tensor], gt: Sequence, d_o: Sequence[float]) -> Tensor:
    """`(1 / (m (t-1))) sum_k sum_s (|dx| + |dy|) / d_o(k)`.

    Raises:
        DatasetError: When an inter-ocular distance is not positive.
        DimensionError: On differing lengths or shapes.
    """
    pairs = _pairs("landmark_loss", pred, gt)
    if len(d_o) != len(pairs):
        raise DimensionError("landmark_loss", (len(pairs),), (len(d_o),), detail="inter-ocular distances")
    if any(d <= 0 for d in d_o):
        raise DatasetError(f"non-positive inter-ocular distance in {list(d_o)}")

    m = pred[0].shape[0] // 2
    terms = [ops.scale(ops.sum_all(ops.absolute(ops.sub(p, g))), 1.0 / d) for (p, g), d in zip(pairs, d_o)]
    return ops.scale(ops.add_n(terms), 1.0 / (m * len(terms)))


def full_loss(l_e: Tensor, l_f: Tensor, l_m: Tensor, w: LossWeights = LossWeights()) -> Tensor:
    """`L = L_e + lambda_f L_f + lambda_m L_m`."""
    return ops.add(ops.add(l_e, ops.scale(l_f, w.lambda_f)), ops.scale(l_m, w.lambda_m))
