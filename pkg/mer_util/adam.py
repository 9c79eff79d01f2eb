"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mer_util import constants
from mer_util.errors import DimensionError
from mer_util.tensor import Tensor


@dataclass
class AdamState:
    """Attributes:
    m (list[np.ndarray]): First moments, one per parameter.
    v (list[np.ndarray]): Second moments, one per parameter.
    step (int): Updates applied so far.
    lr (float)
    beta1 (float)
    beta2 (float)
    eps (float)
    """

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0
    lr: float = constants.LEARNING_RATE
    beta1: float = constants.BETA1
    beta2: float = constants.BETA2
    eps: float = constants.EPSILON


def init_adam(
    params: Sequence[Tensor],
    lr: float = constants.LEARNING_RATE,
    beta1: float = constants.BETA1,
    beta2: float = constants.BETA2,
    eps: float = constants.EPSILON,
) -> AdamState:
    return AdamState(
        [np.zeros_like(p.data) for p in params],
        [np.zeros_like(p.data) for p in params],
        0,
        lr,
        beta1,
        beta2,
        eps,
    )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Apply one update in place.

    `theta -= lr * m_hat / (sqrt(v_hat) + eps)` with bias-corrected moments.

    Raises:
        DimensionError: When params, grads and moments disagree.
    """
    if not len(params) == len(grads) == len(state.m):
        raise DimensionError("adam_step", (len(params),), (len(grads),), (len(state.m),))
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise DimensionError("adam_step", p.shape, np.shape(g), m.shape)

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step

    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
