"""Fully-connected circular convolution (FCC).

Every column (FCC-V) or row (FCC-H) of a C x H x W feature map is treated as
a patch: a learnable positional embedding is added, then each channel is
circularly correlated with a full-length learnable kernel, which connects
every position along that axis. The block runs two branches, V then H and
H then V, between 1x1 convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mer_util import ops
from mer_util.constants import Direction, FccMode
from mer_util.errors import DimensionError
from mer_util.parameters import ConvParams, ParamGroup, init_conv, uniform, zeros
from mer_util.tensor import Tensor


@dataclass
class AxisSlot(ParamGroup):
    """Parameters of one FCC-V or FCC-H occurrence.

    Attributes:
        embedding (Tensor): Positional embedding P, C x H (vertical) or C x W (horizontal).
        weights (Tensor): Circular kernel U, same shape as `embedding`.
        direction (Direction)
    """

    embedding: Tensor
    weights: Tensor
    direction: Direction


@dataclass
class FccParams(ParamGroup):
    """Parameters of the FCC block.

    `first_v`/`first_h` form the first branch (V then H), `second_h`/`second_v`
    the second one (H then V). Slots unused by the configured mode are None.
    """

    pre_mix: ConvParams
    first_v: Optional[AxisSlot]
    first_h: Optional[AxisSlot]
    second_h: Optional[AxisSlot]
    second_v: Optional[AxisSlot]
    post_mix: ConvParams
    mode: FccMode = FccMode.full


def init_axis_slot(
    rng: np.random.Generator, channels: int, length: int, direction: Direction
) -> AxisSlot:
    """Zero embedding, kernel drawn from U(-1/sqrt(length), 1/sqrt(length))."""
    return AxisSlot(
        zeros((channels, length)),
        uniform(rng, (channels, length), 1.0 / math.sqrt(length)),
        direction,
    )


def init_fcc_params(
    rng: np.random.Generator,
    channels: int,
    height: int,
    width: int,
    mode: FccMode = FccMode.full,
) -> FccParams:
    """Initialize an FCC block; each axis occurrence owns its parameters."""
    pre_mix = init_conv(rng, channels, channels, 1, relu_gain=False)

    def slot(direction: Direction) -> AxisSlot:
        length = height if direction is Direction.vertical else width
        return init_axis_slot(rng, channels, length, direction)

    if mode is FccMode.full:
        first_v, first_h = slot(Direction.vertical), slot(Direction.horizontal)
        second_h, second_v = slot(Direction.horizontal), slot(Direction.vertical)
        merged = 2 * channels
    elif mode is FccMode.vertical:
        first_v, first_h, second_h, second_v = slot(Direction.vertical), None, None, None
        merged = channels
    else:
        first_v, first_h, second_h, second_v = None, slot(Direction.horizontal), None, None
        merged = channels

    post_mix = init_conv(rng, merged, channels, 1, relu_gain=False)
    return FccParams(pre_mix, first_v, first_h, second_h, second_v, post_mix, mode)


def _check(x: Tensor, slot: AxisSlot, direction: Direction) -> None:
    if slot.direction is not direction:
        raise DimensionError(
            f"fcc_{direction.value[0]}", x.shape, detail=f"slot is {slot.direction.value}"
        )
    axis = 1 if direction is Direction.vertical else 2
    if x.ndim != 3 or slot.weights.shape != (x.shape[0], x.shape[axis]):
        raise DimensionError(f"fcc_{direction.value[0]}", x.shape, slot.weights.shape)


def fcc_v(x: Tensor, slot: AxisSlot) -> Tensor:
    """FCC-V: `Y[c,i,j] = sum_s U[c,s] (X + P)[c, (i+s) % H, j]`.

    Args:
        x (Tensor): C x H x W.
        slot (AxisSlot): Vertical slot, C x H.

    Raises:
        DimensionError: When `x` does not match the slot.

    Returns:
        Tensor: C x H x W.
    """
    _check(x, slot, Direction.vertical)
    embedded = ops.broadcast_add_columns(x, slot.embedding, Direction.vertical)
    return ops.circular_conv(embedded, slot.weights, Direction.vertical)


def fcc_h(x: Tensor, slot: AxisSlot) -> Tensor:
    """FCC-H: mirror of `fcc_v` along the rows, modulus W."""
    _check(x, slot, Direction.horizontal)
    embedded = ops.broadcast_add_columns(x, slot.embedding, Direction.horizontal)
    return ops.circular_conv(embedded, slot.weights, Direction.horizontal)


def fcc_block(x: Tensor, p: FccParams) -> Tensor:
    """Two-branch FCC: `post_mix(concat(H(V(x')), V(H(x'))))`, `x' = pre_mix(x)`.

    In the single-direction modes the block reduces to `post_mix(V(x'))` or
    `post_mix(H(x'))`. The output has the shape of the input.
    """
    if x.ndim != 3 or p.pre_mix.kernel.shape[1] != x.shape[0]:
        raise DimensionError("fcc_block", x.shape, p.pre_mix.kernel.shape)

    mixed = p.pre_mix(x)

    if p.mode is FccMode.vertical:
        return p.post_mix(fcc_v(mixed, p.first_v))
    if p.mode is FccMode.horizontal:
        return p.post_mix(fcc_h(mixed, p.first_h))

    first = fcc_h(fcc_v(mixed, p.first_v), p.first_h)
    second = fcc_v(fcc_h(mixed, p.second_h), p.second_v)
    return p.post_mix(ops.concat([first, second], axis=0))
