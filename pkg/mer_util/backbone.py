"""Stack of vanilla convolutions extracting the rich feature of a frame."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mer_util import constants, ops
from mer_util.errors import DimensionError
from mer_util.parameters import ConvParams, ParamGroup, init_conv
from mer_util.tensor import Tensor


@dataclass
class BackboneParams(ParamGroup):
    """Four convolutions; kernels, strides and paddings follow `constants.BACKBONE_LAYERS`.

    Attributes:
        layers (list[ConvParams])
        frame_size (int): The only accepted input height and width.
    """

    layers: list[ConvParams] = field(default_factory=list)
    frame_size: int = constants.FRAME_SIZE


def init_backbone_params(
    rng: np.random.Generator,
    in_channels: int = 1,
    channels: Sequence[int] = tuple(c for c, *_ in constants.BACKBONE_LAYERS),
    frame_size: int = constants.FRAME_SIZE,
) -> BackboneParams:
    """Kaiming-uniform kernels, zero biases.

    Args:
        rng (np.random.Generator)
        in_channels (int): 1 for grayscale frames. Defaults to 1.
        channels (Sequence[int]): Output channels of the four layers. \
            Defaults to (8, 32, 64, 128).
        frame_size (int): Input height and width. Defaults to 128.
    """
    layers = []
    c_in = in_channels
    for c_out, (_, kernel, stride, padding) in zip(channels, constants.BACKBONE_LAYERS):
        layers.append(init_conv(rng, c_in, c_out, kernel, stride, padding))
        c_in = c_out
    return BackboneParams(layers, frame_size)


def infer_backbone_shapes(
    input_shape: tuple[int, int, int],
    channels: Sequence[int] = tuple(c for c, *_ in constants.BACKBONE_LAYERS),
    frame_size: int = constants.FRAME_SIZE,
) -> list[tuple[int, int, int]]:
    """Shapes along the stack, input first.

    Raises:
        DimensionError: When the frame is not `frame_size` x `frame_size`.

    Returns:
        list[tuple[int, int, int]]: For 1 x 128 x 128: 8 x 63 x 63, 32 x 31 x 31, \
            64 x 16 x 16, 128 x 16 x 16 after the input.
    """
    if len(input_shape) != 3 or input_shape[1:] != (frame_size, frame_size):
        raise DimensionError(
            "rich_feature", input_shape, detail=f"expected C x {frame_size} x {frame_size}"
        )

    shapes = [tuple(input_shape)]
    _, h, w = input_shape
    for c_out, (_, kernel, stride, padding) in zip(channels, constants.BACKBONE_LAYERS):
        h = (h + 2 * padding[0] - kernel) // stride[0] + 1
        w = (w + 2 * padding[1] - kernel) // stride[1] + 1
        shapes.append((c_out, h, w))
    return shapes


def rich_feature(frame: Tensor, p: BackboneParams) -> Tensor:
    """Rich feature of one frame, ReLU after the first three layers.

    Args:
        frame (Tensor): C_in x 128 x 128, values in [0, 1].
        p (BackboneParams)

    Raises:
        DimensionError: When the frame has the wrong size or channel count.

    Returns:
        Tensor: 128 x 16 x 16 at the default geometry.
    """
    if frame.ndim != 3 or frame.shape[1:] != (p.frame_size, p.frame_size):
        raise DimensionError(
            "rich_feature", frame.shape, detail=f"expected C x {p.frame_size} x {p.frame_size}"
        )
    if frame.shape[0] != p.layers[0].kernel.shape[1]:
        raise DimensionError("rich_feature", frame.shape, p.layers[0].kernel.shape)

    x = frame
    for i, layer in enumerate(p.layers):
        x = layer(x)
        if i < len(p.layers) - 1:
            x = ops.relu(x)
    return x
