"""Task heads consuming F5C features.

* `mer_head`: 3D convolution, 3D max pooling and two fully-connected layers
  over the fused feature sequence of a clip.
* `flow_head`: encoder-decoder in the manner of FlowNet; the encoder sees
  both frames, the F5C features of the pair join at the 1/8 level and the
  decoder climbs back to frame resolution with skip connections.
* `landmark_head`: one convolution and two fully-connected layers per
  later frame of a pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mer_util import constants, ops
from mer_util.constants import Fusion
from mer_util.errors import DimensionError
from mer_util.parameters import (
    ConvParams,
    LinearParams,
    ParamGroup,
    init_conv,
    init_linear,
)
from mer_util.tensor import Tensor


def fused_channels(feature_channels: int, fusion: Fusion) -> int:
    """Channel count of one fused element of the MER input sequence."""
    return 2 * feature_channels if fusion is Fusion.concat else feature_channels


def fused_length(t: int, fusion: Fusion) -> int:
    """Length of the MER input sequence for a clip of `t` frames."""
    return t if fusion is Fusion.all else t - 1


def pair_feature_sequence(features: Sequence[Tensor], fusion: Fusion = Fusion.concat) -> Tensor:
    """Fuse per-frame features into the MER input sequence.

    Args:
        features (Sequence[Tensor]): t features, each C x H x W.
        fusion (Fusion): `concat` gives t-1 pair features of 2C channels; \
            `add`/`subtract` combine consecutive features; `first`/`last` \
            keep t-1 frame features; `all` keeps all t. Defaults to concat.

    Raises:
        DimensionError: When fewer than two features are given.

    Returns:
        Tensor: C' x T' x H x W, ready for 3D operations.
    """
    if len(features) < 2:
        raise DimensionError("pair_feature_sequence", *(f.shape for f in features), detail="need t >= 2")

    pairs = list(zip(features[:-1], features[1:]))
    if fusion is Fusion.concat:
        items = [ops.concat([a, b], axis=0) for a, b in pairs]
    elif fusion is Fusion.add:
        items = [ops.add(a, b) for a, b in pairs]
    elif fusion is Fusion.subtract:
        items = [ops.sub(a, b) for a, b in pairs]
    elif fusion is Fusion.first:
        items = list(features[:-1])
    elif fusion is Fusion.last:
        items = list(features[1:])
    else:
        items = list(features)

    return ops.stack(items, axis=1)


# MER


@dataclass
class MerHeadParams(ParamGroup):
    """Attributes:
    conv (ConvParams): 3D convolution, padding keeps T x H x W.
    fc1 (LinearParams)
    fc2 (LinearParams): Emits n raw logits.
    pool (int): Max-pooling window; the time window shrinks to T when T is shorter.
    """

    conv: ConvParams
    fc1: LinearParams
    fc2: LinearParams
    pool: int = constants.MER_POOL


def _pool_window(length: int, pool: int) -> tuple[int, int, int]:
    return (min(pool, length), pool, pool)


def mer_flat_size(channels: int, length: int, size: int, pool: int) -> int:
    window = _pool_window(length, pool)
    pooled = [(n - w) // w + 1 for n, w in zip((length, size, size), window)]
    return channels * int(np.prod(pooled))


def init_mer_head(
    rng: np.random.Generator,
    in_channels: int,
    length: int,
    size: int,
    n_classes: int,
    *,
    channels: int = constants.MER_CHANNELS,
    kernel: int = constants.MER_KERNEL,
    pool: int = constants.MER_POOL,
    fc_width: int = constants.MER_FC_WIDTH,
) -> MerHeadParams:
    pad = kernel // 2
    conv = init_conv(rng, in_channels, channels, kernel, (1, 1, 1), (pad,) * 3, dims=3)
    flat = mer_flat_size(channels, length, size, pool)
    return MerHeadParams(
        conv,
        init_linear(rng, flat, fc_width),
        init_linear(rng, fc_width, n_classes, relu_gain=False),
        pool,
    )


def mer_head(seq: Tensor, p: MerHeadParams) -> Tensor:
    """Classify a fused feature sequence.

    conv3d -> ReLU -> maxpool3d -> flatten -> FC -> ReLU -> FC. Softmax is
    left to the loss.

    Args:
        seq (Tensor): C' x T' x H x W.
        p (MerHeadParams)

    Raises:
        DimensionError: When the sequence is empty or does not match `p`.

    Returns:
        Tensor: n raw logits.
    """
    if seq.ndim != 4 or seq.shape[1] == 0:
        raise DimensionError("mer_head", seq.shape, detail="expected a non-empty C x T x H x W sequence")

    x = ops.relu(p.conv(seq))
    x = ops.maxpool3d(x, _pool_window(x.shape[1], p.pool))
    x = ops.reshape(x, (x.size,))
    if x.shape[0] != p.fc1.weight.shape[1]:
        raise DimensionError("mer_head", seq.shape, p.fc1.weight.shape, detail="flattened size")

    return p.fc2(ops.relu(p.fc1(x)))


# OPTICAL FLOW


@dataclass
class FlowHeadParams(ParamGroup):
    """Encoder (three stride-2 convolutions), a fusing convolution at the 1/8
    level and a decoder of three transposed convolutions followed by the
    2-channel predictor."""

    enc1: ConvParams
    enc2: ConvParams
    enc3: ConvParams
    fuse: ConvParams
    dec1: ConvParams
    dec2: ConvParams
    dec3: ConvParams
    predict: ConvParams


def init_flow_head(
    rng: np.random.Generator,
    in_channels: int,
    feature_channels: int,
    channels: Sequence[int] = constants.FLOW_CHANNELS,
) -> FlowHeadParams:
    c1, c2, c3 = channels
    down = dict(stride=(2, 2), padding=(1, 1))
    same = dict(stride=(1, 1), padding=(1, 1))
    up = dict(stride=(2, 2), padding=(1, 1), transposed=True)

    return FlowHeadParams(
        enc1=init_conv(rng, 2 * in_channels, c1, 3, **down),
        enc2=init_conv(rng, c1, c2, 3, **down),
        enc3=init_conv(rng, c2, c3, 3, **down),
        fuse=init_conv(rng, c3 + 2 * feature_channels, c3, 3, **same),
        dec1=init_conv(rng, c3, c2, 4, **up),
        dec2=init_conv(rng, 2 * c2, c1, 4, **up),
        dec3=init_conv(rng, 2 * c1, c1, 4, **up),
        predict=init_conv(rng, c1 + 2 * in_channels, 2, 3, relu_gain=False, **same),
    )


def flow_head(
    frame_k: Tensor, frame_next: Tensor, feature_k: Tensor, feature_next: Tensor, p: FlowHeadParams
) -> Tensor:
    """Estimate the flow from frame k to frame k+1.

    Args:
        frame_k (Tensor): C_in x S x S.
        frame_next (Tensor): C_in x S x S.
        feature_k (Tensor): C x S/8 x S/8.
        feature_next (Tensor): C x S/8 x S/8.
        p (FlowHeadParams)

    Raises:
        DimensionError: When frames or features disagree in shape.

    Returns:
        Tensor: 2 x S x S; channel 0 is u (horizontal), channel 1 is v (vertical).
    """
    if frame_k.shape != frame_next.shape or frame_k.ndim != 3:
        raise DimensionError("flow_head", frame_k.shape, frame_next.shape)
    if feature_k.shape != feature_next.shape or feature_k.ndim != 3:
        raise DimensionError("flow_head", feature_k.shape, feature_next.shape)
    size = frame_k.shape[1]
    if size % 8 or feature_k.shape[1:] != (size // 8, size // 8):
        raise DimensionError("flow_head", frame_k.shape, feature_k.shape, detail="features must be 1/8 of the frame")

    frames = ops.concat([frame_k, frame_next], axis=0)
    e1 = ops.relu(p.enc1(frames))  # S/2
    e2 = ops.relu(p.enc2(e1))  # S/4
    e3 = ops.relu(p.enc3(e2))  # S/8

    fused = ops.relu(p.fuse(ops.concat([e3, feature_k, feature_next], axis=0)))

    d1 = ops.relu(p.dec1(fused))  # S/4
    d2 = ops.relu(p.dec2(ops.concat([d1, e2], axis=0)))  # S/2
    d3 = ops.relu(p.dec3(ops.concat([d2, e1], axis=0)))  # S

    return p.predict(ops.concat([d3, frames], axis=0))


# LANDMARKS


@dataclass
class LandmarkHeadParams(ParamGroup):
    conv: ConvParams
    fc1: LinearParams
    fc2: LinearParams


def init_landmark_head(
    rng: np.random.Generator,
    feature_channels: int,
    feature_size: int,
    n_landmarks: int,
    frame_size: int,
    *,
    channels: int = constants.LANDMARK_CHANNELS,
    fc_width: int = constants.LANDMARK_FC_WIDTH,
) -> LandmarkHeadParams:
    """The output bias starts at the frame centre so early predictions land on the image."""
    conv = init_conv(rng, feature_channels, channels, 3, (2, 2), (1, 1))
    reduced = (feature_size + 2 - 3) // 2 + 1
    fc2 = init_linear(rng, fc_width, 2 * n_landmarks, relu_gain=False)
    fc2.bias.data[:] = (frame_size - 1) / 2.0

    return LandmarkHeadParams(conv, init_linear(rng, channels * reduced * reduced, fc_width), fc2)


def landmark_head(feature: Tensor, p: LandmarkHeadParams) -> Tensor:
    """Regress the 2m landmark coordinates (x0, y0, x1, y1, ...) of one frame.

    Args:
        feature (Tensor): C x H x W F5C feature of the frame.
        p (LandmarkHeadParams)

    Raises:
        DimensionError: When the feature does not match `p`.

    Returns:
        Tensor: 2m pixel coordinates.
    """
    if feature.ndim != 3 or feature.shape[0] != p.conv.kernel.shape[1]:
        raise DimensionError("landmark_head", feature.shape, p.conv.kernel.shape)

    x = ops.relu(p.conv(feature))
    x = ops.reshape(x, (x.size,))
    if x.shape[0] != p.fc1.weight.shape[1]:
        raise DimensionError("landmark_head", feature.shape, p.fc1.weight.shape, detail="flattened size")

    return p.fc2(ops.relu(p.fc1(x)))
