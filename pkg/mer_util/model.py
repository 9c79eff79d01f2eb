"""Clip-level composition of backbone, F5C blocks and task heads."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from mer_util import constants
from mer_util.backbone import BackboneParams, infer_backbone_shapes, init_backbone_params, rich_feature
from mer_util.constants import FccMode, Fusion, Task
from mer_util.errors import CheckpointMismatchError, ConfigurationError, DimensionError
from mer_util.f5c import F5cParams, f5c_stack, init_f5c_params
from mer_util.heads import (
    FlowHeadParams,
    LandmarkHeadParams,
    MerHeadParams,
    flow_head,
    fused_channels,
    fused_length,
    init_flow_head,
    init_landmark_head,
    init_mer_head,
    landmark_head,
    mer_head,
    mer_flat_size,
    pair_feature_sequence,
)
from mer_util.parameters import ParamGroup, component_rng
from mer_util.tensor import Tensor

logger = logging.getLogger(__name__)

_ENUM_FIELDS = {"fusion": Fusion, "fcc_mode": FccMode}
_TUPLE_FIELDS = ("backbone_channels", "flow_channels")


@dataclass(frozen=True)
class ModelConfig:
    """Geometry and ablation switches of the joint model.

    Attributes:
        n_classes (int): Number of MER classes.
        t (int): Frames per clip.
        n_landmarks (int): Landmarks per frame (m).
        frame_size (int): Input height and width.
        in_channels (int): 1 for grayscale; 3 replicates the gray frame.
        backbone_channels (tuple[int, ...]): Output channels of the four backbone layers.
        k (int): CCC neighbour count.
        f5c_blocks (int): Stacked F5C blocks; 0 removes F5C.
        use_fcc (bool)
        use_ccc (bool)
        fcc_mode (FccMode)
        fusion (Fusion): MER input fusion.
        use_mer (bool)
        use_flow (bool)
        use_landmark (bool)
    """

    n_classes: int = 5
    t: int = constants.T_FRAMES
    n_landmarks: int = constants.N_LANDMARKS
    frame_size: int = constants.FRAME_SIZE
    in_channels: int = 1
    backbone_channels: tuple[int, ...] = tuple(c for c, *_ in constants.BACKBONE_LAYERS)
    k: int = constants.KNN_K
    f5c_blocks: int = constants.F5C_BLOCKS
    use_fcc: bool = True
    use_ccc: bool = True
    fcc_mode: FccMode = FccMode.full
    fusion: Fusion = Fusion.concat
    mer_channels: int = constants.MER_CHANNELS
    mer_kernel: int = constants.MER_KERNEL
    mer_pool: int = constants.MER_POOL
    mer_fc_width: int = constants.MER_FC_WIDTH
    flow_channels: tuple[int, ...] = constants.FLOW_CHANNELS
    landmark_channels: int = constants.LANDMARK_CHANNELS
    landmark_fc_width: int = constants.LANDMARK_FC_WIDTH
    use_mer: bool = True
    use_flow: bool = True
    use_landmark: bool = True

    def __post_init__(self) -> None:
        self.validate()

    @classmethod
    def reduced(cls, **overrides: Any) -> "ModelConfig":
        """Narrow 16 x 16 geometry for gradient checks and fast runs."""
        values: dict[str, Any] = dict(
            t=3,
            frame_size=16,
            backbone_channels=(2, 3, 4, 4),
            k=2,
            mer_channels=3,
            mer_fc_width=6,
            flow_channels=(2, 3, 4),
            landmark_channels=2,
            landmark_fc_width=6,
        )
        values.update(overrides)
        return cls(**values)

    @property
    def feature_channels(self) -> int:
        return self.backbone_channels[-1]

    @property
    def feature_size(self) -> int:
        return self.frame_size // 8

    @property
    def tasks(self) -> tuple[Task, ...]:
        switches = ((Task.mer, self.use_mer), (Task.flow, self.use_flow), (Task.landmark, self.use_landmark))
        return tuple(task for task, on in switches if on)

    @property
    def uses_f5c(self) -> bool:
        return self.f5c_blocks > 0 and (self.use_fcc or self.use_ccc)

    def validate(self) -> None:
        """Raise `ConfigurationError` for any geometry that cannot be built."""
        if self.n_classes < 2:
            raise ConfigurationError(f"n_classes = {self.n_classes}, at least 2 required")
        if self.t < 2:
            raise ConfigurationError(f"t = {self.t}, clips need at least 2 frames")
        if self.n_landmarks < 1:
            raise ConfigurationError(f"n_landmarks = {self.n_landmarks}")
        if self.in_channels not in (1, 3):
            raise ConfigurationError(f"in_channels = {self.in_channels}, expected 1 or 3")
        if len(self.backbone_channels) != len(constants.BACKBONE_LAYERS):
            raise ConfigurationError(f"backbone needs {len(constants.BACKBONE_LAYERS)} channel counts")
        if len(self.flow_channels) != 3:
            raise ConfigurationError("flow encoder needs 3 channel counts")
        if self.frame_size % 8:
            raise ConfigurationError(f"frame_size = {self.frame_size} is not a multiple of 8")
        final = infer_backbone_shapes(
            (self.in_channels, self.frame_size, self.frame_size),
            self.backbone_channels,
            self.frame_size,
        )[-1]
        if final[1:] != (self.feature_size, self.feature_size):
            raise ConfigurationError(
                f"backbone yields {final[1]} x {final[2]} features, the flow head needs "
                f"frame_size / 8 = {self.feature_size}"
            )
        if self.uses_f5c and self.use_ccc and not 1 <= self.k <= self.feature_channels - 1:
            raise ConfigurationError(f"k = {self.k} outside [1, {self.feature_channels - 1}]")
        if self.f5c_blocks < 0:
            raise ConfigurationError(f"f5c_blocks = {self.f5c_blocks}")
        if not self.tasks:
            raise ConfigurationError("every task is disabled")

    def to_dict(self) -> dict[str, Any]:
        result = dataclasses.asdict(self)
        for name in _ENUM_FIELDS:
            result[name] = result[name].value
        for name in _TUPLE_FIELDS:
            result[name] = list(result[name])
        return result

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "ModelConfig":
        """Inverse of `to_dict`.

        Raises:
            ConfigurationError: On unknown keys or values.
        """
        known = {f.name for f in dataclasses.fields(cls)}
        if unknown := sorted(set(values) - known):
            raise ConfigurationError(f"unknown model configuration keys: {', '.join(unknown)}")

        parsed = dict(values)
        try:
            for name, enum in _ENUM_FIELDS.items():
                if name in parsed:
                    parsed[name] = enum(parsed[name])
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        for name in _TUPLE_FIELDS:
            if name in parsed:
                parsed[name] = tuple(parsed[name])
        return cls(**parsed)


@dataclass
class ModelParams(ParamGroup):
    """Every parameter of the joint model.

    All heads are always present so a checkpoint has one layout per geometry;
    `active_parameters` selects what the enabled tasks use.
    """

    backbone: BackboneParams
    f5c: list[F5cParams] = field(default_factory=list)
    mer: Optional[MerHeadParams] = None
    flow: Optional[FlowHeadParams] = None
    landmark: Optional[LandmarkHeadParams] = None


@dataclass
class ClipOutputs:
    """Predictions for one clip of t frames.

    Attributes:
        logits (Tensor | None): n logits, None when MER is disabled.
        flows (list[Tensor]): t-1 fields of 2 x S x S (empty when disabled).
        landmarks (list[Tensor]): t-1 vectors of 2m for frames 1..t-1 (empty when disabled).
        features (list[Tensor]): t F5C features.
    """

    logits: Optional[Tensor]
    flows: list[Tensor]
    landmarks: list[Tensor]
    features: list[Tensor]


def init_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Initialize every component from its own random stream."""
    c, s = config.feature_channels, config.feature_size
    blocks = [
        init_f5c_params(
            component_rng(seed, f"f5c.{i}"),
            c,
            s,
            s,
            fcc_mode=config.fcc_mode,
            use_fcc=config.use_fcc,
            use_ccc=config.use_ccc,
        )
        for i in range(config.f5c_blocks)
    ]

    return ModelParams(
        backbone=init_backbone_params(
            component_rng(seed, "backbone"), config.in_channels, config.backbone_channels, config.frame_size
        ),
        f5c=blocks,
        mer=init_mer_head(
            component_rng(seed, "mer"),
            fused_channels(c, config.fusion),
            fused_length(config.t, config.fusion),
            s,
            config.n_classes,
            channels=config.mer_channels,
            kernel=config.mer_kernel,
            pool=config.mer_pool,
            fc_width=config.mer_fc_width,
        ),
        flow=init_flow_head(component_rng(seed, "flow"), config.in_channels, c, config.flow_channels),
        landmark=init_landmark_head(
            component_rng(seed, "landmark"),
            c,
            s,
            config.n_landmarks,
            config.frame_size,
            channels=config.landmark_channels,
            fc_width=config.landmark_fc_width,
        ),
    )


def active_parameters(params: ModelParams, config: ModelConfig) -> list[tuple[str, Tensor]]:
    """Named parameters reachable from the enabled tasks, in checkpoint order."""
    groups: list[tuple[str, ParamGroup]] = [("backbone", params.backbone)]
    if config.uses_f5c:
        groups += [(f"f5c.{i}", block) for i, block in enumerate(params.f5c)]
    if config.use_mer:
        groups.append(("mer", params.mer))
    if config.use_flow:
        groups.append(("flow", params.flow))
    if config.use_landmark:
        groups.append(("landmark", params.landmark))

    return [named for prefix, group in groups for named in group.named_parameters(f"{prefix}.")]


def prepare_frame(frame: np.ndarray, config: ModelConfig) -> Tensor:
    """Turn an S x S gray image in [0, 1] into a C_in x S x S tensor."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (config.frame_size, config.frame_size):
        raise DimensionError("prepare_frame", frame.shape, detail=f"expected {config.frame_size} x {config.frame_size}")
    return Tensor(np.repeat(frame[None], config.in_channels, axis=0))


def forward_clip(frames: Sequence[Tensor], params: ModelParams, config: ModelConfig) -> ClipOutputs:
    """Run the joint model over one clip.

    Args:
        frames (Sequence[Tensor]): t frames, each C_in x S x S.
        params (ModelParams)
        config (ModelConfig)

    Raises:
        DimensionError: When the clip length or frame shape is wrong.

    Returns:
        ClipOutputs: 1 logit vector, t-1 flow fields and t-1 landmark \
            vectors (for the enabled tasks).
    """
    if len(frames) != config.t:
        raise DimensionError("forward_clip", (len(frames),), detail=f"expected t = {config.t} frames")

    blocks = params.f5c if config.uses_f5c else []
    features = [f5c_stack(rich_feature(frame, params.backbone), blocks, config.k) for frame in frames]

    logits = None
    if config.use_mer:
        logits = mer_head(pair_feature_sequence(features, config.fusion), params.mer)

    flows = []
    if config.use_flow:
        flows = [
            flow_head(frames[i], frames[i + 1], features[i], features[i + 1], params.flow)
            for i in range(config.t - 1)
        ]

    landmarks = []
    if config.use_landmark:
        landmarks = [landmark_head(feature, params.landmark) for feature in features[1:]]

    return ClipOutputs(logits, flows, landmarks, features)


def infer_shapes(config: ModelConfig) -> dict[str, Any]:
    """Shapes along the model for one clip, without running it."""
    c, s = config.feature_channels, config.feature_size
    channels = fused_channels(c, config.fusion)
    length = fused_length(config.t, config.fusion)

    return {
        "frame": (config.in_channels, config.frame_size, config.frame_size),
        "backbone": infer_backbone_shapes(
            (config.in_channels, config.frame_size, config.frame_size),
            config.backbone_channels,
            config.frame_size,
        )[1:],
        "feature": (c, s, s),
        "mer_sequence": (channels, length, s, s),
        "mer_flat": mer_flat_size(config.mer_channels, length, s, config.mer_pool),
        "logits": (config.n_classes,),
        "flows": [(2, config.frame_size, config.frame_size)] * (config.t - 1),
        "landmarks": [(2 * config.n_landmarks,)] * (config.t - 1),
    }


def parameter_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: tensor.data for name, tensor in params.named_parameters()}


def load_parameter_arrays(params: ModelParams, arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into `params`.

    Raises:
        CheckpointMismatchError: When a name is missing, unexpected, or has another shape.
    """
    named = dict(params.named_parameters())
    if extra := sorted(set(arrays) - set(named)):
        raise CheckpointMismatchError(extra[0], "no such parameter", "present")

    for name, tensor in named.items():
        if name not in arrays:
            raise CheckpointMismatchError(name, tensor.shape, "missing")
        if arrays[name].shape != tensor.shape:
            raise CheckpointMismatchError(name, tensor.shape, arrays[name].shape)
        tensor.data = np.array(arrays[name], dtype=np.float64)
        tensor.grad = None
