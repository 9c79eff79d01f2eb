"""Holds default hyperparameters, file-format constants and enums."""

from enum import Enum

# clip geometry
T_FRAMES: int = 8
N_LANDMARKS: int = 68
SOURCE_FRAME_SIZE: int = 144
FRAME_SIZE: int = 128
VIDEO_LENGTH: int = 15

# feature map geometry after the backbone, C x H x W
FEATURE_CHANNELS: int = 128
FEATURE_SIZE: int = 16

# (C_out, kernel, stride, padding) of the four backbone convolutions
BACKBONE_LAYERS: tuple[tuple[int, int, tuple[int, int], tuple[int, int]], ...] = (
    (8, 4, (2, 2), (0, 0)),
    (32, 3, (2, 2), (0, 0)),
    (64, 2, (2, 2), (1, 1)),
    (128, 1, (1, 1), (0, 0)),
)

KNN_K: int = 4
F5C_BLOCKS: int = 1

# head widths; the method fixes the composition, not these sizes
MER_CHANNELS: int = 64
MER_KERNEL: int = 3
MER_POOL: int = 2
MER_FC_WIDTH: int = 256
FLOW_CHANNELS: tuple[int, int, int] = (16, 32, 64)
LANDMARK_CHANNELS: int = 32
LANDMARK_FC_WIDTH: int = 256

# loss weights
LAMBDA_FLOW: float = 0.1
LAMBDA_LANDMARK: float = 68.0

# optimizer
LEARNING_RATE: float = 5e-5
BETA1: float = 0.9
BETA2: float = 0.999
EPSILON: float = 1e-8
BATCH_SIZE: int = 32
EPOCHS: int = 10

# augmentation
FLIP_PROBABILITY: float = 0.5

# evaluation
FAILURE_THRESHOLD: float = 10.0
RIGHT_EYE: tuple[int, ...] = (36, 37, 38, 39, 40, 41)
LEFT_EYE: tuple[int, ...] = (42, 43, 44, 45, 46, 47)

# gradient checking
GRADCHECK_STEP: float = 1e-5
GRADCHECK_TOLERANCE: float = 1e-4
GRADCHECK_FLOOR: float = 1e-3
GRADCHECK_ATTEMPTS: int = 5

# random streams are keyed by seeds in [0, MAX_SEED]
MAX_SEED: int = 2**32 - 1

# file formats
FLO_MAGIC: float = 202021.25
CHECKPOINT_TAG: bytes = b"MERC"
CHECKPOINT_VERSION: int = 1
MANIFEST_VERSION: int = 1
LOSS_LOG_HEADER: tuple[str, ...] = ("epoch", "L_e", "L_f", "L_m", "L")

# left/right correspondence of the 68-point layout, used by horizontal flips
MIRROR_68: tuple[int, ...] = (
    # jaw
    16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0,
    # brows
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17,
    # nose bridge, nostrils
    27, 28, 29, 30, 35, 34, 33, 32, 31,
    # eyes
    45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40,
    # outer lips
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55,
    # inner lips
    64, 63, 62, 61, 60, 67, 66, 65,
)


class Fusion(Enum):
    """How frame features are fused into the MER input sequence."""

    concat = "concat"
    add = "add"
    subtract = "subtract"
    first = "first"
    last = "last"
    all = "all"


class FccMode(Enum):
    """Structure of the fully-connected convolution."""

    full = "full"
    vertical = "vertical"
    horizontal = "horizontal"


class Task(Enum):
    mer = "mer"
    flow = "flow"
    landmark = "landmark"


class Direction(Enum):
    vertical = "vertical"
    horizontal = "horizontal"


class Split(Enum):
    train = "train"
    test = "test"


# names of the synthetic deformation classes, indexed by class label
CLASS_NAMES: tuple[str, ...] = (
    "mouth_corner_raise",
    "eye_narrowing",
    "brow_raise",
    "lower_lip_drop",
    "brow_lower",
)
