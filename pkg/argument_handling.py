"""Provides arguments for the joint_learning subcommands."""

from argparse import ArgumentParser
from typing import Any

from mer_util import constants
from mer_util.constants import FccMode, Fusion


class Argument:
    """Argument specification.

    Attributes:
        flags (tuple[str, ...]): Flags used to invoke the argument.
        arguments (dict[str, Any]): Other arguments used in the argument construction in argparse.
    """

    flags: tuple[str, ...]
    arguments: dict[str, Any]

    def __init__(self, *flags: str, **args) -> None:
        self.flags = flags
        self.arguments = args


# argument definitions
ARGUMENTS: dict[str, Argument] = {
    "verbose": Argument(
        "-v",
        "--verbose",
        action="store_true",
        help="log debugging messages",
    ),
    "out": Argument(
        "-o",
        "--out",
        type=str,
        required=True,
        help="directory where all output files are stored",
    ),
    "out_optional": Argument(
        "-o",
        "--out",
        type=str,
        default=None,
        help="directory where output files are stored; nothing is written if omitted",
    ),
    "config": Argument(
        "-c",
        "--config",
        type=str,
        default=None,
        help="JSON file with RunConfig values; flags given on the command line override it",
    ),
    "manifest": Argument(
        "-m",
        "--manifest",
        type=str,
        required=True,
        help="dataset manifest.json",
    ),
    "checkpoint": Argument(
        "--checkpoint",
        type=str,
        required=True,
        help="checkpoint written by train",
    ),
    "subjects_filter": Argument(
        "--subjects",
        nargs="+",
        default=None,
        help="only use clips of these subject ids; default: all subjects",
    ),
    # gen-data
    "seed": Argument(
        "--seed",
        type=int,
        default=None,
        help="seed of every random stream; default: 0",
    ),
    "n_subjects": Argument(
        "--subjects",
        dest="n_subjects",
        type=int,
        default=4,
        help="number of synthetic subjects; default: 4",
    ),
    "clips": Argument(
        "--clips",
        type=int,
        default=5,
        help="clips per subject; default: 5",
    ),
    "classes": Argument(
        "--classes",
        type=int,
        choices=[3, 5],
        default=3,
        help="number of classes; default: 3",
    ),
    "frames": Argument(
        "-t",
        "--frames",
        dest="t",
        type=int,
        default=None,
        help=f"frames sampled per clip; default: {constants.T_FRAMES}",
    ),
    "frame_size": Argument(
        "--frame-size",
        type=int,
        default=constants.SOURCE_FRAME_SIZE,
        help=f"side of the generated frames in pixels; default: {constants.SOURCE_FRAME_SIZE}",
    ),
    "video_length": Argument(
        "--video-length",
        type=int,
        default=constants.VIDEO_LENGTH,
        help=f"frames of each underlying video; default: {constants.VIDEO_LENGTH}",
    ),
    "merge": Argument(
        "--merge",
        nargs="+",
        default=None,
        metavar="MANIFEST",
        help="instead of generating, merge these manifests into one under --out; \
        subject ids are prefixed with the name of each manifest's directory",
    ),
    # training hyperparameters
    "epochs": Argument("--epochs", type=int, default=None, help=f"default: {constants.EPOCHS}"),
    "batch_size": Argument("--batch-size", type=int, default=None, help=f"default: {constants.BATCH_SIZE}"),
    "lr": Argument("--lr", type=float, default=None, help=f"Adam learning rate; default: {constants.LEARNING_RATE}"),
    "lambda_f": Argument(
        "--lambda-f", type=float, default=None, help=f"optical flow loss weight; default: {constants.LAMBDA_FLOW}"
    ),
    "lambda_m": Argument(
        "--lambda-m", type=float, default=None, help=f"landmark loss weight; default: {constants.LAMBDA_LANDMARK}"
    ),
    "workers": Argument(
        "-w",
        "--workers",
        type=int,
        default=None,
        help="threads computing per-clip gradients and evaluations; default: 1",
    ),
    "k": Argument("-k", type=int, default=None, help=f"channel neighbours in CCC; default: {constants.KNN_K}"),
    "f5c_blocks": Argument(
        "--f5c-blocks", type=int, default=None, help="stacked F5C blocks, 0 removes F5C; default: 1"
    ),
    "no_fcc": Argument("--no-fcc", dest="use_fcc", action="store_false", default=None, help="drop the FCC branch"),
    "no_ccc": Argument("--no-ccc", dest="use_ccc", action="store_false", default=None, help="drop the CCC branch"),
    "fcc_mode": Argument(
        "--fcc-mode",
        type=str,
        choices=[m.value for m in FccMode],
        default=None,
        help="FCC structure; default: full",
    ),
    "fusion": Argument(
        "--fusion",
        type=str,
        choices=[f.value for f in Fusion],
        default=None,
        help="frame feature fusion for recognition; default: concat",
    ),
    "no_mer": Argument(
        "--no-mer", dest="use_mer", action="store_false", default=None, help="disable expression recognition"
    ),
    "no_flow": Argument(
        "--no-flow", dest="use_flow", action="store_false", default=None, help="disable optical flow estimation"
    ),
    "no_landmark": Argument(
        "--no-landmark", dest="use_landmark", action="store_false", default=None, help="disable landmark detection"
    ),
    "in_channels": Argument(
        "--in-channels", type=int, choices=[1, 3], default=None, help="input channels of the backbone; default: 1"
    ),
    "reduced": Argument(
        "--reduced",
        action="store_const",
        const=True,
        default=None,
        help="use the reduced geometry (16 px frames, narrow layers)",
    ),
    # gradcheck
    "max_checks": Argument(
        "--max-checks",
        type=int,
        default=20,
        help="coordinates compared per tensor; default: 20",
    ),
    "only": Argument(
        "--only",
        nargs="+",
        default=None,
        metavar="CHECK",
        help="run only these checks; default: the whole suite",
    ),
    # infer / warp-demo
    "frame_files": Argument(
        "frame_files",
        nargs="+",
        help="t PGM frames of one clip in temporal order",
    ),
    "clip": Argument(
        "--clip",
        type=str,
        required=True,
        help="clip id from the manifest",
    ),
    "predicted": Argument(
        "--checkpoint",
        type=str,
        default=None,
        help="warp with flows predicted by this checkpoint instead of the ground truth",
    ),
}

# Arguments whose destinations are RunConfig fields.
RUN_CONFIG_ARGUMENTS: tuple[str, ...] = (
    "seed",
    "frames",
    "epochs",
    "batch_size",
    "lr",
    "lambda_f",
    "lambda_m",
    "workers",
    "k",
    "f5c_blocks",
    "no_fcc",
    "no_ccc",
    "fcc_mode",
    "fusion",
    "no_mer",
    "no_flow",
    "no_landmark",
    "in_channels",
    "reduced",
)


def get_argument_subset(*argument_ids: str) -> dict[str, Argument]:
    """Subset `ARGUMENTS`.

    Args:
        argument_ids (Optional[str]): Keys of `ARGUMENTS` that should be \
            included in the subset.

    Returns:
        dict[str, Argument]: Subset; a new dictionary.
    """
    res = {}

    for aid in argument_ids:
        res |= {aid: ARGUMENTS[aid]}

    return res


def destination(argument: Argument) -> str:
    """Name of the attribute argparse stores the argument under."""
    if "dest" in argument.arguments:
        return argument.arguments["dest"]
    long = [flag for flag in argument.flags if flag.startswith("--") or not flag.startswith("-")]
    return (long[0] if long else argument.flags[0]).lstrip("-").replace("-", "_")


def add_arguments(parser: ArgumentParser, args: dict[str, Argument]) -> ArgumentParser:
    """Add every argument of `args` to an existing parser or subparser."""
    for arg in args.values():
        parser.add_argument(*arg.flags, **arg.arguments)

    return parser


def get_argument_parser(
    args: dict[str, Argument], **parser_init_args
) -> ArgumentParser:
    """Create an ArgumentParser instance from an Argument dictionary.

    Args:
        args (dict[str, Argument]): Dictionary of arguments.
        parser_init_args (dict): Additional arguments for the ArgumentParser \
            constructor.

    Returns:
        ArgumentParser: ArgumentParser instance.
    """
    return add_arguments(ArgumentParser(**parser_init_args), args)
