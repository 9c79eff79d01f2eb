#!/usr/bin/env python3

"""Joint learning of micro-expression recognition, optical flow estimation \
    and facial landmark detection.

Subcommands:
    gen-data    generate a synthetic micro-expression dataset (or merge several)
    train       train the joint model on a dataset
    eval        evaluate a checkpoint on a dataset
    loso        leave-one-subject-out cross-validation
    gradcheck   finite-difference check of every differentiable operation
    infer       predict class, flows and landmarks for one clip
    warp-demo   warp frames of a clip by its flows and colour-code the flows

Exit codes: 0 success, 1 validation failure, 2 missing or invalid input.
"""

import json
import logging
import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

import argument_handling as ahandling
from mer_util import constants
from mer_util.config import RunConfig, load_config_file, resolve_run_config
from mer_util.constants import CLASS_NAMES
from mer_util.dataset import (
    center_crop,
    center_crop_frames,
    load_clip,
    load_clips,
    merge_manifests,
    read_manifest,
    write_manifest,
)
from mer_util.errors import CheckpointMismatchError, ConfigurationError, DatasetError, FormatError, MerError
from mer_util.formats import read_pgm, write_flo, write_landmarks_csv, write_pgm, write_ppm
from mer_util.gradcheck import SUITE, gradient_suite
from mer_util.loso import run_loso
from mer_util.synthetic import generate_synthetic
from mer_util.training import evaluate, load_checkpoint, predict, train
from mer_util.visualization import flow_to_color, warp_error, warp_frame

logger = logging.getLogger("joint_learning")

LOG_FORMAT = "%(levelname)s\t: %(message)s"


def _run_config(args: Namespace) -> RunConfig:
    """Resolve flags over the JSON config file over the defaults."""
    file_values = load_config_file(Path(args.config)) if getattr(args, "config", None) else {}
    flag_values = {}
    for aid in ahandling.RUN_CONFIG_ARGUMENTS:
        dest = ahandling.destination(ahandling.ARGUMENTS[aid])
        flag_values[dest] = getattr(args, dest, None)
    return resolve_run_config(file_values, flag_values)


def _manifest(args: Namespace):
    manifest = read_manifest(_manifest_path(Path(args.manifest)))
    if getattr(args, "subjects", None):
        missing = sorted(set(args.subjects) - set(manifest.subjects()))
        if missing:
            raise DatasetError(f"unknown subjects: {', '.join(missing)}")
        manifest = manifest.select(args.subjects)
    return manifest


def _manifest_path(path: Path) -> Path:
    return path / "manifest.json" if path.is_dir() else path


def _handle_gen_data(args: Namespace) -> int:
    out = Path(args.out)

    if args.merge:
        paths = [_manifest_path(Path(p)) for p in args.merge]
        manifests = [read_manifest(p) for p in paths]
        merged = merge_manifests(manifests, [p.parent.name for p in paths], out)
        write_manifest(merged, out / "manifest.json")
        logger.info("merged %d manifests: %d clips of %d subjects", len(paths), len(merged.clips), len(merged.subjects()))
        return 0

    manifest = generate_synthetic(
        out,
        args.seed if args.seed is not None else 0,
        args.n_subjects,
        args.clips,
        args.classes,
        t=args.t if args.t is not None else constants.T_FRAMES,
        frame_size=args.frame_size,
        video_length=args.video_length,
        workers=args.workers if args.workers is not None else 1,
    )
    print(f"{len(manifest.clips)} clips\t: {out / 'manifest.json'}")
    return 0


def _handle_train(args: Namespace) -> int:
    config = _run_config(args)
    manifest = _manifest(args)
    model_config = config.model_config(manifest.n_classes, manifest.t, manifest.m)
    clips = load_clips(manifest)

    out = Path(args.out)
    result = train(clips, config, model_config, out)

    report = evaluate(clips, result.params, model_config, config.workers).report()
    report.write(out, stem="train_metrics")
    print(report.to_text())
    return 0


def _handle_eval(args: Namespace) -> int:
    params, model_config = load_checkpoint(Path(args.checkpoint))
    manifest = _manifest(args)
    if manifest.n_classes != model_config.n_classes and model_config.use_mer:
        raise DatasetError(
            f"the dataset has {manifest.n_classes} classes, the checkpoint {model_config.n_classes}"
        )

    workers = args.workers if args.workers is not None else 1
    report = evaluate(load_clips(manifest), params, model_config, workers).report()
    if args.out:
        report.write(Path(args.out))
    print(report.to_text())
    return 0


def _handle_loso(args: Namespace) -> int:
    config = _run_config(args)
    result = run_loso(_manifest(args), config, Path(args.out))
    for fold, totals in result.folds:
        logger.info("held out %s: %s", fold.held_out, json.dumps(totals.report().to_dict()))
    print(result.report().to_text())
    return 0


def _handle_gradcheck(args: Namespace) -> int:
    if args.only and (unknown := sorted(set(args.only) - set(SUITE))):
        logger.error("unknown checks: %s (available: %s)", ", ".join(unknown), ", ".join(SUITE))
        return 2

    reports = gradient_suite(
        args.seed if args.seed is not None else 0, names=args.only, max_checks=args.max_checks
    )
    for report in reports:
        status = "ok" if report.passed else "FAIL"
        print(f"{report.name}\t{report.max_rel_error:.3e}\t{report.checked}\t{status}")

    worst = max(r.max_rel_error for r in reports)
    print(f"max relative error\t: {worst:.3e}")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.error("gradient check failed: %s", ", ".join(failed))
        return 1
    return 0


def _write_flows(out: Path, flows: np.ndarray, frames: np.ndarray) -> None:
    """Write each flow as .flo, its colour coding and the warped frame."""
    for k, flow in enumerate(flows):
        write_flo(out / f"flow_{k:03d}.flo", flow)
        write_ppm(out / f"flow_{k:03d}.ppm", flow_to_color(flow))
        write_pgm(out / f"warped_{k:03d}.pgm", warp_frame(frames[k + 1], flow))


def _handle_infer(args: Namespace) -> int:
    params, model_config = load_checkpoint(Path(args.checkpoint))
    if len(args.frame_files) != model_config.t:
        raise DatasetError(f"received {len(args.frame_files)} frames, the model expects t = {model_config.t}")

    frames = np.stack([read_pgm(Path(p)) for p in args.frame_files]).astype(np.float64) / 255.0
    frames = center_crop_frames(frames, model_config.frame_size)
    prediction = predict(frames, params, model_config)

    if prediction.probabilities is not None:
        names = CLASS_NAMES[: model_config.n_classes] if model_config.n_classes <= len(CLASS_NAMES) else None
        print(f"class\t: {prediction.label}" + (f" ({names[prediction.label]})" if names else ""))
        for c, p in enumerate(prediction.probabilities):
            print(f"{c}\t{p:.6f}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if prediction.probabilities is not None:
            (out / "probabilities.json").write_text(
                json.dumps({"label": prediction.label, "probabilities": prediction.probabilities.tolist()}, indent=2)
                + "\n",
                encoding="utf-8",
            )
        if prediction.flows is not None:
            _write_flows(out, prediction.flows, frames)
        if prediction.landmarks is not None:
            write_landmarks_csv(out / "landmarks.csv", prediction.landmarks)
        logger.info("predictions written to %s", out)
    return 0


def _handle_warp_demo(args: Namespace) -> int:
    manifest = read_manifest(_manifest_path(Path(args.manifest)))
    clip = load_clip(manifest.find(args.clip), manifest.root)

    if args.checkpoint:
        params, model_config = load_checkpoint(Path(args.checkpoint))
        clip = center_crop(clip, model_config.frame_size)
        flows = predict(clip.frames, params, model_config).flows
        if flows is None:
            raise ConfigurationError("the checkpoint was trained without optical flow")
    else:
        flows = clip.flows

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_flows(out, flows, clip.frames)
    for k, flow in enumerate(flows):
        print(f"{k}\t{warp_error(clip.frames[k], clip.frames[k + 1], flow) * 255.0:.4f}")
    return 0


COMMANDS: dict[str, tuple[Callable[[Namespace], int], tuple[str, ...], str]] = {
    "gen-data": (
        _handle_gen_data,
        ("out", "seed", "n_subjects", "clips", "classes", "frames", "frame_size", "video_length", "workers", "merge"),
        "generate a synthetic dataset",
    ),
    "train": (
        _handle_train,
        ("manifest", "out", "config", "subjects_filter", *ahandling.RUN_CONFIG_ARGUMENTS),
        "train the joint model",
    ),
    "eval": (
        _handle_eval,
        ("manifest", "checkpoint", "out_optional", "subjects_filter", "workers"),
        "evaluate a checkpoint",
    ),
    "loso": (
        _handle_loso,
        ("manifest", "out", "config", "subjects_filter", *ahandling.RUN_CONFIG_ARGUMENTS),
        "leave-one-subject-out cross-validation",
    ),
    "gradcheck": (_handle_gradcheck, ("seed", "max_checks", "only"), "finite-difference gradient suite"),
    "infer": (_handle_infer, ("checkpoint", "out_optional", "frame_files"), "predict one clip"),
    "warp-demo": (_handle_warp_demo, ("manifest", "clip", "out", "predicted"), "warp a clip by its flows"),
}


def get_parser() -> ArgumentParser:
    parser = ahandling.get_argument_parser(
        ahandling.get_argument_subset("verbose"),
        description="Joint micro-expression recognition, optical flow and landmark detection.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, argument_ids, description) in COMMANDS.items():
        ahandling.add_arguments(
            subparsers.add_parser(name, help=description, description=description),
            ahandling.get_argument_subset(*argument_ids),
        )
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Parse `argv`, run the command and map failures to exit codes."""
    try:
        arguments = get_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if arguments.verbose else logging.INFO, format=LOG_FORMAT, force=True
    )
    logger.debug("arguments: %s", arguments)

    try:
        return COMMANDS[arguments.command][0](arguments)
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as e:
        logger.error("%s (not found)", e.filename or e)
        return 2
    except (FormatError, CheckpointMismatchError) as e:
        logger.error("%s\n%s", e.__class__.__name__, e)
        return 2
    except MerError as e:
        logger.error("%s\n%s", e.__class__.__name__, e)
        return 1


if __name__ == "__main__":
    ECODE = main(sys.argv[1:])

    sys.exit(ECODE)
