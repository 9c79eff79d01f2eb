"""Joint training, evaluation, prediction and checkpoints."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence, TypeVar

import numpy as np

from mer_util import constants, ops
from mer_util.adam import adam_step, init_adam
from mer_util.config import RunConfig
from mer_util.constants import Split
from mer_util.dataset import Clip, augment, data_rng
from mer_util.errors import DatasetError
from mer_util.formats import read_checkpoint, write_checkpoint
from mer_util.losses import LossWeights, ce_loss, flow_loss, full_loss, inter_ocular_distance, landmark_loss
from mer_util.metrics import ConfusionCounts, EvaluationTotals, end_point_error, normalized_mean_errors
from mer_util.model import (
    ModelConfig,
    ModelParams,
    active_parameters,
    forward_clip,
    init_model,
    load_parameter_arrays,
    parameter_arrays,
    prepare_frame,
)
from mer_util.tensor import Tensor, gradients, no_grad

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.merc"
LOSS_LOG_NAME = "losses.csv"

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class ClipLosses:
    """Scalar losses of one clip; disabled tasks contribute constant zeros."""

    l_e: Tensor
    l_f: Tensor
    l_m: Tensor
    total: Tensor

    def values(self) -> np.ndarray:
        return np.array([self.l_e.item(), self.l_f.item(), self.l_m.item(), self.total.item()])


@dataclass
class EpochLosses:
    epoch: int
    l_e: float
    l_f: float
    l_m: float
    total: float

    def row(self) -> list[str]:
        return [str(self.epoch)] + [repr(v) for v in (self.l_e, self.l_f, self.l_m, self.total)]


@dataclass
class TrainResult:
    params: ModelParams
    model_config: ModelConfig
    history: list[EpochLosses] = field(default_factory=list)


def _check_clip(clip: Clip, config: ModelConfig) -> None:
    if len(clip.frames) != config.t:
        raise DatasetError(f"clip {clip.clip_id!r} has {len(clip.frames)} frames, the model expects t = {config.t}")
    if clip.landmarks.shape[1] != 2 * config.n_landmarks:
        raise DatasetError(f"clip {clip.clip_id!r} has {clip.landmarks.shape[1] // 2} landmarks, expected {config.n_landmarks}")


def clip_losses(clip: Clip, params: ModelParams, config: ModelConfig, weights: LossWeights = LossWeights()) -> ClipLosses:
    """Forward one already cropped clip and compute every task loss."""
    _check_clip(clip, config)
    outputs = forward_clip([prepare_frame(f, config) for f in clip.frames], params, config)

    l_e = ce_loss(outputs.logits, clip.label) if config.use_mer else Tensor(0.0)
    l_f = flow_loss(outputs.flows, list(clip.flows)) if config.use_flow else Tensor(0.0)
    if config.use_landmark:
        truth = list(clip.landmarks[1:])
        l_m = landmark_loss(outputs.landmarks, truth, [inter_ocular_distance(g) for g in truth])
    else:
        l_m = Tensor(0.0)

    return ClipLosses(l_e, l_f, l_m, full_loss(l_e, l_f, l_m, weights))


def _parallel_map(fn: Callable[[T], R], items: Sequence[T], pool: Optional[ThreadPoolExecutor]) -> list[R]:
    """Map in item order, on the pool when one is given."""
    return list(pool.map(fn, items)) if pool is not None else [fn(item) for item in items]


def _batches(order: np.ndarray, size: int) -> Iterator[np.ndarray]:
    for start in range(0, len(order), size):
        yield order[start : start + size]


def batch_gradients(
    clips: Sequence[Clip],
    params: ModelParams,
    tensors: Sequence[Tensor],
    config: ModelConfig,
    weights: LossWeights,
    pool: Optional[ThreadPoolExecutor] = None,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Mean gradient of the batch loss and the per-clip loss values.

    Clip gradients are computed independently and summed in clip order.
    """

    def work(clip: Clip) -> tuple[list[np.ndarray], np.ndarray]:
        losses = clip_losses(clip, params, config, weights)
        return gradients(losses.total, tensors), losses.values()

    results = _parallel_map(work, clips, pool)
    total = [np.zeros_like(t.data) for t in tensors]
    for grads, _ in results:
        for acc, g in zip(total, grads):
            acc += g
    return [g / len(results) for g in total], np.stack([values for _, values in results])


def append_loss_log(path: Path, row: EpochLosses) -> None:
    """Append one epoch to the CSV log, writing the header for a new file."""
    path = Path(path)
    new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if new:
            writer.writerow(constants.LOSS_LOG_HEADER)
        writer.writerow(row.row())


def train(
    clips: Sequence[Clip],
    config: RunConfig,
    model_config: ModelConfig,
    out_dir: Optional[Path] = None,
    params: Optional[ModelParams] = None,
) -> TrainResult:
    """Optimize the full loss with Adam over mini-batches.

    Every epoch shuffles the clips, augments each with a random crop and
    flip, and takes one Adam step per batch on the parameters of the enabled
    tasks. Parameters of disabled tasks are never touched.

    Args:
        clips (Sequence[Clip]): Training clips at source resolution.
        config (RunConfig)
        model_config (ModelConfig)
        out_dir (Path, optional): Receives `losses.csv` and the checkpoint.
        params (ModelParams, optional): Start from these instead of a fresh init.

    Raises:
        DatasetError: When there is nothing to train on.

    Returns:
        TrainResult
    """
    if not clips:
        raise DatasetError("empty training set")
    for clip in clips:
        _check_clip(clip, model_config)

    params = params if params is not None else init_model(model_config, config.seed)
    tensors = [t for _, t in active_parameters(params, model_config)]
    state = init_adam(tensors, config.lr, config.beta1, config.beta2, config.eps)
    weights = config.loss_weights
    n = len(clips)
    history = []

    logger.info(
        "training %d clips, %d parameters, tasks %s",
        n,
        sum(t.size for t in tensors),
        ", ".join(task.value for task in model_config.tasks),
    )

    with (ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else nullcontext()) as pool:
        for epoch in range(1, config.epochs + 1):
            order = data_rng(config.seed, "shuffle", epoch).permutation(n)
            sums = np.zeros(4)
            for batch in _batches(order, config.batch_size):
                augmented = [
                    augment(
                        clips[i],
                        Split.train,
                        data_rng(config.seed, "augment", (epoch - 1) * n + int(i)),
                        model_config.frame_size,
                        config.flip_probability,
                    )
                    for i in batch
                ]
                grads, values = batch_gradients(augmented, params, tensors, model_config, weights, pool)
                adam_step(tensors, grads, state)
                sums += values.sum(axis=0)

            means = sums / n
            row = EpochLosses(epoch, *(float(v) for v in means))
            history.append(row)
            logger.info(
                "epoch %d: L_e %.5f, L_f %.5f, L_m %.5f, L %.5f", epoch, row.l_e, row.l_f, row.l_m, row.total
            )
            if out_dir is not None:
                append_loss_log(Path(out_dir) / LOSS_LOG_NAME, row)

    if out_dir is not None:
        save_checkpoint(Path(out_dir) / CHECKPOINT_NAME, params, model_config)

    return TrainResult(params, model_config, history)


@dataclass
class ClipPrediction:
    """Attributes:
    probabilities (np.ndarray | None): n class probabilities.
    label (int | None): Most probable class.
    flows (np.ndarray | None): (t-1) x 2 x S x S.
    landmarks (np.ndarray | None): (t-1) x 2m, frames 1..t-1.
    """

    probabilities: Optional[np.ndarray]
    label: Optional[int]
    flows: Optional[np.ndarray]
    landmarks: Optional[np.ndarray]


def predict(frames: np.ndarray, params: ModelParams, config: ModelConfig) -> ClipPrediction:
    """Run the model on t cropped frames (t x S x S, values in [0, 1]) without recording."""
    with no_grad():
        outputs = forward_clip([prepare_frame(f, config) for f in frames], params, config)

    probabilities = ops.softmax(outputs.logits.data) if outputs.logits is not None else None
    return ClipPrediction(
        probabilities,
        int(np.argmax(probabilities)) if probabilities is not None else None,
        np.stack([f.data for f in outputs.flows]) if outputs.flows else None,
        np.stack([l.data for l in outputs.landmarks]) if outputs.landmarks else None,
    )


def evaluate_clip(clip: Clip, params: ModelParams, config: ModelConfig) -> EvaluationTotals:
    """Totals of one clip after the centre crop."""
    clip = augment(clip, Split.test, None, config.frame_size)
    _check_clip(clip, config)
    prediction = predict(clip.frames, params, config)

    totals = EvaluationTotals()
    if prediction.label is not None:
        totals.counts = ConfusionCounts.empty(config.n_classes)
        totals.counts.update(clip.label, prediction.label)
    if prediction.flows is not None:
        totals.flow.add(end_point_error(prediction.flows, clip.flows))
    if prediction.landmarks is not None:
        truth = clip.landmarks[1:]
        totals.landmarks.add(
            normalized_mean_errors(prediction.landmarks, truth, [inter_ocular_distance(g) for g in truth])
        )
    return totals


def evaluate(
    clips: Sequence[Clip], params: ModelParams, config: ModelConfig, workers: int = 1
) -> EvaluationTotals:
    """Pooled totals over clips; parameters are only read."""
    totals = EvaluationTotals(counts=ConfusionCounts.empty(config.n_classes) if config.use_mer else None)
    with (ThreadPoolExecutor(max_workers=workers) if workers > 1 else nullcontext()) as pool:
        for clip_totals in _parallel_map(lambda c: evaluate_clip(c, params, config), clips, pool):
            totals = totals.merge(clip_totals)
    return totals


def save_checkpoint(path: Path, params: ModelParams, config: ModelConfig) -> None:
    write_checkpoint(path, config.to_dict(), parameter_arrays(params))
    logger.info("checkpoint written to %s", path)


def load_checkpoint(path: Path) -> tuple[ModelParams, ModelConfig]:
    """Rebuild the model a checkpoint was saved from.

    Raises:
        FormatError: When the file is not a valid checkpoint.
        CheckpointMismatchError: When its parameters do not fit its configuration.
    """
    values, arrays = read_checkpoint(path)
    config = ModelConfig.from_dict(values)
    params = init_model(config)
    load_parameter_arrays(params, arrays)
    return params, config
