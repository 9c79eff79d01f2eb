"""Evaluation metrics: classification scores, end-point error and landmark NME.

Counters merge associatively, so per-clip results can be pooled across
batches, workers and LOSO folds before the scores are computed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from mer_util import constants
from mer_util.errors import DatasetError, DimensionError

logger = logging.getLogger(__name__)


@dataclass
class ConfusionCounts:
    """Per-class support and outcome counts.

    Attributes:
        support (np.ndarray): N_j, samples whose true class is j.
        tp (np.ndarray): True positives per class.
        fp (np.ndarray): False positives per class.
        fn (np.ndarray): False negatives per class.
    """

    support: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def empty(cls, n_classes: int) -> "ConfusionCounts":
        return cls(*(np.zeros(n_classes, dtype=np.int64) for _ in range(4)))

    @classmethod
    def from_predictions(
        cls, labels: Sequence[int], predictions: Sequence[int], n_classes: int
    ) -> "ConfusionCounts":
        counts = cls.empty(n_classes)
        for label, prediction in zip(labels, predictions, strict=True):
            counts.update(label, prediction)
        return counts

    @property
    def n_classes(self) -> int:
        return len(self.support)

    @property
    def total(self) -> int:
        return int(self.support.sum())

    def update(self, label: int, prediction: int) -> None:
        if not (0 <= label < self.n_classes and 0 <= prediction < self.n_classes):
            raise DimensionError("ConfusionCounts.update", (label, prediction), detail=f"{self.n_classes} classes")
        self.support[label] += 1
        if label == prediction:
            self.tp[label] += 1
        else:
            self.fp[prediction] += 1
            self.fn[label] += 1

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.n_classes != self.n_classes:
            raise DimensionError("ConfusionCounts.merge", (self.n_classes,), (other.n_classes,))
        return ConfusionCounts(
            self.support + other.support, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn
        )

    __add__ = merge


@dataclass(frozen=True)
class ClassificationScores:
    """Scores in percent.

    Attributes:
        accuracy (float)
        wf1 (float): Support-weighted F1.
        uf1 (float): Unweighted mean F1.
        uar (float): Unweighted average recall.
        empty_classes (tuple[int, ...]): Classes without samples; their recall counts as 0.
    """

    accuracy: float
    wf1: float
    uf1: float
    uar: float
    empty_classes: tuple[int, ...] = ()


def classification_metrics(counts: ConfusionCounts) -> ClassificationScores:
    """Acc, WF1, UF1 and UAR from pooled counts.

    Raises:
        DatasetError: When no sample was counted.
    """
    total = counts.total
    if total == 0:
        raise DatasetError("classification metrics over zero samples")

    tp = counts.tp.astype(np.float64)
    denominator = 2 * tp + counts.fp + counts.fn
    f1 = np.divide(2 * tp, denominator, out=np.zeros_like(tp), where=denominator > 0)
    recall = np.divide(tp, counts.support, out=np.zeros_like(tp), where=counts.support > 0)
    empty = tuple(int(j) for j in np.flatnonzero(counts.support == 0))
    if empty:
        logger.warning("classes without samples, recall counted as 0: %s", empty)

    return ClassificationScores(
        accuracy=100.0 * float(tp.sum()) / total,
        wf1=100.0 * float((counts.support / total * f1).sum()),
        uf1=100.0 * float(f1.mean()),
        uar=100.0 * float(recall.mean()),
        empty_classes=empty,
    )


def _as_fields(fields: Any) -> np.ndarray:
    array = np.asarray(fields, dtype=np.float64)
    return array[None] if array.ndim == 3 else array


def end_point_error(pred, gt) -> float:
    """Per-pixel `sqrt(du^2 + dv^2)` averaged per field, then over the fields.

    Args:
        pred (np.ndarray): One 2 x H x W field or a stack K x 2 x H x W.
        gt (np.ndarray): Same shape as `pred`.
    """
    pred, gt = _as_fields(pred), _as_fields(gt)
    if pred.shape != gt.shape or pred.ndim != 4 or pred.shape[1] != 2:
        raise DimensionError("end_point_error", pred.shape, gt.shape)
    per_pixel = np.sqrt(((pred - gt) ** 2).sum(axis=1))
    return float(per_pixel.mean(axis=(1, 2)).mean())


flow_metrics = end_point_error


def normalized_mean_errors(pred, gt, d_o: Sequence[float]) -> np.ndarray:
    """NME in percent of every sample: mean point-to-point distance over d_o.

    Args:
        pred (np.ndarray): K x 2m (or one 2m vector).
        gt (np.ndarray): Same shape.
        d_o (Sequence[float]): K inter-ocular distances.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    d_o = np.asarray(d_o, dtype=np.float64).reshape(-1)
    if pred.shape != gt.shape or pred.shape[1] % 2 or len(d_o) != pred.shape[0]:
        raise DimensionError("landmark_metrics", pred.shape, gt.shape, d_o.shape)
    if (d_o <= 0).any():
        raise DatasetError("non-positive inter-ocular distance")

    distances = np.linalg.norm((pred - gt).reshape(pred.shape[0], -1, 2), axis=2)
    return 100.0 * distances.mean(axis=1) / d_o


def landmark_metrics(pred, gt, d_o: Sequence[float]) -> tuple[float, float]:
    """Return (NME, failure rate), both in percent."""
    errors = normalized_mean_errors(pred, gt, d_o)
    return float(errors.mean()), 100.0 * float((errors > constants.FAILURE_THRESHOLD).mean())


@dataclass
class FlowErrorTotals:
    """Sum of per-clip EPE and the clip count."""

    epe_sum: float = 0.0
    clips: int = 0

    def add(self, epe: float) -> None:
        self.epe_sum += epe
        self.clips += 1

    def merge(self, other: "FlowErrorTotals") -> "FlowErrorTotals":
        return FlowErrorTotals(self.epe_sum + other.epe_sum, self.clips + other.clips)

    @property
    def mean(self) -> Optional[float]:
        return self.epe_sum / self.clips if self.clips else None


@dataclass
class LandmarkErrorTotals:
    """Sum of per-sample NME, sample and failure counts."""

    nme_sum: float = 0.0
    samples: int = 0
    failures: int = 0

    def add(self, errors: np.ndarray) -> None:
        self.nme_sum += float(np.sum(errors))
        self.samples += int(np.size(errors))
        self.failures += int(np.sum(np.asarray(errors) > constants.FAILURE_THRESHOLD))

    def merge(self, other: "LandmarkErrorTotals") -> "LandmarkErrorTotals":
        return LandmarkErrorTotals(
            self.nme_sum + other.nme_sum, self.samples + other.samples, self.failures + other.failures
        )

    @property
    def nme(self) -> Optional[float]:
        return self.nme_sum / self.samples if self.samples else None

    @property
    def failure_rate(self) -> Optional[float]:
        return 100.0 * self.failures / self.samples if self.samples else None


@dataclass
class EvaluationTotals:
    """Everything an evaluation accumulates; merging pools LOSO folds."""

    counts: Optional[ConfusionCounts] = None
    flow: FlowErrorTotals = field(default_factory=FlowErrorTotals)
    landmarks: LandmarkErrorTotals = field(default_factory=LandmarkErrorTotals)

    def merge(self, other: "EvaluationTotals") -> "EvaluationTotals":
        if self.counts is None:
            counts = other.counts
        elif other.counts is None:
            counts = self.counts
        else:
            counts = self.counts.merge(other.counts)
        return EvaluationTotals(counts, self.flow.merge(other.flow), self.landmarks.merge(other.landmarks))

    def report(self) -> "MetricReport":
        scores = classification_metrics(self.counts) if self.counts is not None and self.counts.total else None
        return MetricReport(
            clips=max(self.counts.total if self.counts is not None else 0, self.flow.clips),
            scores=scores,
            epe=self.flow.mean,
            nme=self.landmarks.nme,
            failure_rate=self.landmarks.failure_rate,
        )


@dataclass(frozen=True)
class MetricReport:
    """Scores of one evaluation; absent tasks stay None."""

    clips: int
    scores: Optional[ClassificationScores] = None
    epe: Optional[float] = None
    nme: Optional[float] = None
    failure_rate: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        """Flat mapping with values rounded to 2 decimals."""
        result: dict[str, Any] = {"clips": self.clips}
        if self.scores is not None:
            result |= {
                "Acc": round(self.scores.accuracy, 2),
                "WF1": round(self.scores.wf1, 2),
                "UF1": round(self.scores.uf1, 2),
                "UAR": round(self.scores.uar, 2),
            }
            if self.scores.empty_classes:
                result["empty_classes"] = list(self.scores.empty_classes)
        for key, value in (("EPE", self.epe), ("NME", self.nme), ("failure_rate", self.failure_rate)):
            if value is not None:
                result[key] = round(value, 2)
        return result

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, float):
                value = f"{value:.2f}"
            elif isinstance(value, list):
                value = " ".join(str(v) for v in value)
            lines.append(f"{key}\t{value}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path, stem: str = "metrics") -> tuple[Path, Path]:
        """Write `<stem>.json` and `<stem>.txt` into `out_dir`."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{stem}.json"
        text_path = out_dir / f"{stem}.txt"
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        text_path.write_text(self.to_text(), encoding="utf-8")
        return json_path, text_path
