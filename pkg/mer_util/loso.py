"""Leave-one-subject-out cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from mer_util.config import RunConfig
from mer_util.dataset import Clip, DatasetManifest, load_clips
from mer_util.errors import DatasetError
from mer_util.metrics import EvaluationTotals, MetricReport
from mer_util.training import evaluate, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fold:
    held_out: str
    train_subjects: tuple[str, ...]


@dataclass(frozen=True)
class LosoPlan:
    """Folds in sorted subject order; every subject is held out exactly once."""

    folds: tuple[Fold, ...]


def loso_split(manifest: DatasetManifest) -> LosoPlan:
    """One fold per subject.

    Raises:
        DatasetError: With fewer than two subjects.
    """
    subjects = manifest.subjects()
    if len(subjects) < 2:
        raise DatasetError(f"leave-one-subject-out needs at least 2 subjects, found {len(subjects)}")
    return LosoPlan(
        tuple(Fold(s, tuple(other for other in subjects if other != s)) for s in subjects)
    )


@dataclass
class LosoResult:
    """Per-fold totals and the totals pooled over all folds."""

    folds: list[tuple[Fold, EvaluationTotals]] = field(default_factory=list)
    pooled: EvaluationTotals = field(default_factory=EvaluationTotals)

    def report(self) -> MetricReport:
        return self.pooled.report()


def _fold_dir(out_dir: Path, subject: str) -> Path:
    return Path(out_dir) / f"fold_{subject.replace('/', '_')}"


def run_loso(manifest: DatasetManifest, config: RunConfig, out_dir: Optional[Path] = None) -> LosoResult:
    """Train a fresh model per fold and pool the held-out results.

    Confusion counts and error sums are pooled over folds before scores are
    computed.
    """
    plan = loso_split(manifest)
    model_config = config.model_config(manifest.n_classes, manifest.t, manifest.m)

    by_subject: dict[str, list[Clip]] = {}
    for clip in load_clips(manifest):
        by_subject.setdefault(clip.subject_id, []).append(clip)

    result = LosoResult()
    for i, fold in enumerate(plan.folds, start=1):
        logger.info("fold %d/%d: holding out %s", i, len(plan.folds), fold.held_out)
        fold_out = _fold_dir(out_dir, fold.held_out) if out_dir is not None else None

        training_clips = [clip for s in fold.train_subjects for clip in by_subject[s]]
        trained = train(training_clips, config, model_config, fold_out)
        totals = evaluate(by_subject[fold.held_out], trained.params, model_config, config.workers)

        if fold_out is not None:
            totals.report().write(fold_out)
        result.folds.append((fold, totals))
        result.pooled = result.pooled.merge(totals)

    if out_dir is not None:
        result.report().write(Path(out_dir))
    return result
