import dataclasses
import json

import pytest

from mer_util.dataset import DatasetManifest
from mer_util.errors import DatasetError
from mer_util.loso import loso_split, run_loso


def test_split_holds_out_each_subject_once(tiny_manifest):
    plan = loso_split(tiny_manifest)
    assert [fold.held_out for fold in plan.folds] == ["subject_00", "subject_01"]
    for fold in plan.folds:
        assert fold.held_out not in fold.train_subjects
        assert len(fold.train_subjects) == 1


def test_split_needs_two_subjects(tiny_manifest):
    single = tiny_manifest.select(["subject_00"])
    with pytest.raises(DatasetError):
        loso_split(single)
    empty = DatasetManifest(tiny_manifest.version, 3, 3, 68, [], tiny_manifest.root)
    with pytest.raises(DatasetError):
        loso_split(empty)


def test_run_pools_folds(tiny_manifest, tiny_run_config, tmp_path):
    result = run_loso(tiny_manifest, dataclasses.replace(tiny_run_config, epochs=1), tmp_path)

    assert len(result.folds) == 2
    assert sum(totals.counts.total for _, totals in result.folds) == 4
    assert result.pooled.counts.total == 4
    assert result.pooled.flow.clips == 4

    for subject in ("subject_00", "subject_01"):
        assert (tmp_path / f"fold_{subject}" / "metrics.json").is_file()
        assert (tmp_path / f"fold_{subject}" / "checkpoint.merc").is_file()

    pooled = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
    assert pooled["clips"] == 4
    assert pooled == result.report().to_dict()
