import json

import numpy as np
import pytest

from mer_util import constants
from mer_util.constants import Split
from mer_util.dataset import (
    Clip,
    ClipRecord,
    DatasetManifest,
    augment,
    center_crop,
    center_crop_frames,
    crop_clip,
    data_rng,
    flip_clip,
    load_clip,
    merge_manifests,
    read_manifest,
    sample_clip,
    sample_indices,
    write_manifest,
)
from mer_util.errors import ConfigurationError, DatasetError, FormatError
from mer_util.parameters import component_rng
from mer_util.synthetic import template_68


def make_clip(size=6, t=3):
    rng = np.random.default_rng(0)
    points = (template_68() * (size - 1)).reshape(-1)
    return Clip(
        "c0",
        "s0",
        1,
        rng.uniform(size=(t, size, size)),
        np.tile(points, (t, 1)),
        rng.standard_normal((t - 1, 2, size, size)),
    )


def test_sample_indices_examples():
    assert sample_indices(15, 8) == [0, 2, 4, 6, 8, 10, 12, 14]
    assert sample_indices(9, 8) == [0, 1, 2, 3, 5, 6, 7, 8]
    assert sample_indices(8, 8) == list(range(8))


def test_sample_clip_keeps_first_and_last():
    video = list("abcdefghijk")
    picked = sample_clip(video, 4)
    assert picked[0] == "a" and picked[-1] == "k"


@pytest.mark.parametrize("length, t", [(7, 8), (5, 1)])
def test_sample_indices_rejects_short_videos(length, t):
    with pytest.raises(DatasetError):
        sample_indices(length, t)


def test_center_crop_offset():
    clip = make_clip(size=144, t=2)
    cropped = center_crop(clip, 128)
    assert cropped.size == (128, 128)
    assert np.array_equal(cropped.frames, clip.frames[:, 8:136, 8:136])
    assert np.allclose(cropped.landmarks[:, :2], clip.landmarks[:, :2] - 8)


def test_crop_rejects_bad_offsets():
    clip = make_clip()
    with pytest.raises(DatasetError):
        crop_clip(clip, 3, 0, 4)
    with pytest.raises(DatasetError):
        center_crop(clip, 7)


def test_flip_mirrors_frames_flows_and_landmarks():
    clip = make_clip()
    flipped = flip_clip(clip)
    assert np.array_equal(flipped.frames, clip.frames[..., ::-1])
    assert np.array_equal(flipped.flows[:, 0], -clip.flows[:, 0, :, ::-1])
    assert np.array_equal(flipped.flows[:, 1], clip.flows[:, 1, :, ::-1])

    # the template is symmetric, so mirroring maps it onto itself
    assert np.allclose(flipped.landmarks, clip.landmarks)
    assert np.allclose(flip_clip(flipped).landmarks, clip.landmarks)


def test_flip_swaps_eye_landmarks():
    clip = make_clip()
    points = clip.landmarks.reshape(len(clip.landmarks), -1, 2)
    flipped = flip_clip(clip).landmarks.reshape(points.shape)
    assert np.allclose(flipped[:, 36, 0], 5 - points[:, 45, 0])


def test_augment_test_split_is_center_crop():
    clip = make_clip(size=6)
    assert np.array_equal(augment(clip, Split.test, None, 4).frames, clip.frames[:, 1:5, 1:5])


def test_augment_train_uses_one_decision_per_clip():
    clip = make_clip(size=6)
    augmented = augment(clip, Split.train, np.random.default_rng(3), 4, flip_probability=0.0)
    matches = [
        (top, left)
        for top in range(3)
        for left in range(3)
        if np.array_equal(augmented.frames, clip.frames[:, top : top + 4, left : left + 4])
    ]
    assert len(matches) == 1


def test_augment_rejects_small_frames():
    with pytest.raises(DatasetError):
        augment(make_clip(size=6), Split.test, None, 8)


def test_manifest_round_trip(tiny_manifest, tmp_path):
    write_manifest(tiny_manifest, tmp_path / "manifest.json")
    again = read_manifest(tmp_path / "manifest.json")
    assert again.to_dict() == tiny_manifest.to_dict()
    assert again.root == tmp_path


def test_manifest_select_and_find(tiny_manifest):
    subset = tiny_manifest.select(["subject_01"])
    assert subset.subjects() == ["subject_01"]
    assert len(subset.clips) == 2
    assert tiny_manifest.find(subset.clips[0].clip_id) == subset.clips[0]
    with pytest.raises(DatasetError):
        tiny_manifest.find("nope")


def test_manifest_rejects_inconsistent_records(tmp_path):
    record = dict(
        clip_id="a", subject_id="s", class_label=3, frame_paths=["f0", "f1"], landmark_path="l", flow_paths=["o"]
    )
    values = dict(version=constants.MANIFEST_VERSION, n_classes=3, t=2, m=68, clips=[record])
    (tmp_path / "manifest.json").write_text(json.dumps(values), encoding="utf-8")
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "manifest.json")

    (tmp_path / "manifest.json").write_text("{", encoding="utf-8")
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "manifest.json")


def test_load_clip_shapes(tiny_manifest):
    clip = load_clip(tiny_manifest.clips[0], tiny_manifest.root)
    assert clip.frames.shape == (3, 16, 16)
    assert clip.landmarks.shape == (3, 136)
    assert clip.flows.shape == (2, 2, 16, 16)
    assert 0.0 <= clip.frames.min() and clip.frames.max() <= 1.0


def test_merge_prefixes_ids_and_rebases_paths(tiny_manifest, tmp_path):
    merged = merge_manifests([tiny_manifest, tiny_manifest], ["a", "b"], tmp_path)
    assert len(merged.clips) == 8
    assert merged.subjects()[0] == "a/subject_00"

    write_manifest(merged, tmp_path / "manifest.json")
    reread = read_manifest(tmp_path / "manifest.json")
    original = load_clip(tiny_manifest.clips[0], tiny_manifest.root)
    rebased = load_clip(reread.find(f"b/{tiny_manifest.clips[0].clip_id}"), reread.root)
    assert np.array_equal(original.frames, rebased.frames)


def test_merge_rejects_mismatched_datasets(tiny_manifest, tmp_path):
    other = DatasetManifest(constants.MANIFEST_VERSION, 5, tiny_manifest.t, tiny_manifest.m, [], tmp_path)
    with pytest.raises(DatasetError):
        merge_manifests([tiny_manifest, other], ["a", "b"], tmp_path)
    with pytest.raises(DatasetError):
        merge_manifests([tiny_manifest, tiny_manifest], ["a", "a"], tmp_path)


def test_clip_record_fields_serialize_by_name(tiny_manifest):
    assert set(tiny_manifest.to_dict()["clips"][0]) == {f for f in ClipRecord.__dataclass_fields__}


@pytest.mark.parametrize("seed", [-1, constants.MAX_SEED + 1])
def test_random_streams_reject_out_of_range_seeds(seed):
    with pytest.raises(ConfigurationError):
        data_rng(seed, "shuffle", 0)
    with pytest.raises(ConfigurationError):
        component_rng(seed, "backbone")


def test_random_streams_accept_the_largest_seed():
    assert data_rng(constants.MAX_SEED, "shuffle", 0).random() == data_rng(constants.MAX_SEED, "shuffle", 0).random()
    component_rng(constants.MAX_SEED, "backbone").random()


def test_center_crop_frames_matches_clip_crop():
    clip = make_clip(size=7)
    assert np.array_equal(center_crop_frames(clip.frames, 4), center_crop(clip, 4).frames)
    with pytest.raises(DatasetError):
        center_crop_frames(clip.frames, 8)
