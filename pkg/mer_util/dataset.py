"""Dataset manifests, clip loading, frame sampling and augmentation."""

from __future__ import annotations

import json
import logging
import os
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from mer_util import constants
from mer_util.constants import Split
from mer_util.errors import ConfigurationError, DatasetError, FormatError
from mer_util.formats import read_flo, read_landmarks_csv, read_pgm
from mer_util.parameters import check_seed

logger = logging.getLogger(__name__)


def data_rng(seed: int, stream: str, index: int) -> np.random.Generator:
    """Counter-based random stream keyed by (seed, stream name, index)."""
    key = (check_seed(seed) << 64) | (zlib.crc32(stream.encode("utf-8")) << 32) | (int(index) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def sample_indices(video_length: int, t: int) -> list[int]:
    """Indices `round(i (L-1) / (t-1))`, halves rounded up; first and last always kept.

    Raises:
        DatasetError: When the video is shorter than t or t < 2.
    """
    if t < 2:
        raise DatasetError(f"t = {t}, at least 2 frames are sampled")
    if video_length < t:
        raise DatasetError(f"video of {video_length} frames is shorter than t = {t}")
    return [int(np.floor(i * (video_length - 1) / (t - 1) + 0.5)) for i in range(t)]


def sample_clip(video: Sequence, t: int) -> list:
    """Uniformly pick t frames of a video."""
    return [video[i] for i in sample_indices(len(video), t)]


# MANIFEST


@dataclass
class ClipRecord:
    """One clip in a manifest; paths are relative to the manifest directory.

    Attributes:
        clip_id (str)
        subject_id (str): LOSO grouping key.
        class_label (int)
        frame_paths (list[str]): t frames.
        landmark_path (str): CSV with one row of 2m coordinates per frame.
        flow_paths (list[str]): t-1 `.flo` files, flow k -> k+1.
    """

    clip_id: str
    subject_id: str
    class_label: int
    frame_paths: list[str]
    landmark_path: str
    flow_paths: list[str]


@dataclass
class DatasetManifest:
    """Attributes:
    version (int)
    n_classes (int)
    t (int)
    m (int)
    clips (list[ClipRecord])
    root (Path): Directory the clip paths are relative to; not serialized.
    """

    version: int
    n_classes: int
    t: int
    m: int
    clips: list[ClipRecord] = field(default_factory=list)
    root: Path = Path(".")

    def validate(self) -> None:
        """Raise `FormatError` when a record contradicts the header."""
        ids = set()
        for clip in self.clips:
            if clip.clip_id in ids:
                raise FormatError(self.root, f"duplicate clip id {clip.clip_id!r}")
            ids.add(clip.clip_id)
            if not clip.subject_id:
                raise FormatError(self.root, f"clip {clip.clip_id!r} has no subject")
            if not 0 <= clip.class_label < self.n_classes:
                raise FormatError(self.root, f"clip {clip.clip_id!r}: label {clip.class_label} outside [0, {self.n_classes})")
            if len(clip.frame_paths) != self.t or len(clip.flow_paths) != self.t - 1:
                raise FormatError(self.root, f"clip {clip.clip_id!r}: path counts do not match t = {self.t}")

    def subjects(self) -> list[str]:
        return sorted({clip.subject_id for clip in self.clips})

    def select(self, subjects: Iterable[str]) -> "DatasetManifest":
        """Manifest restricted to the clips of `subjects`."""
        wanted = set(subjects)
        return replace(self, clips=[c for c in self.clips if c.subject_id in wanted])

    def find(self, clip_id: str) -> ClipRecord:
        for clip in self.clips:
            if clip.clip_id == clip_id:
                return clip
        raise DatasetError(f"no clip {clip_id!r} in the manifest")

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "n_classes": self.n_classes,
            "t": self.t,
            "m": self.m,
            "clips": [vars(clip) for clip in self.clips],
        }

    @classmethod
    def from_dict(cls, values: dict[str, Any], root: Path) -> "DatasetManifest":
        try:
            manifest = cls(
                version=int(values["version"]),
                n_classes=int(values["n_classes"]),
                t=int(values["t"]),
                m=int(values["m"]),
                clips=[ClipRecord(**clip) for clip in values["clips"]],
                root=Path(root),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(root, f"malformed manifest: {e}") from e
        if manifest.version != constants.MANIFEST_VERSION:
            raise FormatError(root, f"unsupported manifest version {manifest.version}")
        manifest.validate()
        return manifest


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path: Path) -> DatasetManifest:
    """Read `manifest.json`; clip paths resolve against its directory.

    Raises:
        FileNotFoundError: When the file does not exist.
        FormatError: On malformed JSON or records.
    """
    path = Path(path)
    try:
        values = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(path, f"invalid JSON: {e}") from e
    return DatasetManifest.from_dict(values, path.parent)


def merge_manifests(manifests: Sequence[DatasetManifest], names: Sequence[str], root: Path) -> DatasetManifest:
    """Union of several datasets for composite evaluation.

    Subject and clip ids get the prefix `<name>/` and paths are rewritten
    relative to `root`.

    Raises:
        DatasetError: When the datasets disagree on classes, t or m.
    """
    if not manifests:
        raise DatasetError("nothing to merge")
    if len(names) != len(manifests) or len(set(names)) != len(names):
        raise DatasetError(f"need one distinct name per manifest, received {list(names)}")
    first = manifests[0]
    for other in manifests[1:]:
        if (other.n_classes, other.t, other.m) != (first.n_classes, first.t, first.m):
            raise DatasetError("manifests differ in class count, clip length or landmark count")

    root = Path(root)

    def rebase(manifest: DatasetManifest, rel: str) -> str:
        return Path(os.path.relpath(Path(manifest.root) / rel, root)).as_posix()

    clips = []
    for manifest, name in zip(manifests, names):
        for clip in manifest.clips:
            clips.append(
                ClipRecord(
                    clip_id=f"{name}/{clip.clip_id}",
                    subject_id=f"{name}/{clip.subject_id}",
                    class_label=clip.class_label,
                    frame_paths=[rebase(manifest, p) for p in clip.frame_paths],
                    landmark_path=rebase(manifest, clip.landmark_path),
                    flow_paths=[rebase(manifest, p) for p in clip.flow_paths],
                )
            )

    return DatasetManifest(constants.MANIFEST_VERSION, first.n_classes, first.t, first.m, clips, root)


# CLIPS


@dataclass
class Clip:
    """Loaded clip.

    Attributes:
        clip_id (str)
        subject_id (str)
        label (int)
        frames (np.ndarray): t x H x W gray levels in [0, 1].
        landmarks (np.ndarray): t x 2m pixel coordinates.
        flows (np.ndarray): (t-1) x 2 x H x W, flow k -> k+1.
    """

    clip_id: str
    subject_id: str
    label: int
    frames: np.ndarray
    landmarks: np.ndarray
    flows: np.ndarray

    @property
    def size(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def load_clip(record: ClipRecord, root: Path) -> Clip:
    """Read the files of one clip.

    Raises:
        FormatError: When the files disagree with each other.
    """
    root = Path(root)
    frames = np.stack([read_pgm(root / p) for p in record.frame_paths]).astype(np.float64) / 255.0
    landmarks = read_landmarks_csv(root / record.landmark_path)
    flows = np.stack([read_flo(root / p) for p in record.flow_paths])

    if landmarks.shape[0] != len(frames):
        raise FormatError(root / record.landmark_path, f"{landmarks.shape[0]} rows for {len(frames)} frames")
    if flows.shape[2:] != frames.shape[1:]:
        raise FormatError(root / record.flow_paths[0], "flow size differs from the frame size")

    return Clip(record.clip_id, record.subject_id, record.class_label, frames, landmarks, flows)


def load_clips(manifest: DatasetManifest) -> list[Clip]:
    return [load_clip(record, manifest.root) for record in manifest.clips]


def crop_clip(clip: Clip, top: int, left: int, size: int) -> Clip:
    """Crop every frame and flow at one offset; landmarks follow."""
    height, width = clip.size
    if size > height or size > width:
        raise DatasetError(f"frame of {height} x {width} is smaller than the crop {size}")
    if not (0 <= top <= height - size and 0 <= left <= width - size):
        raise DatasetError(f"crop offset ({top}, {left}) outside the frame")

    rows, cols = slice(top, top + size), slice(left, left + size)
    offset = np.tile([left, top], clip.landmarks.shape[1] // 2)
    return replace(
        clip,
        frames=clip.frames[:, rows, cols].copy(),
        landmarks=clip.landmarks - offset,
        flows=clip.flows[:, :, rows, cols].copy(),
    )


def center_offset(height: int, width: int, size: int) -> tuple[int, int]:
    """Top-left corner of a centred `size` x `size` window.

    Raises:
        DatasetError: When the frame is smaller than the window.
    """
    if size > height or size > width:
        raise DatasetError(f"frame of {height} x {width} is smaller than the crop {size}")
    return (height - size) // 2, (width - size) // 2


def center_crop(clip: Clip, size: int) -> Clip:
    return crop_clip(clip, *center_offset(*clip.size, size), size)


def center_crop_frames(frames: np.ndarray, size: int) -> np.ndarray:
    """Centre crop of bare frames (... x H x W), as `center_crop` does for clips."""
    top, left = center_offset(*frames.shape[-2:], size)
    return frames[..., top : top + size, left : left + size]


def flip_clip(clip: Clip) -> Clip:
    """Mirror horizontally: frames flip, u changes sign, landmarks swap sides.

    Raises:
        ConfigurationError: When the landmark layout has no mirror table.
    """
    m = clip.landmarks.shape[1] // 2
    if m != len(constants.MIRROR_68):
        raise ConfigurationError(f"no left/right table for {m} landmarks")
    width = clip.size[1]

    points = clip.landmarks.reshape(len(clip.landmarks), m, 2).copy()
    points[..., 0] = (width - 1) - points[..., 0]
    points = points[:, list(constants.MIRROR_68)]

    flows = clip.flows[..., ::-1].copy()
    flows[:, 0] = -flows[:, 0]

    return replace(
        clip,
        frames=clip.frames[..., ::-1].copy(),
        landmarks=points.reshape(len(points), 2 * m),
        flows=flows,
    )


def augment(
    clip: Clip,
    split: Split,
    rng: Optional[np.random.Generator],
    size: int = constants.FRAME_SIZE,
    flip_probability: float = constants.FLIP_PROBABILITY,
) -> Clip:
    """Crop (and for training, maybe flip) a clip with one decision for all frames.

    Args:
        clip (Clip)
        split (Split): `train` draws a random crop and flips with \
            `flip_probability`; `test` takes the centre crop.
        rng (np.random.Generator, optional): Required for `train`.
        size (int): Crop side. Defaults to 128.
        flip_probability (float): Defaults to 0.5.

    Raises:
        DatasetError: When the frames are smaller than the crop.
    """
    height, width = clip.size
    if size > height or size > width:
        raise DatasetError(f"frame of {height} x {width} is smaller than the crop {size}")
    if split is Split.test:
        return center_crop(clip, size)

    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    result = crop_clip(clip, top, left, size)
    if rng.random() < flip_probability:
        result = flip_clip(result)
    return result
