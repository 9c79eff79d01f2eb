"""Synthetic micro-expression clips with exact ground truth.

A subject is a schematic face drawn analytically: a smooth face oval, dark
strokes along the polylines of a symmetric 68-point layout and two irises.
Frame k shows the reference face through a displacement field `E_k`:
`I_k(p) = R(p + E_k(p))`. Class motions are sums of Gaussian bumps placed on
facial features and scaled by an onset-apex-offset intensity profile, so
every quantity has a closed form:

* landmarks of frame k solve `y = x0 - E_k(y)`;
* the flow from frame k to k+1 solves `O(p) = E_k(p) - E_{k+1}(p + O(p))`,
  which makes bilinear warping of frame k+1 by O reproduce frame k.

Both are fixed points of contractions (bump gradients stay well below 1) and
are solved by iteration.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from mer_util import constants
from mer_util.dataset import (
    ClipRecord,
    DatasetManifest,
    data_rng,
    sample_indices,
    write_manifest,
)
from mer_util.errors import ConfigurationError, DatasetError
from mer_util.formats import to_uint8, write_flo, write_landmarks_csv, write_pgm
from mer_util.parameters import check_seed

logger = logging.getLogger(__name__)

FIXED_POINT_ITERATIONS: int = 60
FIXED_POINT_TOLERANCE: float = 1e-6
SUPPORTED_CLASS_COUNTS: tuple[int, ...] = (3, 5)


# FACE LAYOUT


def template_68() -> np.ndarray:
    """68 x 2 landmark layout in unit coordinates, mirror-symmetric about x = 0.5.

    Indices follow the usual 68-point convention; index 0 is on the image left.
    """
    points = np.full((68, 2), np.nan)

    # jaw: lower half ellipse from the image left, through the chin, to the right
    for i in range(17):
        phi = math.pi - i * math.pi / 16
        points[i] = (0.5 + 0.36 * math.cos(phi), 0.45 + 0.37 * math.sin(phi))

    # right brow, image left
    for j in range(5):
        s = j / 4
        points[17 + j] = (0.20 + 0.24 * s, 0.29 - 0.03 * math.sin(math.pi * s))

    # nose bridge and nostrils
    for j in range(4):
        points[27 + j] = (0.5, 0.40 + 0.05 * j)
    points[31] = (0.42, 0.60)
    points[32] = (0.46, 0.61)
    points[33] = (0.50, 0.62)

    # right eye: outer corner, upper lid, inner corner, lower lid
    ex, ey, w, h = 0.33, 0.38, 0.07, 0.03
    points[36] = (ex - w, ey)
    points[37] = (ex - w / 3, ey - h)
    points[38] = (ex + w / 3, ey - h)
    points[39] = (ex + w, ey)
    points[40] = (ex + w / 3, ey + h)
    points[41] = (ex - w / 3, ey + h)

    # lips
    my = 0.72
    points[48] = (0.37, my)
    points[49] = (0.42, my - 0.03)
    points[50] = (0.47, my - 0.04)
    points[51] = (0.50, my - 0.035)
    points[57] = (0.50, my + 0.045)
    points[58] = (0.47, my + 0.045)
    points[59] = (0.42, my + 0.035)
    points[60] = (0.41, my)
    points[61] = (0.47, my - 0.012)
    points[62] = (0.50, my - 0.012)
    points[66] = (0.50, my + 0.012)
    points[67] = (0.47, my + 0.012)

    for i, partner in enumerate(constants.MIRROR_68):
        if np.isnan(points[i, 0]):
            points[i] = (1.0 - points[partner, 0], points[partner, 1])

    return points


# (first index, last index, closed)
STROKES: tuple[tuple[int, int, bool], ...] = (
    (0, 16, False),
    (17, 21, False),
    (22, 26, False),
    (27, 30, False),
    (31, 35, False),
    (36, 41, True),
    (42, 47, True),
    (48, 59, True),
    (60, 67, True),
)


def stroke_segments(landmarks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start and end points (S x 2 each) of every stroke segment."""
    starts, ends = [], []
    for first, last, closed in STROKES:
        indices = list(range(first, last + 1))
        if closed:
            indices.append(first)
        for a, b in zip(indices[:-1], indices[1:]):
            starts.append(landmarks[a])
            ends.append(landmarks[b])
    return np.array(starts), np.array(ends)


@dataclass(frozen=True)
class FaceAppearance:
    """Per-subject drawing parameters, in pixels and gray levels in [0, 1].

    Attributes:
        centre (tuple[float, float]): Face centre (x, y).
        scale (float): Pixels per unit of the template.
        background (float)
        skin (float)
        stroke (float): Darkening on a stroke.
        iris (float): Additional darkening at the eye centres.
        stroke_width (float): Gaussian width of the strokes.
    """

    centre: tuple[float, float]
    scale: float
    background: float
    skin: float
    stroke: float
    iris: float
    stroke_width: float

    def landmarks(self) -> np.ndarray:
        """Reference landmark positions, 68 x 2 pixels (x, y)."""
        return np.asarray(self.centre) + (template_68() - 0.5) * self.scale


def subject_appearance(seed: int, subject_index: int, size: int) -> FaceAppearance:
    rng = data_rng(seed, "subject", subject_index)
    unit = size / constants.SOURCE_FRAME_SIZE
    centre = (size - 1) / 2 + rng.uniform(-2.0, 2.0, size=2) * unit
    return FaceAppearance(
        centre=(float(centre[0]), float(centre[1])),
        scale=float(size * rng.uniform(0.85, 0.95)),
        background=float(rng.uniform(0.15, 0.30)),
        skin=float(rng.uniform(0.60, 0.80)),
        stroke=float(rng.uniform(0.30, 0.40)),
        iris=float(rng.uniform(0.15, 0.25)),
        stroke_width=max(1.0, 1.3 * unit),
    )


def _segment_distance(px: np.ndarray, py: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Distance of every point to the nearest segment."""
    points = np.stack([px.reshape(-1), py.reshape(-1)], axis=1)[:, None, :]  # N, 1, 2
    direction = ends - starts  # S, 2
    length2 = np.maximum((direction**2).sum(axis=1), 1e-12)
    along = np.clip(((points - starts) * direction).sum(axis=2) / length2, 0.0, 1.0)  # N, S
    nearest = starts + along[..., None] * direction
    return np.sqrt(((points - nearest) ** 2).sum(axis=2)).min(axis=1).reshape(px.shape)


def render_reference(face: FaceAppearance, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
    """Evaluate the reference face R at arbitrary points (float gray levels)."""
    cx, cy = face.centre
    rx, ry = 0.40 * face.scale, 0.45 * face.scale
    radius = np.sqrt(((qx - cx) / rx) ** 2 + ((qy - cy) / ry) ** 2)
    signed = (radius - 1.0) * min(rx, ry)
    oval = 0.5 * (1.0 - np.tanh(signed / (2.0 * face.stroke_width)))

    landmarks = face.landmarks()
    distance = _segment_distance(qx, qy, *stroke_segments(landmarks))
    strokes = np.exp(-(distance**2) / (2.0 * face.stroke_width**2))

    iris_sigma = 0.02 * face.scale
    irises = np.zeros_like(qx)
    for eye in (constants.RIGHT_EYE, constants.LEFT_EYE):
        ex, ey = landmarks[list(eye)].mean(axis=0)
        irises += np.exp(-((qx - ex) ** 2 + (qy - ey) ** 2) / (2.0 * iris_sigma**2))

    image = face.background + (face.skin - face.background) * oval - face.stroke * strokes - face.iris * irises
    return np.clip(image, 0.0, 1.0)


# DISPLACEMENT FIELDS


class DisplacementField(Protocol):
    def __call__(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class TranslationField:
    """Rigid shift: the face content moves by (dx, dy)."""

    dx: float = 0.0
    dy: float = 0.0

    def __call__(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        return np.full_like(x, -self.dx), np.full_like(x, -self.dy)


@dataclass(frozen=True)
class BumpField:
    """`E(p) = -alpha sum_g delta_g exp(-|p - c_g|^2 / (2 sigma_g^2))`.

    Content near the centre c_g moves by about alpha * delta_g.
    """

    centres: np.ndarray
    deltas: np.ndarray
    sigmas: np.ndarray
    alpha: float

    def __call__(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        ex = np.zeros_like(x)
        ey = np.zeros_like(y)
        for (cx, cy), (dx, dy), sigma in zip(self.centres, self.deltas, self.sigmas):
            weight = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma**2))
            ex -= self.alpha * dx * weight
            ey -= self.alpha * dy * weight
        return ex, ey


def _norm(dx: float, dy: float) -> tuple[float, float]:
    length = math.hypot(dx, dy)
    return dx / length, dy / length


def class_field(label: int, face: FaceAppearance, alpha: float) -> BumpField:
    """Bump field of one deformation class at intensity `alpha` (pixels).

    Raises:
        ConfigurationError: For an unknown class label.
    """
    lm = face.landmarks()

    def mid(*indices: int) -> np.ndarray:
        return lm[list(indices)].mean(axis=0)

    wide, narrow = 0.05 * face.scale, 0.035 * face.scale
    if label == 0:  # mouth corners up and outwards
        bumps = [(lm[48], _norm(-0.6, -0.8), wide), (lm[54], _norm(0.6, -0.8), wide)]
    elif label == 1:  # lids close in
        bumps = [
            (mid(37, 38), (0.0, 0.7), narrow),
            (mid(40, 41), (0.0, -0.4), narrow),
            (mid(43, 44), (0.0, 0.7), narrow),
            (mid(46, 47), (0.0, -0.4), narrow),
        ]
    elif label == 2:  # brows up
        bumps = [(lm[19], (0.0, -1.0), wide), (lm[24], (0.0, -1.0), wide)]
    elif label == 3:  # lower lip down
        bumps = [(lm[57], (0.0, 1.0), wide)]
    elif label == 4:  # inner brows down and together
        bumps = [(lm[21], _norm(0.45, 0.9), wide), (lm[22], _norm(-0.45, 0.9), wide)]
    else:
        raise ConfigurationError(f"no deformation defined for class {label}")

    return BumpField(
        np.array([c for c, _, _ in bumps]),
        np.array([d for _, d, _ in bumps]),
        np.array([s for _, _, s in bumps]),
        float(alpha),
    )


def intensity_profile(amplitude: float, video_length: int) -> np.ndarray:
    """Onset-apex-offset intensity `amplitude * sin(pi j / (L - 1))`."""
    j = np.arange(video_length)
    return amplitude * np.sin(np.pi * j / max(video_length - 1, 1))


# GROUND TRUTH


def _pixel_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.indices((size, size), dtype=np.float64)
    return cols, rows


def render_frame(face: FaceAppearance, field: DisplacementField, size: int) -> np.ndarray:
    """`I(p) = R(p + E(p))` on a size x size grid, float gray levels."""
    x, y = _pixel_grid(size)
    ex, ey = field(x, y)
    return render_reference(face, x + ex, y + ey)


def project_landmarks(reference: np.ndarray, field: DisplacementField) -> np.ndarray:
    """Positions y with `y + E(y) = x0` for reference points x0 (N x 2).

    Raises:
        DatasetError: When the iteration does not converge.
    """
    y = np.array(reference, dtype=np.float64)
    for _ in range(FIXED_POINT_ITERATIONS):
        ex, ey = field(y[:, 0], y[:, 1])
        y = reference - np.stack([ex, ey], axis=1)

    ex, ey = field(y[:, 0], y[:, 1])
    residual = np.abs(y + np.stack([ex, ey], axis=1) - reference).max()
    if residual > FIXED_POINT_TOLERANCE:
        raise DatasetError(f"landmark projection did not converge, residual {residual:.3g}")
    return y


def ground_truth_flow(field_k: DisplacementField, field_next: DisplacementField, size: int) -> np.ndarray:
    """Flow from frame k to frame k+1, 2 x size x size.

    Raises:
        DatasetError: When the iteration does not converge.
    """
    x, y = _pixel_grid(size)
    ekx, eky = field_k(x, y)
    u, v = np.zeros_like(x), np.zeros_like(y)
    for _ in range(FIXED_POINT_ITERATIONS):
        enx, eny = field_next(x + u, y + v)
        u, v = ekx - enx, eky - eny

    enx, eny = field_next(x + u, y + v)
    residual = max(np.abs(u - (ekx - enx)).max(), np.abs(v - (eky - eny)).max())
    if residual > FIXED_POINT_TOLERANCE:
        raise DatasetError(f"flow did not converge, residual {residual:.3g}")
    return np.stack([u, v])


@dataclass
class SyntheticClip:
    """Rendered clip before it is written.

    Attributes:
        frames (np.ndarray): t x S x S uint8.
        landmarks (np.ndarray): t x 136 pixel coordinates.
        flows (np.ndarray): (t-1) x 2 x S x S.
        label (int)
    """

    frames: np.ndarray
    landmarks: np.ndarray
    flows: np.ndarray
    label: int


def synthesize_clip(
    face: FaceAppearance,
    fields: Sequence[DisplacementField],
    size: int,
    label: int,
) -> SyntheticClip:
    """Render frames, landmarks and flows for a sequence of displacement fields."""
    reference = face.landmarks()
    frames = np.stack([to_uint8(render_frame(face, f, size)) for f in fields])
    landmarks = np.stack([project_landmarks(reference, f).reshape(-1) for f in fields])
    flows = np.stack([ground_truth_flow(a, b, size) for a, b in zip(fields[:-1], fields[1:])])
    return SyntheticClip(frames, landmarks, flows, label)


def clip_fields(
    label: int,
    face: FaceAppearance,
    amplitude: float,
    video_length: int,
    t: int,
) -> list[BumpField]:
    """Displacement fields of the t frames sampled from a video of `video_length`."""
    profile = intensity_profile(amplitude, video_length)
    return [class_field(label, face, profile[j]) for j in sample_indices(video_length, t)]


# DATASET


def _write_clip(clip: SyntheticClip, clip_dir: Path, root: Path) -> tuple[list[str], str, list[str]]:
    frame_paths, flow_paths = [], []
    for i, frame in enumerate(clip.frames):
        path = clip_dir / f"frame_{i:03d}.pgm"
        write_pgm(path, frame)
        frame_paths.append(path.relative_to(root).as_posix())
    for i, flow in enumerate(clip.flows):
        path = clip_dir / f"flow_{i:03d}.flo"
        write_flo(path, flow)
        flow_paths.append(path.relative_to(root).as_posix())
    landmark_path = clip_dir / "landmarks.csv"
    write_landmarks_csv(landmark_path, clip.landmarks)
    return frame_paths, landmark_path.relative_to(root).as_posix(), flow_paths


def generate_synthetic(
    out_dir: Path,
    seed: int,
    n_subjects: int,
    clips_per_subject: int,
    n_classes: int,
    *,
    t: int = constants.T_FRAMES,
    frame_size: int = constants.SOURCE_FRAME_SIZE,
    video_length: int = constants.VIDEO_LENGTH,
    workers: int = 1,
    amplitude: Optional[tuple[float, float]] = None,
) -> DatasetManifest:
    """Generate a dataset under `out_dir` and write its `manifest.json`.

    Layout: `<out_dir>/<subject>/<clip>/frame_###.pgm`, `landmarks.csv`,
    `flow_###.flo`. Labels cycle through the classes with a per-subject shift.
    Random streams are keyed by (seed, subject) and (seed, clip index), so
    the result does not depend on `workers`.

    Args:
        out_dir (Path): Dataset root.
        seed (int)
        n_subjects (int)
        clips_per_subject (int)
        n_classes (int): 3 or 5.
        t (int): Frames sampled per clip. Defaults to 8.
        frame_size (int): Side of the written frames. Defaults to 144.
        video_length (int): Frames of the underlying video. Defaults to 15.
        workers (int): Threads rendering clips. Defaults to 1.
        amplitude (tuple[float, float], optional): Range of the apex \
            displacement in pixels at 144 px; defaults to (1.5, 2.5).

    Raises:
        ConfigurationError: For an unsupported class count, an empty dataset \
            or a seed outside [0, MAX_SEED].
        DatasetError: When `video_length` < `t`.

    Returns:
        DatasetManifest
    """
    if n_classes not in SUPPORTED_CLASS_COUNTS:
        raise ConfigurationError(f"n_classes = {n_classes}, expected one of {SUPPORTED_CLASS_COUNTS}")
    if n_subjects < 1 or clips_per_subject < 1:
        raise ConfigurationError("at least one subject with one clip is required")
    seed = check_seed(seed)
    sample_indices(video_length, t)

    low, high = amplitude if amplitude is not None else (1.5, 2.5)
    unit = frame_size / constants.SOURCE_FRAME_SIZE
    out_dir = Path(out_dir)

    jobs = []
    for s in range(n_subjects):
        subject_id = f"subject_{s:02d}"
        face = subject_appearance(seed, s, frame_size)
        for c in range(clips_per_subject):
            jobs.append((s * clips_per_subject + c, subject_id, f"s{s:02d}_clip_{c:02d}", (c + s) % n_classes, face))

    def build(job) -> ClipRecord:
        index, subject_id, clip_id, label, face = job
        rng = data_rng(seed, "clip", index)
        apex = rng.uniform(low, high) * unit
        clip = synthesize_clip(face, clip_fields(label, face, apex, video_length, t), frame_size, label)
        frames, landmarks, flows = _write_clip(clip, out_dir / subject_id / clip_id, out_dir)
        logger.debug("wrote %s (class %d, apex %.2f px)", clip_id, label, apex)
        return ClipRecord(clip_id, subject_id, label, frames, landmarks, flows)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(build, jobs))

    manifest = DatasetManifest(
        version=constants.MANIFEST_VERSION,
        n_classes=n_classes,
        t=t,
        m=constants.N_LANDMARKS,
        clips=records,
        root=out_dir,
    )
    write_manifest(manifest, out_dir / "manifest.json")
    logger.info("generated %d clips of %d subjects in %s", len(records), n_subjects, out_dir)
    return manifest
