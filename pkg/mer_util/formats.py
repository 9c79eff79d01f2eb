"""Readers and writers for every file the pipeline produces.

* `.flo`: float32 magic 202021.25, int32 width, int32 height, then row-major
  interleaved (u, v) float32, all little-endian.
* PGM (P5) / PPM (P6): binary 8-bit images.
* landmark CSV: header `x0,y0,...`, one row per frame, `%.17g` values.
* checkpoint: tag, version, parameter count, a length-prefixed JSON model
  configuration, then one record per parameter (name, rank, dims, float64
  payload). Written through a temporary file and renamed into place.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

import numpy as np

from mer_util import constants
from mer_util.errors import FormatError, NumericalError

PathLike = Union[str, os.PathLike]

_F4 = np.dtype("<f4")
_I4 = np.dtype("<i4")
_U4 = np.dtype("<u4")
_F8 = np.dtype("<f8")


def _atomic_write(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except IsADirectoryError as e:
        raise FormatError(path, "is a directory") from e


# OPTICAL FLOW


def write_flo(path: PathLike, flow: np.ndarray) -> None:
    """Write a 2 x H x W field (u, v) as a `.flo` file.

    Raises:
        NumericalError: When the field holds NaN or Inf.
    """
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise FormatError(path, f"expected a 2 x H x W field, received {flow.shape}")
    if not np.isfinite(flow).all():
        raise NumericalError("write_flo")

    _, height, width = flow.shape
    header = np.array([constants.FLO_MAGIC], _F4).tobytes() + np.array([width, height], _I4).tobytes()
    payload = np.ascontiguousarray(flow.transpose(1, 2, 0), dtype=_F4).tobytes()
    _atomic_write(path, header + payload)


def read_flo(path: PathLike) -> np.ndarray:
    """Read a `.flo` file into a float64 2 x H x W array.

    Raises:
        FormatError: On a wrong magic number or truncated payload.
    """
    raw = _read_bytes(path)
    if len(raw) < 12:
        raise FormatError(path, "truncated header")
    if np.frombuffer(raw, _F4, count=1)[0] != np.float32(constants.FLO_MAGIC):
        raise FormatError(path, "bad magic number")

    width, height = (int(v) for v in np.frombuffer(raw, _I4, count=2, offset=4))
    if width < 1 or height < 1:
        raise FormatError(path, f"invalid size {width} x {height}")
    expected = 12 + 8 * width * height
    if len(raw) != expected:
        raise FormatError(path, f"expected {expected} bytes, found {len(raw)}")

    data = np.frombuffer(raw, _F4, count=2 * width * height, offset=12)
    return data.reshape(height, width, 2).transpose(2, 0, 1).astype(np.float64)


# IMAGES


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to 8-bit gray levels, rounding half up."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _netpbm_header(raw: bytes, path: PathLike, magic: bytes) -> tuple[int, int, int]:
    """Return (width, height, payload offset) of a binary netpbm file."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(path, "truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace before the raster

    if tokens[0] != magic:
        raise FormatError(path, f"expected {magic.decode()} image, found {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise FormatError(path, "non-numeric header field") from e
    if maxval != 255:
        raise FormatError(path, f"only 8-bit images are supported, maxval {maxval}")
    return width, height, pos


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Write an H x W image as binary PGM.

    Args:
        path (PathLike)
        image (np.ndarray): uint8 gray levels, or floats in [0, 1].
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError(path, f"expected an H x W image, received {image.shape}")
    pixels = image if image.dtype == np.uint8 else to_uint8(image)
    height, width = pixels.shape
    _atomic_write(path, f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary PGM as a uint8 H x W array."""
    raw = _read_bytes(path)
    width, height, offset = _netpbm_header(raw, path, b"P5")
    if len(raw) - offset != width * height:
        raise FormatError(path, f"expected {width * height} pixels, found {len(raw) - offset}")
    return np.frombuffer(raw, np.uint8, offset=offset).reshape(height, width).copy()


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    """Write an H x W x 3 uint8 image as binary PPM."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(path, f"expected an H x W x 3 image, received {image.shape}")
    height, width, _ = image.shape
    _atomic_write(path, f"P6\n{width} {height}\n255\n".encode("ascii") + image.tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    raw = _read_bytes(path)
    width, height, offset = _netpbm_header(raw, path, b"P6")
    if len(raw) - offset != 3 * width * height:
        raise FormatError(path, "truncated raster")
    return np.frombuffer(raw, np.uint8, offset=offset).reshape(height, width, 3).copy()


# LANDMARKS


def landmark_header(n_landmarks: int) -> str:
    return ",".join(f"{axis}{i}" for i in range(n_landmarks) for axis in ("x", "y"))


def write_landmarks_csv(path: PathLike, landmarks: np.ndarray) -> None:
    """Write T x 2m coordinates, one frame per row."""
    landmarks = np.atleast_2d(np.asarray(landmarks, dtype=np.float64))
    if landmarks.shape[1] % 2:
        raise FormatError(path, f"odd coordinate count {landmarks.shape[1]}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(
        path,
        landmarks,
        fmt="%.17g",
        delimiter=",",
        header=landmark_header(landmarks.shape[1] // 2),
        comments="",
    )


def read_landmarks_csv(path: PathLike) -> np.ndarray:
    """Read a landmark CSV into a T x 2m float64 array.

    Raises:
        FormatError: On a missing or inconsistent header or malformed rows.
    """
    try:
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            data = np.loadtxt(f, delimiter=",", ndmin=2)
    except ValueError as e:
        raise FormatError(path, f"malformed row: {e}") from e

    columns = header.split(",")
    if len(columns) % 2 or header != landmark_header(len(columns) // 2):
        raise FormatError(path, "bad header")
    if data.size and data.shape[1] != len(columns):
        raise FormatError(path, f"{data.shape[1]} values per row, header names {len(columns)}")
    return data.reshape(-1, len(columns))


# CHECKPOINTS


def write_checkpoint(path: PathLike, config: dict[str, Any], arrays: dict[str, np.ndarray]) -> None:
    """Serialize named float64 arrays and a model configuration atomically."""
    meta = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks = [
        constants.CHECKPOINT_TAG,
        np.array([constants.CHECKPOINT_VERSION, len(arrays), len(meta)], _U4).tobytes(),
        meta,
    ]
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype=np.float64)
        chunks += [
            np.array([len(encoded)], _U4).tobytes(),
            encoded,
            np.array([array.ndim, *array.shape], _U4).tobytes(),
            np.ascontiguousarray(array, dtype=_F8).tobytes(),
        ]
    _atomic_write(path, b"".join(chunks))


class _Cursor:
    """Bounds-checked reader over a checkpoint buffer."""

    def __init__(self, raw: bytes, path: PathLike) -> None:
        self.raw = raw
        self.path = path
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.raw):
            raise FormatError(self.path, "truncated checkpoint")
        chunk = self.raw[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def u4(self, count: int = 1) -> list[int]:
        return [int(v) for v in np.frombuffer(self.take(4 * count), _U4)]


def read_checkpoint(path: PathLike) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Inverse of `write_checkpoint`.

    Raises:
        FormatError: On a wrong tag or version, or a truncated file.

    Returns:
        tuple[dict[str, Any], dict[str, np.ndarray]]: Model configuration and arrays.
    """
    cursor = _Cursor(_read_bytes(path), path)
    if cursor.take(len(constants.CHECKPOINT_TAG)) != constants.CHECKPOINT_TAG:
        raise FormatError(path, "not a checkpoint")
    version, count, meta_size = cursor.u4(3)
    if version != constants.CHECKPOINT_VERSION:
        raise FormatError(path, f"unsupported checkpoint version {version}")
    try:
        config = json.loads(cursor.take(meta_size).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(path, "malformed configuration record") from e

    arrays = {}
    for _ in range(count):
        (name_size,) = cursor.u4()
        try:
            name = cursor.take(name_size).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(path, "malformed parameter name") from e
        (rank,) = cursor.u4()
        shape = tuple(cursor.u4(rank))
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(cursor.take(8 * size), _F8).reshape(shape).astype(np.float64)

    if cursor.pos != len(cursor.raw):
        raise FormatError(path, "trailing bytes after the last record")
    return config, arrays
