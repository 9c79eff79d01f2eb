"""Flow colour coding and frame warping for inspection images."""

from __future__ import annotations

from typing import Optional

import numpy as np

from mer_util import ops


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV to RGB; all channels in [0, 1], hue wraps at 1."""
    h = np.mod(h, 1.0) * 6.0
    sector = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))

    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(h.shape + (3,))
    for i, channels in enumerate(choices):
        mask = sector == i
        for c in range(3):
            rgb[..., c][mask] = channels[c][mask]
    return rgb


def flow_to_color(flow: np.ndarray, max_magnitude: Optional[float] = None) -> np.ndarray:
    """Colour-code a 2 x H x W flow field.

    Hue encodes the direction (0 for motion to the right, growing
    counter-clockwise in image coordinates), saturation the magnitude relative
    to `max_magnitude`, value stays 1. Zero motion is white.

    Args:
        flow (np.ndarray): 2 x H x W, channel 0 is u, channel 1 is v.
        max_magnitude (float, optional): Magnitude mapped to full saturation. \
            Defaults to the maximum of the field.

    Returns:
        np.ndarray: H x W x 3 uint8 image.
    """
    u, v = np.asarray(flow, dtype=np.float64)
    magnitude = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(magnitude.max())
    saturation = np.clip(magnitude / max_magnitude, 0.0, 1.0) if max_magnitude > 0 else np.zeros_like(u)
    hue = np.arctan2(-v, u) / (2 * np.pi)

    rgb = hsv_to_rgb(hue, saturation, np.ones_like(u))
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def warp_frame(frame: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Reconstruct frame k from frame k+1 and the flow k -> k+1.

    Args:
        frame (np.ndarray): H x W frame k+1.
        flow (np.ndarray): 2 x H x W flow from frame k to frame k+1.

    Returns:
        np.ndarray: H x W estimate of frame k.
    """
    frame = np.asarray(frame, dtype=np.float64)
    return ops.bilinear_sample(frame[None], flow[0], flow[1])[0]


def warp_error(frame_k: np.ndarray, frame_next: np.ndarray, flow: np.ndarray, border: int = 2) -> float:
    """Mean absolute difference between frame k and its warped reconstruction,
    ignoring `border` pixels on each side."""
    warped = warp_frame(frame_next, flow)
    inner = (slice(border, -border or None),) * 2
    return float(np.abs(warped - np.asarray(frame_k, dtype=np.float64))[inner].mean())
