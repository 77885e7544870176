"""Pose rasterization: solid-shape Gaussian heat maps and temporal stacking.

Each pose becomes a (10+5)-channel volume: one channel per body part drawn
as a Gaussian-smoothed solid shape (circle for the head, rotated rectangle
for the other nine), plus five landmark channels (face, hands, feet) drawn
as maxima of isotropic Gaussians.  Volumes of the K most recent poses are
stacked channel-wise for temporal smoothing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .skeleton import LANDMARK_NAMES, LANDMARK_PARENT, PartSegment, Pose2D, part_segments

log = logging.getLogger(__name__)

N_PART_CHANNELS = 10
N_LANDMARK_CHANNELS = 5
N_CHANNELS = N_PART_CHANNELS + N_LANDMARK_CHANNELS


@dataclass
class RasterConfig:
    """Shape parameters for pose rasterization.

    sigma defaults to sigma_ratio * max(H, W); rectangle width to
    width_ratio * segment length, clamped to min_width pixels.
    """

    sigma: float | None = None
    sigma_ratio: float = 0.02
    width_ratio: float = 0.25
    min_width: float = 3.0

    def sigma_for(self, height: int, width: int) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return self.sigma_ratio * max(height, width)

    def width_for(self, segment_length: float) -> float:
        return max(self.min_width, self.width_ratio * segment_length)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian, truncated at 4 sigma, normalized to sum 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(4.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    return k / k.sum()


def smooth2d(grid: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with zero padding.

    Equals dense 2D convolution with the outer product of the 1D kernel
    (to floating-point tolerance), which is the test oracle.
    """
    k = gaussian_kernel1d(sigma)
    out = convolve1d(np.asarray(grid, dtype=np.float64), k, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, k, axis=1, mode="constant", cval=0.0)


def _pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def _solid_rectangle(segment: PartSegment, height: int, width: int, rect_width: float) -> np.ndarray:
    xs, ys = _pixel_grid(height, width)
    c = segment.midpoint
    axis = (segment.p1 - segment.p0) / segment.length
    dx, dy = xs - c[0], ys - c[1]
    along = dx * axis[0] + dy * axis[1]
    perp = -dx * axis[1] + dy * axis[0]
    mask = (np.abs(along) <= segment.length / 2.0) & (np.abs(perp) <= rect_width / 2.0)
    return mask.astype(np.float64)


def _solid_circle(center: np.ndarray, radius: float, height: int, width: int) -> np.ndarray:
    xs, ys = _pixel_grid(height, width)
    mask = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius**2
    return mask.astype(np.float64)


def _warn_if_clipped(segment: PartSegment, extent: float, height: int, width: int) -> None:
    lo = np.minimum(segment.p0, segment.p1) - extent
    hi = np.maximum(segment.p0, segment.p1) + extent
    if lo[0] < 0 or lo[1] < 0 or hi[0] > width - 1 or hi[1] > height - 1:
        log.warning("part %r shape exceeds %dx%d frame; clipped", segment.part_id, height, width)


def rasterize_part_channel(
    segment: PartSegment,
    height: int,
    width: int,
    rect_width: float,
    sigma: float,
) -> np.ndarray:
    """Gaussian-smoothed solid shape for one body part, peak rescaled to 1.

    All parts are rotated rectangles along the bone; the head is a solid
    circle at the segment midpoint with radius = half segment length.
    Out-of-frame shape portions are clipped (with a warning).
    """
    if segment.missing or segment.length <= 0:
        raise ValueError(f"cannot rasterize missing/degenerate part {segment.part_id!r}")
    if rect_width <= 0 or sigma <= 0:
        raise ValueError("rect_width and sigma must be positive")
    if segment.part_id == "head":
        radius = segment.length / 2.0
        mask = _solid_circle(segment.midpoint, radius, height, width)
        _warn_if_clipped(segment, radius, height, width)
    else:
        mask = _solid_rectangle(segment, height, width, rect_width)
        _warn_if_clipped(segment, rect_width / 2.0, height, width)
    out = smooth2d(mask, sigma)
    peak = out.max()
    if peak > 0:
        out /= peak
    return out


def rasterize_landmark_channel(
    points: np.ndarray | list,
    height: int,
    width: int,
    sigma: float,
) -> np.ndarray:
    """Per-pixel maximum of isotropic Gaussians at each point, peak 1.

    An empty point list yields an all-zero channel.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return np.zeros((height, width), dtype=np.float64)
    xs, ys = _pixel_grid(height, width)
    out = np.zeros((height, width), dtype=np.float64)
    for px, py in pts:
        g = np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * sigma**2))
        np.maximum(out, g, out=out)
    peak = out.max()
    if peak > 0:
        out /= peak
    return out


def build_pose_volume(
    pose: Pose2D,
    height: int,
    width: int,
    cfg: RasterConfig | None = None,
) -> np.ndarray:
    """(H, W, 15) pose volume: 10 part channels then face/lhand/rhand/lfoot/rfoot.

    Missing parts and absent landmark sets yield all-zero channels.
    """
    cfg = cfg or RasterConfig()
    sigma = cfg.sigma_for(height, width)
    channels = []
    for seg in part_segments(pose):
        if seg.missing:
            channels.append(np.zeros((height, width), dtype=np.float64))
        else:
            channels.append(
                rasterize_part_channel(seg, height, width, cfg.width_for(seg.length), sigma)
            )
    for name in LANDMARK_NAMES:
        pts = pose.landmarks.get(name)
        if pts is None or len(pts) == 0 or not pose.visible(LANDMARK_PARENT[name]):
            channels.append(np.zeros((height, width), dtype=np.float64))
        else:
            channels.append(rasterize_landmark_channel(pts, height, width, sigma))
    return np.stack(channels, axis=-1).astype(np.float32)


def stack_temporal(history: list[np.ndarray], k: int) -> np.ndarray:
    """Stack up to k pose volumes channel-wise, oldest first.

    ``history`` is ordered oldest -> newest.  At a sequence start with fewer
    than k volumes, the oldest one is repeated to pad (an all-zero pad would
    read as missing parts).
    """
    if not history:
        raise ValueError("stack_temporal: empty history")
    if len(history) > k:
        raise ValueError(f"stack_temporal: got {len(history)} volumes for k={k}")
    padded = [history[0]] * (k - len(history)) + list(history)
    return np.concatenate(padded, axis=-1)


def dump_volume_debug(volume: np.ndarray, out_dir, frame_index: int) -> list:
    """Write each channel as an 8-bit grayscale PNG `<frame>_<channel>.png`."""
    from pathlib import Path

    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in range(volume.shape[-1]):
        img = np.clip(np.round(volume[..., c] * 255.0), 0, 255).astype(np.uint8)
        path = out / f"{frame_index:06d}_{c:02d}.png"
        Image.fromarray(img).save(str(path))
        paths.append(path)
    return paths
