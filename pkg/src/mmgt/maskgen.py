"""Motion-mask generation from pose sequences.

Per frame, each region's keypoints are truncated to pixel coordinates and
the bounding box over the valid ones is filled with 255. Overlapping parts
therefore merge into larger active areas instead of leaving gaps, which is
what makes box masks more stable than segmentation under occlusion. Masks
feed the video model as a blurred multi-resolution pyramid in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .core import KeypointLayout, PoseSequence


@dataclass
class MaskVideo:
    """N x H x W mask frames with values exactly 0 or 255."""

    data: np.ndarray
    region_tag: str = "region"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3:
            raise ValueError(f"mask video must be (N, H, W), got {self.data.shape}")
        if not np.isin(self.data, (0, 255)).all():
            raise ValueError("mask video values must be exactly 0 or 255")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass
class MaskPyramid:
    """Blurred, resized float copies of a mask video, largest level first."""

    levels: list[np.ndarray]
    blur_sigma: list[float]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        sizes = [lv.shape[1:] for lv in self.levels]
        for (h0, w0), (h1, w1) in zip(sizes, sizes[1:]):
            if not (h1 < h0 and w1 < w0):
                raise ValueError(f"level sizes must strictly decrease, got {sizes}")
        for lv in self.levels:
            if lv.min() < 0.0 or lv.max() > 1.0:
                raise ValueError("pyramid values must lie in [0, 1]")

    def level_for_size(self, height: int, width: int) -> np.ndarray:
        for lv in self.levels:
            if lv.shape[1] == height and lv.shape[2] == width:
                return lv
        raise KeyError(f"no pyramid level of size {(height, width)}")


def region_mask(
    poses: PoseSequence,
    region: Iterable[int],
    height: int,
    width: int,
    tag: str = "region",
) -> MaskVideo:
    """Bounding-box mask video for one keypoint region.

    Keypoints are mapped to pixels by truncation (int(x * W), int(y * H));
    points whose pixel coordinates are not strictly positive are skipped. A
    frame is filled over the half-open box [min_y, max_y) x [min_x, max_x)
    only when both extents are nonempty, so a frame with a single valid
    keypoint stays all zero.
    """
    idx = np.asarray(sorted(int(c) for c in region), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("region must be nonempty")
    if height < 1 or width < 1:
        raise ValueError(f"mask size must be positive, got {(height, width)}")
    out = np.zeros((poses.num_frames, height, width), dtype=np.uint8)
    for t in range(poses.num_frames):
        pts = poses.data[t, idx, :2].astype(np.float64)
        px = np.trunc(pts[:, 0] * width).astype(np.int64)
        py = np.trunc(pts[:, 1] * height).astype(np.int64)
        valid = (px > 0) & (py > 0)
        if not valid.any():
            continue
        min_x, max_x = px[valid].min(), px[valid].max()
        min_y, max_y = py[valid].min(), py[valid].max()
        if min_x < max_x and min_y < max_y:
            out[t, min_y:max_y, min_x:max_x] = 255
    return MaskVideo(out, region_tag=tag)


def combine_masks(a: MaskVideo, b: MaskVideo) -> MaskVideo:
    """Union of the active regions (pixelwise max)."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mask shapes differ: {a.data.shape} vs {b.data.shape}")
    return MaskVideo(np.maximum(a.data, b.data), region_tag=f"{a.region_tag}+{b.region_tag}")


def background_mask(fh: MaskVideo) -> MaskVideo:
    """Complement mask: 255 minus the input at every pixel."""
    return MaskVideo(255 - fh.data, region_tag="background")


def layout_masks(
    poses: PoseSequence, layout: KeypointLayout, height: int, width: int
) -> dict[str, MaskVideo]:
    """The standard mask set for one pose sequence: face, lips, hands, the
    combined face+hands mask, and its background complement."""
    face = region_mask(poses, layout.face, height, width, tag="face")
    lips = region_mask(poses, layout.lips, height, width, tag="lips")
    hands = region_mask(poses, layout.hands, height, width, tag="hands")
    face_hands = combine_masks(face, hands)
    face_hands.region_tag = "face+hands"
    return {
        "face": face,
        "lips": lips,
        "hands": hands,
        "face_hands": face_hands,
        "background": background_mask(face_hands),
    }


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _area_weights(src: int, dst: int) -> np.ndarray:
    """dst x src fractional box-overlap weights; each row sums to 1."""
    w = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), src)):
            overlap = min(hi, j + 1.0) - max(lo, float(j))
            if overlap > 0:
                w[i, j] = overlap
    return w / w.sum(axis=1, keepdims=True)


def blur_frames(frames: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with kernel radius ceil(3*sigma), reflect
    padding so constant frames stay constant. sigma = 0 is a no-op."""
    frames = np.asarray(frames, dtype=np.float64)
    if sigma <= 0:
        return frames.copy()
    k = _gaussian_kernel(sigma)
    out = convolve1d(frames, k, axis=-1, mode="reflect")
    return convolve1d(out, k, axis=-2, mode="reflect")


def resize_area(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    """Box-average resampling of (..., H, W) frames to (..., height, width)."""
    rows = _area_weights(frames.shape[-2], height)
    cols = _area_weights(frames.shape[-1], width)
    return np.einsum("ih,...hw,jw->...ij", rows, frames, cols)


def mask_pyramid(mask: MaskVideo, levels: Sequence[tuple[int, int, float]]) -> MaskPyramid:
    """Blur-then-resize pyramid of a mask video, scaled into [0, 1].

    Each (height, width, sigma) level blurs the full-resolution frames with
    its own sigma before box-average resampling, so total mask mass is
    approximately preserved per level.
    """
    if not levels:
        raise ValueError("levels must be nonempty")
    out, sigmas = [], []
    src = mask.data.astype(np.float64)
    for height, width, sigma in levels:
        if height < 1 or width < 1:
            raise ValueError(f"level size must be positive, got {(height, width)}")
        lv = blur_frames(src, float(sigma))
        lv = resize_area(lv, int(height), int(width)) / 255.0
        out.append(np.clip(lv, 0.0, 1.0))
        sigmas.append(float(sigma))
    return MaskPyramid(out, sigmas)


def default_pyramid_levels(latent_height: int, latent_width: int) -> list[tuple[int, int, float]]:
    """Three levels at 1x, 1/2x and 1/4x of the latent resolution with
    sigma 1, 2, 4 pixels."""
    return [
        (latent_height, latent_width, 1.0),
        (latent_height // 2, latent_width // 2, 2.0),
        (latent_height // 4, latent_width // 4, 4.0),
    ]
