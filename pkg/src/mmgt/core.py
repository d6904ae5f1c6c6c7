"""Domain types and pose-sequence primitives shared by both stages.

Keypoint channels are partitioned into face and body sets; lips live inside
face and the two hands inside body. Poses are normalized image coordinates
(top-left origin, x right, y down) with a confidence value per keypoint, and
a keypoint with x <= 0 or y <= 0 counts as absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import CounterRng


class LayoutError(ValueError):
    """A keypoint layout violates its structural invariants."""


def _as_index_tuple(name: str, values) -> tuple[int, ...]:
    idx = [int(v) for v in values]
    if len(set(idx)) != len(idx):
        raise LayoutError(f"{name} contains duplicate indices: {idx}")
    return tuple(sorted(idx))


@dataclass(frozen=True)
class KeypointLayout:
    """Named channel-index sets over the Cp keypoint channels.

    face and body partition {0..Cp-1}; lips is a subset of face and the two
    hand sets are subsets of body. train_confidence controls whether the
    confidence channel participates in training losses (off by default:
    confidence is a detector artifact, not motion).
    """

    total_channels: int
    face: tuple[int, ...]
    body: tuple[int, ...]
    lips: tuple[int, ...] = ()
    left_hand: tuple[int, ...] = ()
    right_hand: tuple[int, ...] = ()
    train_confidence: bool = False

    def __post_init__(self):
        for name in ("face", "body", "lips", "left_hand", "right_hand"):
            object.__setattr__(self, name, _as_index_tuple(name, getattr(self, name)))
        cp = self.total_channels
        if cp < 1:
            raise LayoutError(f"total_channels must be positive, got {cp}")
        face, body = set(self.face), set(self.body)
        if face & body:
            raise LayoutError(f"face and body overlap: {sorted(face & body)}")
        if face | body != set(range(cp)):
            raise LayoutError("face and body must partition {0..%d}" % (cp - 1))
        if not set(self.lips) <= face:
            raise LayoutError("lips must be a subset of face")
        hands = set(self.left_hand) | set(self.right_hand)
        if not hands <= body:
            raise LayoutError("hand indices must be a subset of body")
        if set(self.left_hand) & set(self.right_hand):
            raise LayoutError("left_hand and right_hand overlap")

    @property
    def hands(self) -> tuple[int, ...]:
        return tuple(sorted(self.left_hand + self.right_hand))

    def to_dict(self) -> dict:
        return {
            "total_channels": self.total_channels,
            "face": list(self.face),
            "body": list(self.body),
            "lips": list(self.lips),
            "left_hand": list(self.left_hand),
            "right_hand": list(self.right_hand),
            "train_confidence": self.train_confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointLayout":
        return cls(**d)


def default_134_layout() -> KeypointLayout:
    """Layout for a 134-keypoint whole-body detector (402 values per frame).

    Channel assignment: 24 body points, 21 + 21 hand points (inside body),
    68 face landmarks with the mouth as the final 20. The exact ordering of
    such detectors is a configuration choice, not a constant.
    """
    return KeypointLayout(
        total_channels=134,
        body=range(0, 66),
        left_hand=range(24, 45),
        right_hand=range(45, 66),
        face=range(66, 134),
        lips=range(114, 134),
    )


def toy_layout(total_channels: int = 16) -> KeypointLayout:
    """Small synthetic-corpus layout: face in the first half (lips at its
    tail), body in the second half with two hand pairs in its middle."""
    cp = int(total_channels)
    if cp < 8 or cp % 2:
        raise LayoutError(f"toy layout needs an even channel count >= 8, got {cp}")
    half, quarter = cp // 2, cp // 4
    return KeypointLayout(
        total_channels=cp,
        face=range(0, half),
        lips=range(half - quarter, half),
        body=range(half, cp),
        left_hand=range(half + quarter // 2, half + quarter),
        right_hand=range(half + quarter, half + quarter + quarter // 2),
    )


@dataclass
class PoseSequence:
    """N x Cp x 3 keypoint tensor (x, y, confidence) plus a frame rate."""

    data: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"pose data must be (N, Cp, 3), got {self.data.shape}")
        if self.data.shape[0] < 1:
            raise ValueError("pose sequence needs at least one frame")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_channels(self) -> int:
        return self.data.shape[1]


@dataclass
class AudioFeatureSequence:
    """N x Da per-frame audio embedding, time-aligned with a pose sequence."""

    data: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"audio features must be (N, Da), got {self.data.shape}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SpatialMask:
    """Binary channel-selection vector of length Cp."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("spatial mask must be a vector")
        if not np.all((v == 0.0) | (v == 1.0)):
            raise ValueError("spatial mask values must be 0 or 1")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ClipWindow:
    start_frame: int
    length: int


def make_spatial_masks(layout: KeypointLayout) -> tuple[SpatialMask, SpatialMask]:
    """Face indicator over channels, and its complement for the body."""
    face = np.zeros(layout.total_channels, dtype=np.float64)
    face[list(layout.face)] = 1.0
    return SpatialMask(face), SpatialMask(1.0 - face)


def apply_spatial_mask(poses: PoseSequence, mask: SpatialMask) -> PoseSequence:
    """Zero out the channels deselected by the mask (broadcast over frames
    and the coordinate axis)."""
    if len(mask) != poses.num_channels:
        raise ValueError(
            f"mask length {len(mask)} != pose channels {poses.num_channels}"
        )
    out = poses.data * mask.values[None, :, None]
    return PoseSequence(out.astype(poses.data.dtype, copy=False), fps=poses.fps)


def add_pose_noise(poses: PoseSequence, sigma: float, seed: int) -> PoseSequence:
    """Add zero-mean Gaussian noise to the (x, y) coordinates.

    Confidence is left untouched, and the draw is a pure function of the
    seed, so the same call always produces the same noisy sequence.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    out = poses.data.astype(np.float64).copy()
    if sigma > 0:
        rng = CounterRng(seed)
        out[:, :, :2] += rng.normal(out[:, :, :2].shape, std=float(sigma))
    return PoseSequence(out.astype(poses.data.dtype, copy=False), fps=poses.fps)


def repeat_initial_pose(initial_pose: np.ndarray, num_frames: int, fps: float = 25.0) -> PoseSequence:
    """Tile a single (Cp, 3) pose along the time axis."""
    if num_frames < 1:
        raise ValueError(f"num_frames must be >= 1, got {num_frames}")
    p0 = np.asarray(initial_pose)
    if p0.ndim != 2 or p0.shape[1] != 3:
        raise ValueError(f"initial pose must be (Cp, 3), got {p0.shape}")
    return PoseSequence(np.repeat(p0[None], num_frames, axis=0), fps=fps)


def clip_windows(length_frames: int, step_frames: int, total: int) -> list[ClipWindow]:
    """All fully-contained windows of the given length at the given stride,
    in temporal order. Empty when the source is shorter than the window."""
    if step_frames < 1:
        raise ValueError(f"step must be >= 1, got {step_frames}")
    if length_frames < 1:
        raise ValueError(f"length must be >= 1, got {length_frames}")
    return [
        ClipWindow(start, length_frames)
        for start in range(0, total - length_frames + 1, step_frames)
    ]
