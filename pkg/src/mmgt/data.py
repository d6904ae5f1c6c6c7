"""Synthetic audio/pose/video corpus with a known, measurable coupling.

The generator ties each clip's streams together so learning tests have a
ground truth to recover:

  * audio features are smoothed band-limited noise envelopes in [0, 1];
  * lip aperture (mean lower-lip y minus mean upper-lip y) follows
    ``base + lip_gain * env[:, 0]``, with the sorted lip channels split
    half/half into upper and lower rows;
  * the hands move horizontally with the low-pass-filtered channel-1
    envelope: the left hand shifts by ``-hand_gain * lp`` and the right by
    ``+hand_gain * lp``, so the hand spread tracks ``2 * hand_gain * lp``;
  * every other keypoint performs a slow clamped random walk.

All randomness comes from the repo's counter-based generator, keyed per
clip, so a corpus is bit-reproducible and clips can be built in parallel.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .core import AudioFeatureSequence, KeypointLayout, PoseSequence, toy_layout
from .io import (FormatError, load_audio_bin, load_poses_bin, load_video,
                 save_audio_bin, save_poses_bin, save_video)
from .rng import CounterRng

_META_VERSION = 1
_NUM_SPEAKERS = 4

# per-region draw colors (RGB)
_COLORS = {
    "body": (210, 210, 210),
    "face": (60, 200, 80),
    "lips": (230, 60, 60),
    "left_hand": (70, 90, 235),
    "right_hand": (240, 170, 50),
}


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    num_clips: int = 8
    frames_per_clip: int = 24
    keypoints: int = 16
    audio_dim: int = 4
    fps: float = 25.0
    image_size: tuple[int, int] = (64, 64)
    seed: int = 0
    lip_gain: float = 0.06
    hand_gain: float = 0.08

    def __post_init__(self):
        if min(self.num_clips, self.frames_per_clip, self.keypoints, self.audio_dim) < 1:
            raise ValueError("corpus dimensions must be positive")
        if self.audio_dim < 2:
            raise ValueError("need at least 2 audio channels (lips use 0, hands use 1)")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if min(self.image_size) < 8:
            raise ValueError("image size too small to draw on")
        if self.lip_gain <= 0 or self.hand_gain <= 0:
            raise ValueError("coupling gains must be positive")
        toy_layout(self.keypoints)  # raises LayoutError on a bad channel count

    def layout(self) -> KeypointLayout:
        return toy_layout(self.keypoints)

    def to_dict(self) -> dict:
        return {
            "num_clips": self.num_clips,
            "frames_per_clip": self.frames_per_clip,
            "keypoints": self.keypoints,
            "audio_dim": self.audio_dim,
            "fps": self.fps,
            "image_size": list(self.image_size),
            "seed": self.seed,
            "lip_gain": self.lip_gain,
            "hand_gain": self.hand_gain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticCorpusConfig":
        d = dict(d)
        if "image_size" in d:
            d["image_size"] = tuple(d["image_size"])
        return cls(**d)


@dataclass
class Clip:
    """Time-aligned pose, audio, and video streams for one utterance."""

    poses: PoseSequence
    audio: AudioFeatureSequence
    pose_video: np.ndarray
    pixel_video: np.ndarray
    speaker_id: int
    layout: KeypointLayout

    def __post_init__(self):
        n = self.poses.num_frames
        if self.audio.num_frames != n or len(self.pose_video) != n or len(self.pixel_video) != n:
            raise ValueError("clip streams must share the same frame count")


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    """Hann-window moving average along axis 0 with reflect padding."""
    width = max(3, int(width) | 1)
    win = np.hanning(width + 2)[1:-1]
    win /= win.sum()
    pad = width // 2
    xp = np.pad(x, [(pad, pad)] + [(0, 0)] * (x.ndim - 1), mode="reflect")
    return np.apply_along_axis(lambda v: np.convolve(v, win, mode="valid"), 0, xp)


def _envelopes(rng: CounterRng, n: int, dim: int, fps: float) -> np.ndarray:
    """Band-limited noise envelopes, each channel normalized into [0, 1]."""
    raw = rng.normal((n, dim))
    band = _smooth(raw, round(0.3 * fps))
    env = _smooth(np.abs(band), round(0.15 * fps))
    peak = env.max(axis=0)
    return env / np.maximum(peak, 1e-9)


def lip_aperture(poses: PoseSequence, layout: KeypointLayout) -> np.ndarray:
    """Per-frame mouth opening: mean lower-lip y minus mean upper-lip y."""
    lips = list(layout.lips)
    if len(lips) < 2:
        raise ValueError("layout needs at least 2 lip channels")
    half = len(lips) // 2
    upper, lower = lips[:half], lips[half:]
    y = poses.data[:, :, 1]
    return y[:, lower].mean(axis=1) - y[:, upper].mean(axis=1)


def hand_spread(poses: PoseSequence, layout: KeypointLayout) -> np.ndarray:
    """Per-frame horizontal distance between the right and left hand centers."""
    if not layout.left_hand or not layout.right_hand:
        raise ValueError("layout has no hand channels")
    x = poses.data[:, :, 0]
    return x[:, list(layout.right_hand)].mean(axis=1) - x[:, list(layout.left_hand)].mean(axis=1)


def _clip_poses(cfg: SyntheticCorpusConfig, layout: KeypointLayout,
                env: np.ndarray, rng_walk: CounterRng, rng_jit: CounterRng) -> np.ndarray:
    n, cp = cfg.frames_per_clip, cfg.keypoints
    poses = np.zeros((n, cp, 3))
    poses[:, :, 2] = 1.0

    lips = list(layout.lips)
    face_other = [c for c in layout.face if c not in layout.lips]
    hands = set(layout.hands)
    body_other = [c for c in layout.body if c not in hands]

    # face ring around a per-clip center
    fcx = 0.5 + 0.05 * (rng_jit.uniform() - 0.5)
    fcy = 0.30 + 0.04 * (rng_jit.uniform() - 0.5)
    ang = np.linspace(0, 2 * np.pi, len(face_other), endpoint=False) if face_other else np.zeros(0)
    for i, c in enumerate(face_other):
        r = 0.09 + 0.01 * rng_jit.uniform()
        drift = np.cumsum(rng_walk.normal((n, 2), std=0.0015), axis=0)
        poses[:, c, 0] = fcx + r * np.cos(ang[i]) + drift[:, 0]
        poses[:, c, 1] = fcy + r * np.sin(ang[i]) + drift[:, 1]

    # lips: upper/lower rows split by the documented aperture
    half = len(lips) // 2
    aperture = 0.02 + cfg.lip_gain * env[:, 0]
    mouth_y = fcy + 0.05
    for j, c in enumerate(lips[:half]):
        off = (j - (half - 1) / 2) * 0.03
        poses[:, c, 0] = fcx + off
        poses[:, c, 1] = mouth_y - aperture / 2
    for j, c in enumerate(lips[half:]):
        off = (j - (len(lips) - half - 1) / 2) * 0.03
        poses[:, c, 0] = fcx + off
        poses[:, c, 1] = mouth_y + aperture / 2

    # hands: opposite horizontal shifts from the low-passed channel-1 envelope
    lp = _smooth(env[:, 1:2], round(0.3 * cfg.fps))[:, 0]
    for c in layout.left_hand:
        jx, jy = 0.03 * (rng_jit.uniform((2,)) - 0.5)
        poses[:, c, 0] = 0.30 + jx - cfg.hand_gain * lp
        poses[:, c, 1] = 0.62 + jy
    for c in layout.right_hand:
        jx, jy = 0.03 * (rng_jit.uniform((2,)) - 0.5)
        poses[:, c, 0] = 0.70 + jx + cfg.hand_gain * lp
        poses[:, c, 1] = 0.62 + jy

    # remaining body keypoints: slow clamped random walks
    for c in body_other:
        base = np.array([0.25 + 0.5 * rng_jit.uniform(), 0.55 + 0.35 * rng_jit.uniform()])
        steps = rng_walk.normal((n, 2), std=0.002)
        poses[:, c, :2] = np.clip(base + np.cumsum(steps, axis=0), 0.05, 0.95)

    poses[:, :, :2] = np.clip(poses[:, :, :2], 0.02, 0.98)
    return poses


def template_pose(cfg: SyntheticCorpusConfig) -> np.ndarray:
    """The resting pose the generator perturbs, with no drift or jitter.

    Returns (Cp, 3) float64 with unit confidence; useful as the initial
    pose for sampling when no recorded pose is available.
    """
    layout = cfg.layout()
    pose = np.zeros((cfg.keypoints, 3))
    pose[:, 2] = 1.0

    lips = list(layout.lips)
    face_other = [c for c in layout.face if c not in layout.lips]
    hands = set(layout.hands)
    body_other = [c for c in layout.body if c not in hands]

    fcx, fcy, r = 0.5, 0.30, 0.095
    ang = np.linspace(0, 2 * np.pi, len(face_other), endpoint=False)
    for i, c in enumerate(face_other):
        pose[c, 0] = fcx + r * np.cos(ang[i])
        pose[c, 1] = fcy + r * np.sin(ang[i])

    half = len(lips) // 2
    mouth_y = fcy + 0.05
    for j, c in enumerate(lips[:half]):
        pose[c, 0] = fcx + (j - (half - 1) / 2) * 0.03
        pose[c, 1] = mouth_y - 0.01
    for j, c in enumerate(lips[half:]):
        pose[c, 0] = fcx + (j - (len(lips) - half - 1) / 2) * 0.03
        pose[c, 1] = mouth_y + 0.01

    for c in layout.left_hand:
        pose[c, :2] = (0.30, 0.62)
    for c in layout.right_hand:
        pose[c, :2] = (0.70, 0.62)
    for c in body_other:
        pose[c, :2] = (0.5, 0.725)

    pose[:, :2] = np.clip(pose[:, :2], 0.02, 0.98)
    return pose.astype(np.float32).astype(np.float64)


def render_pose_video(poses: PoseSequence, layout: KeypointLayout,
                      height: int, width: int) -> np.ndarray:
    """Skeleton frames: per-region colored dots and chains on black.

    Keypoints with x <= 0, y <= 0, or conf <= 0 are skipped, so a frame of
    invalid keypoints renders black. Returns uint8 (N, H, W, 3) RGB.
    """
    if height < 1 or width < 1:
        raise ValueError(f"invalid render size {(height, width)}")
    if layout.total_channels != poses.num_channels:
        raise ValueError("layout does not match pose channel count")
    radius = max(1, min(height, width) // 48)
    regions = {
        "body": [c for c in layout.body if c not in set(layout.hands)],
        "face": [c for c in layout.face if c not in set(layout.lips)],
        "lips": list(layout.lips),
        "left_hand": list(layout.left_hand),
        "right_hand": list(layout.right_hand),
    }
    out = np.zeros((poses.num_frames, height, width, 3), dtype=np.uint8)
    for t in range(poses.num_frames):
        frame = out[t]
        for name, chans in regions.items():
            color = _COLORS[name]
            pts = []
            for c in chans:
                x, y, conf = poses.data[t, c]
                if x <= 0 or y <= 0 or conf <= 0:
                    continue
                pts.append((int(x * width), int(y * height)))
            for a, b in zip(pts, pts[1:]):
                cv2.line(frame, a, b, color, 1)
            for p in pts:
                cv2.circle(frame, p, radius, color, -1)
    return out


def _background(rng: CounterRng, n: int, height: int, width: int) -> np.ndarray:
    """Static low-frequency procedural texture, repeated over frames."""
    yy, xx = np.mgrid[0:height, 0:width]
    u, v = xx / width, yy / height
    img = np.zeros((height, width, 3))
    for ch in range(3):
        fx = 1 + int(rng.uniform() * 3)
        fy = 1 + int(rng.uniform() * 3)
        phase = 2 * np.pi * rng.uniform()
        img[:, :, ch] = 0.35 + 0.13 * np.sin(2 * np.pi * (fx * u + fy * v) + phase)
        img[:, :, ch] += 0.07 * np.cos(2 * np.pi * (fy * u - fx * v) - phase)
    frame = np.clip(img * 255, 0, 255).astype(np.uint8)
    return np.repeat(frame[None], n, axis=0).copy()


def generate_clip(cfg: SyntheticCorpusConfig, clip_index: int) -> Clip:
    """One deterministic clip; streams are keyed by clip index alone."""
    layout = cfg.layout()
    n = cfg.frames_per_clip
    base = 16 * clip_index
    env = _envelopes(CounterRng(cfg.seed, base + 0), n, cfg.audio_dim, cfg.fps)
    poses_arr = _clip_poses(cfg, layout, env,
                            rng_walk=CounterRng(cfg.seed, base + 1),
                            rng_jit=CounterRng(cfg.seed, base + 2))
    # quantize to float32 grid so the binary container round-trips bit-exactly
    poses_arr = poses_arr.astype(np.float32).astype(np.float64)
    env = env.astype(np.float32).astype(np.float64)
    poses = PoseSequence(poses_arr, fps=cfg.fps)
    audio = AudioFeatureSequence(env, fps=cfg.fps)
    h, w = cfg.image_size
    pose_video = render_pose_video(poses, layout, h, w)
    pixel_video = _background(CounterRng(cfg.seed, base + 3), n, h, w)
    skel = render_pose_video(poses, layout, h, w)
    drawn = skel.any(axis=3)
    pixel_video[drawn] = skel[drawn]
    return Clip(poses=poses, audio=audio, pose_video=pose_video,
                pixel_video=pixel_video, speaker_id=clip_index % _NUM_SPEAKERS,
                layout=layout)


def generate_corpus(cfg: SyntheticCorpusConfig) -> list[Clip]:
    return [generate_clip(cfg, i) for i in range(cfg.num_clips)]


# ------------------------------------------------------------- clip I/O

def save_clip(dirpath, clip: Clip) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    save_poses_bin(d / "poses.bin", clip.poses)
    save_audio_bin(d / "audio.bin", clip.audio)
    save_video(d / "frames", clip.pixel_video, clip.poses.fps)
    meta = {
        "version": _META_VERSION,
        "fps": clip.poses.fps,
        "speaker_id": clip.speaker_id,
        "layout": clip.layout.to_dict(),
        "image_size": [int(clip.pixel_video.shape[1]), int(clip.pixel_video.shape[2])],
    }
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_clip(dirpath) -> Clip:
    """Inverse of save_clip; the pose video is re-rendered (deterministic)."""
    d = Path(dirpath)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("version") != _META_VERSION:
        raise FormatError(f"{meta_path}: unsupported clip version {meta.get('version')}")
    layout = KeypointLayout.from_dict(meta["layout"])
    poses = load_poses_bin(d / "poses.bin", fps=meta["fps"])
    audio = load_audio_bin(d / "audio.bin", fps=meta["fps"])
    pixel_video, _ = load_video(d / "frames")
    h, w = meta["image_size"]
    pose_video = render_pose_video(poses, layout, h, w)
    return Clip(poses=poses, audio=audio, pose_video=pose_video,
                pixel_video=pixel_video, speaker_id=int(meta["speaker_id"]), layout=layout)


def save_corpus(dirpath, clips: list[Clip]) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for i, clip in enumerate(clips):
        save_clip(d / f"clip_{i:06d}", clip)


def load_corpus(dirpath) -> list[Clip]:
    d = Path(dirpath)
    dirs = sorted(d.glob("clip_*"))
    if not dirs:
        raise FileNotFoundError(f"no clip_* directories in {d}")
    return [load_clip(c) for c in dirs]


# ---------------------------------------------------------- wav (demo)

def read_wav(path) -> tuple[int, np.ndarray]:
    """Minimal 16-bit PCM WAV reader: (sample_rate, mono float in [-1, 1])."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise FormatError(f"{path}: only 16-bit PCM supported")
        rate = wf.getframerate()
        n = wf.getnframes()
        raw = np.frombuffer(wf.readframes(n), dtype="<i2")
        channels = wf.getnchannels()
    samples = raw.reshape(-1, channels).mean(axis=1) / 32768.0
    return rate, samples


def audio_features_from_wav(path, fps: float = 25.0, dim: int = 4) -> AudioFeatureSequence:
    """Frame-rate log band energies from a WAV file, normalized into [0, 1]."""
    rate, samples = read_wav(path)
    hop = int(round(rate / fps))
    if hop < 2 or len(samples) < hop:
        raise FormatError(f"{path}: too short for {fps} fps framing")
    n = len(samples) // hop
    win = np.hanning(2 * hop)
    feats = np.zeros((n, dim))
    edges = np.unique(np.geomspace(1, hop, dim + 1).astype(int))
    while len(edges) < dim + 1:
        edges = np.append(edges, edges[-1] + 1)
    padded = np.pad(samples, (hop // 2, hop))
    for t in range(n):
        seg = padded[t * hop : t * hop + 2 * hop] * win
        mag = np.abs(np.fft.rfft(seg))
        for b in range(dim):
            feats[t, b] = np.log1p(mag[edges[b] : edges[b + 1]].sum())
    peak = feats.max(axis=0)
    return AudioFeatureSequence(feats / np.maximum(peak, 1e-9), fps=fps)
