"""File formats: pose and audio containers, mask/video frame directories,
and the single-file checkpoint container.

All binary containers are little-endian and fully specified in
docs/formats.md. Writers are deterministic: the same in-memory object
always produces the same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .core import AudioFeatureSequence, PoseSequence
from .maskgen import MaskVideo

_CKPT_MAGIC = b"MMGT"
_CKPT_VERSION = 1
_CLIP_VERSION = 1


class FormatError(ValueError):
    """Raised for corrupt, truncated, or wrong-version files."""


def _dest(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- poses

def save_poses_jsonl(path, poses: PoseSequence) -> None:
    """One frame per line: a JSON array of [x, y, conf] triplets."""
    lines = []
    for frame in poses.data:
        lines.append(json.dumps([[float(v) for v in kp] for kp in frame]))
    _dest(path).write_text("\n".join(lines) + "\n")


def load_poses_jsonl(path, fps: float = 25.0) -> PoseSequence:
    text = Path(path).read_text()
    frames = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: line {i + 1} is not valid JSON: {e}") from e
        frames.append(frame)
    if not frames:
        raise FormatError(f"{path}: no frames")
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"{path}: frames must be lists of [x, y, conf] triplets")
    return PoseSequence(arr, fps=fps)


def save_poses_bin(path, poses: PoseSequence) -> None:
    """8-byte header (N, Cp as uint32 LE) then N*Cp*3 float32 LE values."""
    n, cp, _ = poses.data.shape
    payload = poses.data.astype("<f4").tobytes()
    _dest(path).write_bytes(struct.pack("<II", n, cp) + payload)


def load_poses_bin(path, fps: float = 25.0) -> PoseSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: header truncated")
    n, cp = struct.unpack_from("<II", raw)
    expected = 8 + n * cp * 3 * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n}x{cp} poses, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=8).reshape(n, cp, 3)
    return PoseSequence(data.astype(np.float64), fps=fps)


# ---------------------------------------------------------------- audio

def save_audio_bin(path, audio: AudioFeatureSequence) -> None:
    """Same container as poses with a (N, Da) float32 payload."""
    n, da = audio.data.shape
    _dest(path).write_bytes(struct.pack("<II", n, da) + audio.data.astype("<f4").tobytes())


def load_audio_bin(path, fps: float = 25.0) -> AudioFeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: header truncated")
    n, da = struct.unpack_from("<II", raw)
    expected = 8 + n * da * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n}x{da} features, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=8).reshape(n, da)
    return AudioFeatureSequence(data.astype(np.float64), fps=fps)


# ---------------------------------------------------------------- masks

def save_mask_video(dirpath, mask: MaskVideo) -> None:
    """Directory of 8-bit grayscale PNGs named frame_%05d.png."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for t in range(mask.num_frames):
        ok = cv2.imwrite(str(d / f"frame_{t:05d}.png"), mask.data[t])
        if not ok:
            raise FormatError(f"could not write {d / f'frame_{t:05d}.png'}")


def load_mask_video(dirpath, region_tag: str = "region") -> MaskVideo:
    d = Path(dirpath)
    files = sorted(d.glob("frame_*.png"))
    if not files:
        raise FileNotFoundError(f"no frame_*.png files in {d}")
    frames = []
    for f in files:
        img = cv2.imread(str(f), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise FormatError(f"unreadable PNG: {f}")
        frames.append(img)
    return MaskVideo(np.stack(frames), region_tag=region_tag)


def save_mask_bin(path, mask: MaskVideo) -> None:
    """Raw container: 12-byte header (N, H, W as uint32 LE) then uint8 frames."""
    n, h, w = mask.data.shape
    _dest(path).write_bytes(struct.pack("<III", n, h, w) + mask.data.tobytes())


def load_mask_bin(path, region_tag: str = "region") -> MaskVideo:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: header truncated")
    n, h, w = struct.unpack_from("<III", raw)
    expected = 12 + n * h * w
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n}x{h}x{w} mask, got {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=12).reshape(n, h, w)
    return MaskVideo(data.copy(), region_tag=region_tag)


# ---------------------------------------------------------------- videos

def save_video(dirpath, frames: np.ndarray, fps: float) -> None:
    """PNG frame directory plus index.json carrying fps and frame size.

    frames: uint8 (N, H, W, 3) in RGB order.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3 or frames.dtype != np.uint8:
        raise ValueError(f"expected uint8 (N, H, W, 3) frames, got {frames.dtype} {frames.shape}")
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    n, h, w, _ = frames.shape
    for t in range(n):
        bgr = cv2.cvtColor(frames[t], cv2.COLOR_RGB2BGR)
        if not cv2.imwrite(str(d / f"frame_{t:05d}.png"), bgr):
            raise FormatError(f"could not write {d / f'frame_{t:05d}.png'}")
    index = {"fps": float(fps), "num_frames": int(n), "size": [int(h), int(w)], "version": _CLIP_VERSION}
    (d / "index.json").write_text(json.dumps(index, sort_keys=True, indent=2) + "\n")


def load_video(dirpath) -> tuple[np.ndarray, float]:
    """Returns (uint8 RGB frames (N, H, W, 3), fps)."""
    d = Path(dirpath)
    index_path = d / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"missing {index_path}")
    index = json.loads(index_path.read_text())
    files = sorted(d.glob("frame_*.png"))
    if len(files) != index["num_frames"]:
        raise FormatError(f"{d}: index lists {index['num_frames']} frames, found {len(files)}")
    frames = []
    for f in files:
        img = cv2.imread(str(f), cv2.IMREAD_COLOR)
        if img is None:
            raise FormatError(f"unreadable PNG: {f}")
        frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    arr = np.stack(frames)
    if list(arr.shape[1:3]) != list(index["size"]):
        raise FormatError(f"{d}: frame size {arr.shape[1:3]} != index {index['size']}")
    return arr, float(index["fps"])


# ------------------------------------------------------------ checkpoints

@dataclass
class Checkpoint:
    """A named-blob container: JSON header (kind, config, meta) plus
    float32 parameter arrays."""

    kind: str
    config: dict
    blobs: dict
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    names = sorted(ckpt.blobs)
    # asarray keeps 0-d blobs 0-d, ascontiguousarray would promote them
    arrays = {k: np.asarray(ckpt.blobs[k], dtype="<f4", order="C") for k in names}
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "meta": ckpt.meta,
        "blobs": [{"name": k, "shape": list(arrays[k].shape)} for k in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(_dest(path), "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for k in names:
            fh.write(arrays[k].tobytes())


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing checkpoint: {p}")
    raw = p.read_bytes()
    if len(raw) < 16 or raw[:4] != _CKPT_MAGIC:
        raise FormatError(f"{p}: not a checkpoint file")
    version, header_len = struct.unpack_from("<IQ", raw, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"{p}: unsupported checkpoint version {version}")
    if len(raw) < 16 + header_len:
        raise FormatError(f"{p}: header truncated")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{p}: corrupt header: {e}") from e
    for key in ("kind", "config", "blobs"):
        if key not in header:
            raise FormatError(f"{p}: header missing '{key}'")
    offset = 16 + header_len
    blobs = {}
    for entry in header["blobs"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + count * 4
        if end > len(raw):
            raise FormatError(f"{p}: blob '{entry['name']}' truncated")
        blobs[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise FormatError(f"{p}: {len(raw) - offset} trailing bytes after blobs")
    return Checkpoint(kind=header["kind"], config=header["config"], blobs=blobs, meta=header.get("meta", {}))
