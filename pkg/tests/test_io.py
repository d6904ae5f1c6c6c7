import json
import struct

import numpy as np
import pytest

from mmgt.core import AudioFeatureSequence, PoseSequence
from mmgt.io import (Checkpoint, FormatError, load_audio_bin, load_checkpoint,
                     load_mask_bin, load_mask_video, load_poses_bin,
                     load_poses_jsonl, load_video, save_audio_bin,
                     save_checkpoint, save_mask_bin, save_mask_video,
                     save_poses_bin, save_poses_jsonl, save_video)
from mmgt.maskgen import MaskVideo
from mmgt.rng import CounterRng


def quantized_poses(seed, frames=5, cp=6):
    """float32-representable pose values so binary round trips are exact."""
    rng = CounterRng(seed)
    data = rng.uniform((frames, cp, 3)).astype(np.float32).astype(np.float64)
    return PoseSequence(data, fps=25.0)


class TestPoseContainers:
    def test_jsonl_roundtrip_exact(self, tmp_path):
        poses = quantized_poses(0)
        p = tmp_path / "poses.jsonl"
        save_poses_jsonl(p, poses)
        back = load_poses_jsonl(p)
        assert np.array_equal(back.data, poses.data)

    def test_jsonl_is_one_json_array_per_line(self, tmp_path):
        poses = quantized_poses(1, frames=3)
        p = tmp_path / "poses.jsonl"
        save_poses_jsonl(p, poses)
        lines = p.read_text().strip().splitlines()
        assert len(lines) == 3
        frame0 = json.loads(lines[0])
        assert len(frame0) == 6 and len(frame0[0]) == 3

    def test_jsonl_bad_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('[[0.1, 0.2, 1.0]]\nnot json\n')
        with pytest.raises(FormatError):
            load_poses_jsonl(p)

    def test_jsonl_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("\n")
        with pytest.raises(FormatError):
            load_poses_jsonl(p)

    def test_jsonl_wrong_triplet_width(self, tmp_path):
        p = tmp_path / "pairs.jsonl"
        p.write_text("[[0.1, 0.2]]\n")
        with pytest.raises(FormatError):
            load_poses_jsonl(p)

    def test_bin_roundtrip_exact(self, tmp_path):
        poses = quantized_poses(2, frames=7, cp=4)
        p = tmp_path / "poses.bin"
        save_poses_bin(p, poses)
        back = load_poses_bin(p)
        assert np.array_equal(back.data, poses.data)

    def test_bin_header_layout(self, tmp_path):
        poses = quantized_poses(3, frames=2, cp=3)
        p = tmp_path / "poses.bin"
        save_poses_bin(p, poses)
        raw = p.read_bytes()
        n, cp = struct.unpack_from("<II", raw)
        assert (n, cp) == (2, 3)
        assert len(raw) == 8 + 2 * 3 * 3 * 4

    def test_bin_truncated_header(self, tmp_path):
        p = tmp_path / "trunc.bin"
        p.write_bytes(b"\x01\x00")
        with pytest.raises(FormatError):
            load_poses_bin(p)

    def test_bin_truncated_payload(self, tmp_path):
        poses = quantized_poses(4)
        p = tmp_path / "poses.bin"
        save_poses_bin(p, poses)
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_poses_bin(p)

    def test_writer_deterministic(self, tmp_path):
        poses = quantized_poses(5)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_poses_bin(a, poses)
        save_poses_bin(b, poses)
        assert a.read_bytes() == b.read_bytes()
        ja, jb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_poses_jsonl(ja, poses)
        save_poses_jsonl(jb, poses)
        assert ja.read_bytes() == jb.read_bytes()


class TestAudioContainer:
    def test_roundtrip_exact(self, tmp_path):
        data = CounterRng(6).normal((9, 4)).astype(np.float32).astype(np.float64)
        audio = AudioFeatureSequence(data, fps=25.0)
        p = tmp_path / "audio.bin"
        save_audio_bin(p, audio)
        back = load_audio_bin(p)
        assert np.array_equal(back.data, audio.data)

    def test_size_mismatch(self, tmp_path):
        p = tmp_path / "audio.bin"
        p.write_bytes(struct.pack("<II", 3, 4) + b"\x00" * 20)
        with pytest.raises(FormatError):
            load_audio_bin(p)


class TestMaskContainers:
    def mask(self, seed=0):
        rng = CounterRng(seed)
        bits = (rng.uniform((4, 8, 6)) > 0.5).astype(np.uint8) * 255
        return MaskVideo(bits, region_tag="face")

    def test_png_dir_roundtrip(self, tmp_path):
        m = self.mask()
        d = tmp_path / "mask"
        save_mask_video(d, m)
        assert sorted(f.name for f in d.iterdir()) == [
            f"frame_{t:05d}.png" for t in range(4)]
        back = load_mask_video(d, region_tag="face")
        assert np.array_equal(back.data, m.data)
        assert back.region_tag == "face"

    def test_png_dir_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_mask_video(tmp_path / "nothere")

    def test_bin_roundtrip(self, tmp_path):
        m = self.mask(1)
        p = tmp_path / "mask.bin"
        save_mask_bin(p, m)
        back = load_mask_bin(p)
        assert np.array_equal(back.data, m.data)

    def test_bin_header(self, tmp_path):
        m = self.mask(2)
        p = tmp_path / "mask.bin"
        save_mask_bin(p, m)
        raw = p.read_bytes()
        assert struct.unpack_from("<III", raw) == (4, 8, 6)
        assert len(raw) == 12 + 4 * 8 * 6

    def test_bin_corrupt_values(self, tmp_path):
        p = tmp_path / "mask.bin"
        p.write_bytes(struct.pack("<III", 1, 2, 2) + bytes([0, 255, 7, 255]))
        with pytest.raises(ValueError):
            load_mask_bin(p)

    def test_bin_truncated(self, tmp_path):
        p = tmp_path / "mask.bin"
        p.write_bytes(struct.pack("<III", 2, 4, 4) + b"\xff" * 10)
        with pytest.raises(FormatError):
            load_mask_bin(p)


class TestVideoDir:
    def frames(self, seed=0, n=3, h=6, w=5):
        rng = CounterRng(seed)
        return (rng.uniform((n, h, w, 3)) * 255).astype(np.uint8)

    def test_roundtrip_exact(self, tmp_path):
        frames = self.frames()
        d = tmp_path / "video"
        save_video(d, frames, fps=25.0)
        back, fps = load_video(d)
        assert np.array_equal(back, frames)
        assert fps == 25.0

    def test_index_contents(self, tmp_path):
        d = tmp_path / "video"
        save_video(d, self.frames(1), fps=12.5)
        index = json.loads((d / "index.json").read_text())
        assert index == {"fps": 12.5, "num_frames": 3, "size": [6, 5], "version": 1}

    def test_frame_count_mismatch(self, tmp_path):
        d = tmp_path / "video"
        save_video(d, self.frames(2), fps=25.0)
        (d / "frame_00002.png").unlink()
        with pytest.raises(FormatError):
            load_video(d)

    def test_missing_index(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_video(tmp_path)

    def test_rejects_bad_dtype(self, tmp_path):
        with pytest.raises(ValueError):
            save_video(tmp_path / "v", np.zeros((2, 4, 4, 3), dtype=np.float32), fps=25.0)

    def test_writer_deterministic(self, tmp_path):
        frames = self.frames(3)
        d1, d2 = tmp_path / "v1", tmp_path / "v2"
        save_video(d1, frames, fps=25.0)
        save_video(d2, frames, fps=25.0)
        for f1 in sorted(d1.iterdir()):
            assert f1.read_bytes() == (d2 / f1.name).read_bytes()


class TestCheckpointContainer:
    def ckpt(self):
        rng = CounterRng(7)
        return Checkpoint(
            kind="demo",
            config={"dim": 8, "name": "x"},
            blobs={"b.weight": rng.normal((3,)).astype(np.float32),
                   "a.weight": rng.normal((2, 4)).astype(np.float32),
                   "scalar": np.float32(1.5)},
            meta={"steps": 10},
        )

    def test_roundtrip(self, tmp_path):
        c = self.ckpt()
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, c)
        back = load_checkpoint(p)
        assert back.kind == "demo"
        assert back.config == {"dim": 8, "name": "x"}
        assert back.meta == {"steps": 10}
        assert set(back.blobs) == set(c.blobs)
        for k in c.blobs:
            assert np.array_equal(back.blobs[k], np.asarray(c.blobs[k], dtype=np.float32))

    def test_magic_and_version(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, self.ckpt())
        raw = p.read_bytes()
        assert raw[:4] == b"MMGT"
        version, header_len = struct.unpack_from("<IQ", raw, 4)
        assert version == 1
        header = json.loads(raw[16:16 + header_len])
        assert [b["name"] for b in header["blobs"]] == sorted(c["name"] for c in header["blobs"])

    def test_blob_order_independent_of_insertion(self, tmp_path):
        c = self.ckpt()
        reordered = Checkpoint(c.kind, c.config,
                               dict(sorted(c.blobs.items(), reverse=True)), c.meta)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, c)
        save_checkpoint(p2, reordered)
        assert p1.read_bytes() == p2.read_bytes()

    def test_not_a_checkpoint(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"JUNKxxxxxxxxxxxxxxxx")
        with pytest.raises(FormatError):
            load_checkpoint(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.ckpt")

    def test_wrong_version(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, self.ckpt())
        raw = bytearray(p.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(p)

    def test_truncated_blob(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, self.ckpt())
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_checkpoint(p)

    def test_trailing_garbage(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, self.ckpt())
        p.write_bytes(p.read_bytes() + b"\x00\x00")
        with pytest.raises(FormatError):
            load_checkpoint(p)

    def test_corrupt_header_json(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, self.ckpt())
        raw = bytearray(p.read_bytes())
        raw[16] = ord("!")   # break the opening brace
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(p)

    def test_header_missing_required_key(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, self.ckpt())
        raw = bytearray(p.read_bytes())
        # corrupt the "blobs" key name; the JSON still parses
        i = bytes(raw).index(b'"blobs"')
        raw[i + 1] = ord("x")
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(p)
