import wave

import numpy as np
import pytest

from mmgt.core import PoseSequence
from mmgt.data import (Clip, SyntheticCorpusConfig, audio_features_from_wav,
                       generate_clip, generate_corpus, hand_spread,
                       lip_aperture, load_clip, load_corpus, read_wav,
                       render_pose_video, save_clip, save_corpus, template_pose)


def tiny_cfg(**kw):
    base = dict(num_clips=3, frames_per_clip=20, keypoints=16, audio_dim=4,
                image_size=(32, 32), seed=5)
    base.update(kw)
    return SyntheticCorpusConfig(**base)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            tiny_cfg(num_clips=0)
        with pytest.raises(ValueError):
            tiny_cfg(audio_dim=1)
        with pytest.raises(ValueError):
            tiny_cfg(image_size=(4, 64))
        with pytest.raises(Exception):
            tiny_cfg(keypoints=7)   # odd channel count has no toy layout

    def test_dict_roundtrip(self):
        cfg = tiny_cfg()
        assert SyntheticCorpusConfig.from_dict(cfg.to_dict()) == cfg


class TestGeneration:
    def test_clip_shapes_and_ranges(self):
        cfg = tiny_cfg()
        clip = generate_clip(cfg, 0)
        assert clip.poses.data.shape == (20, 16, 3)
        assert clip.audio.data.shape == (20, 4)
        assert clip.pose_video.shape == (20, 32, 32, 3)
        assert clip.pixel_video.shape == (20, 32, 32, 3)
        assert clip.pose_video.dtype == np.uint8
        xy = clip.poses.data[:, :, :2]
        assert xy.min() >= 0.02 and xy.max() <= 0.98
        assert (clip.poses.data[:, :, 2] == 1.0).all()
        assert clip.audio.data.min() >= 0.0 and clip.audio.data.max() <= 1.0 + 1e-12

    def test_bit_reproducible(self):
        cfg = tiny_cfg()
        a, b = generate_clip(cfg, 1), generate_clip(cfg, 1)
        assert np.array_equal(a.poses.data, b.poses.data)
        assert np.array_equal(a.audio.data, b.audio.data)
        assert np.array_equal(a.pixel_video, b.pixel_video)

    def test_clips_independent_of_corpus_size(self):
        """Clip i only depends on the seed and its own index."""
        small = generate_corpus(tiny_cfg(num_clips=2))
        large = generate_corpus(tiny_cfg(num_clips=3))
        for a, b in zip(small, large):
            assert np.array_equal(a.poses.data, b.poses.data)
            assert np.array_equal(a.audio.data, b.audio.data)

    def test_different_seeds_differ(self):
        a = generate_clip(tiny_cfg(seed=1), 0)
        b = generate_clip(tiny_cfg(seed=2), 0)
        assert not np.array_equal(a.poses.data, b.poses.data)

    def test_speaker_ids_cycle(self):
        clips = generate_corpus(tiny_cfg(num_clips=6))
        assert [c.speaker_id for c in clips] == [0, 1, 2, 3, 0, 1]

    def test_float32_quantized(self):
        clip = generate_clip(tiny_cfg(), 0)
        assert np.array_equal(clip.poses.data,
                              clip.poses.data.astype(np.float32).astype(np.float64))


class TestCoupling:
    def test_lip_aperture_tracks_audio_channel0(self):
        cfg = tiny_cfg(frames_per_clip=120)
        corr = []
        for i in range(4):
            clip = generate_clip(cfg, i)
            ap = lip_aperture(clip.poses, clip.layout)
            r = np.corrcoef(ap, clip.audio.data[:, 0])[0, 1]
            corr.append(r)
        assert min(corr) > 0.95

    def test_hand_spread_tracks_lowpassed_channel1(self):
        cfg = tiny_cfg(frames_per_clip=120)
        for i in range(4):
            clip = generate_clip(cfg, i)
            sp = hand_spread(clip.poses, clip.layout)
            r = np.corrcoef(sp, clip.audio.data[:, 1])[0, 1]
            assert r > 0.8

    def test_shuffled_audio_breaks_lip_correlation(self):
        cfg = tiny_cfg(frames_per_clip=120)
        clip_a = generate_clip(cfg, 0)
        clip_b = generate_clip(cfg, 1)
        ap = lip_aperture(clip_a.poses, clip_a.layout)
        r_wrong = abs(np.corrcoef(ap, clip_b.audio.data[:, 0])[0, 1])
        r_right = np.corrcoef(ap, clip_a.audio.data[:, 0])[0, 1]
        assert r_right - r_wrong > 0.3

    def test_aperture_formula(self):
        cfg = tiny_cfg()
        clip = generate_clip(cfg, 2)
        got = lip_aperture(clip.poses, clip.layout)
        want = 0.02 + cfg.lip_gain * clip.audio.data[:, 0]
        # float32 quantization of the poses leaves tiny residue
        assert np.allclose(got, want, atol=1e-5)


class TestTemplatePose:
    def test_shape_and_confidence(self):
        cfg = tiny_cfg()
        pose = template_pose(cfg)
        assert pose.shape == (16, 3)
        assert (pose[:, 2] == 1.0).all()
        assert pose[:, :2].min() >= 0.02 and pose[:, :2].max() <= 0.98

    def test_quantized_and_deterministic(self):
        cfg = tiny_cfg()
        a, b = template_pose(cfg), template_pose(cfg)
        assert np.array_equal(a, b)
        assert np.array_equal(a, a.astype(np.float32).astype(np.float64))

    def test_near_generated_anchors(self):
        """The template sits close to where generated clips put keypoints:
        face, lips and hands are tightly anchored, loose body keypoints
        draw their base position from a wider box around the template."""
        cfg = tiny_cfg()
        lay = cfg.layout()
        pose = template_pose(cfg)
        for i in range(3):
            diff = np.abs(generate_clip(cfg, i).poses.data[0, :, :2] - pose[:, :2])
            anchored = sorted(set(lay.face) | set(lay.hands))
            assert diff[anchored].max() < 0.1
            assert diff.max() < 0.3

    def test_renders_nonblack(self):
        cfg = tiny_cfg()
        pose = template_pose(cfg)
        frames = render_pose_video(PoseSequence(pose[None]), cfg.layout(), 32, 32)
        assert frames.any()


class TestRenderer:
    def test_invalid_keypoints_render_black(self):
        cfg = tiny_cfg()
        data = np.zeros((2, 16, 3))   # x=y=0 everywhere, conf 0
        frames = render_pose_video(PoseSequence(data), cfg.layout(), 32, 32)
        assert not frames.any()

    def test_deterministic(self):
        clip = generate_clip(tiny_cfg(), 0)
        a = render_pose_video(clip.poses, clip.layout, 32, 32)
        assert np.array_equal(a, clip.pose_video)

    def test_layout_mismatch(self):
        cfg = tiny_cfg()
        with pytest.raises(ValueError):
            render_pose_video(PoseSequence(np.zeros((1, 8, 3))), cfg.layout(), 32, 32)


class TestClipIO:
    def test_roundtrip_bit_exact(self, tmp_path):
        clip = generate_clip(tiny_cfg(), 0)
        save_clip(tmp_path / "clip", clip)
        back = load_clip(tmp_path / "clip")
        assert np.array_equal(back.poses.data, clip.poses.data)
        assert np.array_equal(back.audio.data, clip.audio.data)
        assert np.array_equal(back.pixel_video, clip.pixel_video)
        assert np.array_equal(back.pose_video, clip.pose_video)
        assert back.speaker_id == clip.speaker_id
        assert back.layout == clip.layout

    def test_corpus_roundtrip(self, tmp_path):
        clips = generate_corpus(tiny_cfg())
        save_corpus(tmp_path / "corpus", clips)
        back = load_corpus(tmp_path / "corpus")
        assert len(back) == len(clips)
        for a, b in zip(back, clips):
            assert np.array_equal(a.poses.data, b.poses.data)
            assert np.array_equal(a.pixel_video, b.pixel_video)

    def test_missing_corpus(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "nope")

    def test_stream_length_mismatch_rejected(self):
        clip = generate_clip(tiny_cfg(), 0)
        with pytest.raises(ValueError):
            Clip(poses=clip.poses, audio=clip.audio,
                 pose_video=clip.pose_video[:-1], pixel_video=clip.pixel_video,
                 speaker_id=0, layout=clip.layout)


class TestWav:
    def write_wav(self, path, rate=16000, seconds=1.0, freq=440.0):
        t = np.arange(int(rate * seconds)) / rate
        wave_samples = (0.5 * np.sin(2 * np.pi * freq * t) * 32767).astype("<i2")
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(rate)
            wf.writeframes(wave_samples.tobytes())
        return wave_samples

    def test_read_wav(self, tmp_path):
        p = tmp_path / "tone.wav"
        samples = self.write_wav(p)
        rate, mono = read_wav(p)
        assert rate == 16000
        assert np.allclose(mono, samples / 32768.0, atol=1e-9)

    def test_features_shape_and_range(self, tmp_path):
        p = tmp_path / "tone.wav"
        self.write_wav(p, seconds=2.0)
        feats = audio_features_from_wav(p, fps=25.0, dim=4)
        assert feats.data.shape == (50, 4)
        assert feats.data.min() >= 0.0 and feats.data.max() <= 1.0 + 1e-12
        assert feats.fps == 25.0

    def test_features_deterministic(self, tmp_path):
        p = tmp_path / "tone.wav"
        self.write_wav(p)
        a = audio_features_from_wav(p)
        b = audio_features_from_wav(p)
        assert np.array_equal(a.data, b.data)

    def test_tone_concentrates_in_one_band(self, tmp_path):
        """A pure tone puts most energy into a single log band."""
        p = tmp_path / "tone.wav"
        self.write_wav(p, freq=2000.0, seconds=1.0)
        feats = audio_features_from_wav(p, fps=25.0, dim=4).data
        band_means = feats.mean(axis=0)
        order = np.argsort(band_means)
        assert band_means[order[-1]] > 1.5 * band_means[order[-2]]
