import math

import numpy as np
import pytest

from mmgt.core import PoseSequence, add_pose_noise
from mmgt.data import SyntheticCorpusConfig, generate_corpus
from mmgt.metrics import (FeatureStats, diversity, feature_stats,
                          frechet_distance, psnr, ssim,
                          train_pose_autoencoder)
from mmgt.rng import CounterRng


def gaussian_features(seed, count=400, dim=6, mean=0.0, scale=1.0):
    return CounterRng(seed).normal((count, dim)) * scale + mean


# -------------------------------------------------------------- Frechet

class TestFrechetDistance:
    def test_identity_is_zero(self):
        s = feature_stats(gaussian_features(0))
        assert frechet_distance(s, s) < 1e-10

    def test_pure_offset_closed_form(self):
        """Same covariance, shifted mean: distance is the squared shift."""
        f = gaussian_features(1)
        d = np.linspace(0.5, 1.5, f.shape[1])
        a, b = feature_stats(f), feature_stats(f + d)
        assert frechet_distance(a, b) == pytest.approx(float(d @ d), abs=1e-6)

    def test_diagonal_covariance_closed_form(self):
        """For diagonal Gaussians the trace term is sum (sqrt(va)-sqrt(vb))^2."""
        mu_a, mu_b = np.array([0.0, 1.0]), np.array([2.0, -1.0])
        va, vb = np.array([1.0, 4.0]), np.array([9.0, 0.25])
        a = FeatureStats(mu_a, np.diag(va), 100)
        b = FeatureStats(mu_b, np.diag(vb), 100)
        want = float(((mu_a - mu_b) ** 2).sum()
                     + ((np.sqrt(va) - np.sqrt(vb)) ** 2).sum())
        assert frechet_distance(a, b) == pytest.approx(want, abs=1e-9)

    def test_symmetry(self):
        a = feature_stats(gaussian_features(2, scale=1.3))
        b = feature_stats(gaussian_features(3, mean=0.4))
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-9)

    def test_nonnegative(self):
        for seed in range(5):
            a = feature_stats(gaussian_features(seed, count=50))
            b = feature_stats(gaussian_features(seed + 10, count=50))
            assert frechet_distance(a, b) >= 0.0

    def test_dim_mismatch(self):
        a = feature_stats(gaussian_features(4, dim=4))
        b = feature_stats(gaussian_features(5, dim=6))
        with pytest.raises(ValueError):
            frechet_distance(a, b)

    def test_grows_with_separation(self):
        base = feature_stats(gaussian_features(6))
        dists = [frechet_distance(base, feature_stats(gaussian_features(6) + off))
                 for off in (0.5, 1.0, 2.0)]
        assert dists[0] < dists[1] < dists[2]


class TestFeatureStats:
    def test_matches_numpy_moments(self):
        f = gaussian_features(7, count=200)
        s = feature_stats(f)
        assert np.allclose(s.mean, f.mean(axis=0), atol=1e-12)
        assert np.allclose(s.cov, np.cov(f, rowvar=False), atol=1e-12)
        assert s.count == 200

    def test_validation(self):
        with pytest.raises(ValueError):
            feature_stats(gaussian_features(8, count=1))
        with pytest.raises(ValueError):
            FeatureStats(np.zeros((2, 2)), np.eye(2), 10)
        with pytest.raises(ValueError):
            FeatureStats(np.zeros(2), np.eye(3), 10)
        asym = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            FeatureStats(np.zeros(2), asym, 10)

    def test_non_psd_rejected_by_frechet(self):
        bad = FeatureStats(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]), 10)
        ok = feature_stats(gaussian_features(9, dim=2))
        with pytest.raises(ValueError):
            frechet_distance(bad, ok)


# ------------------------------------------------------------- diversity

class TestDiversity:
    def test_two_points_exact(self):
        f = np.array([[0.0, 0.0], [3.0, 4.0]])
        assert diversity(f, pairs=100, seed=0) == pytest.approx(5.0, abs=1e-12)

    def test_matches_exhaustive_mean(self):
        f = gaussian_features(10, count=30, dim=3)
        exact = np.mean([np.linalg.norm(f[i] - f[j])
                         for i in range(30) for j in range(30) if i != j])
        est = diversity(f, pairs=60000, seed=1)
        assert est == pytest.approx(exact, rel=0.01)

    def test_deterministic_by_seed(self):
        f = gaussian_features(11, count=50)
        assert diversity(f, seed=3) == diversity(f, seed=3)
        assert diversity(f, seed=3) != diversity(f, seed=4)

    def test_scales_linearly(self):
        f = gaussian_features(12, count=40)
        assert diversity(2.5 * f, seed=0) == pytest.approx(
            2.5 * diversity(f, seed=0), rel=1e-12)

    def test_identical_points_zero(self):
        f = np.ones((10, 4))
        assert diversity(f, seed=0) == 0.0

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            diversity(np.ones((1, 4)))


# ------------------------------------------------------------ psnr/ssim

class TestPSNR:
    def test_identical_is_infinite(self):
        a = (CounterRng(13).uniform((2, 8, 8, 3)) * 255).astype(np.uint8)
        assert psnr(a, a) == math.inf

    def test_uniform_offset_closed_form(self):
        a = np.full((4, 16, 16), 100.0)
        b = a + 10.0
        want = 10 * math.log10(255.0 ** 2 / 100.0)
        assert psnr(a, b) == pytest.approx(want, abs=1e-9)

    def test_unit_range(self):
        a = np.zeros((2, 4, 4))
        b = np.full((2, 4, 4), 0.1)
        want = 10 * math.log10(1.0 / 0.01)
        assert psnr(a, b, max_value=1.0) == pytest.approx(want, abs=1e-9)

    def test_symmetric(self):
        a = CounterRng(14).uniform((2, 8, 8)) * 255
        b = CounterRng(15).uniform((2, 8, 8)) * 255
        assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))


class TestSSIM:
    def test_self_similarity_is_one(self):
        a = (CounterRng(16).uniform((3, 16, 16, 3)) * 255).astype(np.uint8)
        assert ssim(a, a) == 1.0

    def test_tiny_image_window_shrinks(self):
        a = (CounterRng(17).uniform((1, 4, 4)) * 255).astype(np.uint8)
        assert ssim(a, a) == 1.0

    def test_symmetric(self):
        a = CounterRng(18).uniform((2, 16, 16)) * 255
        b = CounterRng(19).uniform((2, 16, 16)) * 255
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_bounded_and_ordered(self):
        """More noise always lowers SSIM; values stay in [-1, 1]."""
        a = CounterRng(20).uniform((2, 16, 16)) * 255
        noise = CounterRng(21).normal((2, 16, 16))
        vals = [ssim(a, a + s * noise) for s in (5.0, 20.0, 60.0)]
        assert all(-1.0 <= v <= 1.0 for v in vals)
        assert vals[0] > vals[1] > vals[2]

    def test_luminance_shift_penalized(self):
        a = np.full((1, 16, 16), 100.0)
        assert ssim(a, a + 50.0) < 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((2, 8, 8)), np.zeros((2, 8, 9)))


# ----------------------------------------------------------- autoencoder

def corpus_pose_stack(num_clips, seed=23, frames=24):
    cfg = SyntheticCorpusConfig(num_clips=num_clips, frames_per_clip=frames,
                                keypoints=16, audio_dim=4, image_size=(32, 32),
                                seed=seed)
    clips = generate_corpus(cfg)
    return np.stack([c.poses.data for c in clips])


class TestPoseAutoencoder:
    def test_training_deterministic(self):
        poses = corpus_pose_stack(100)
        a = train_pose_autoencoder(poses, epochs=3, seed=5)
        b = train_pose_autoencoder(poses, epochs=3, seed=5)
        assert np.array_equal(a.encode(poses), b.encode(poses))
        assert a.history == b.history

    def test_loss_history_decreases(self):
        poses = corpus_pose_stack(120)
        ae = train_pose_autoencoder(poses, epochs=12, seed=0)
        assert len(ae.history) == 12
        assert ae.history[-1] < 0.7 * ae.history[0]

    def test_encode_shape(self):
        poses = corpus_pose_stack(100)
        ae = train_pose_autoencoder(poses, latent_dim=16, epochs=2, seed=1)
        z = ae.encode(poses[:10])
        assert z.shape == (10, 16) and z.dtype == np.float64

    def test_min_clips_enforced(self):
        poses = corpus_pose_stack(40)
        with pytest.raises(ValueError):
            train_pose_autoencoder(poses, epochs=1)
        train_pose_autoencoder(poses, epochs=1, min_clips=40)

    def test_reconstruction_better_than_mean_baseline(self):
        poses = corpus_pose_stack(150)
        ae = train_pose_autoencoder(poses, epochs=20, seed=2)
        mse = ae.reconstruction_mse(poses)
        # standardized inputs make predicting zero a unit-variance baseline
        assert mse < 0.7


class TestFGDBehavesOnPoseCorpora:
    """The distance must separate clean from corrupted pose sets and grow
    with the corruption level when noise is added in pose space."""

    def encode_sets(self):
        poses = corpus_pose_stack(220, seed=29)
        ae = train_pose_autoencoder(poses[:120], epochs=10, seed=0)
        real = ae.encode(poses[:120])
        held = ae.encode(poses[120:])
        noisy = {}
        for sigma in (0.05, 0.1, 0.2):
            bent = np.stack([
                add_pose_noise(PoseSequence(p), sigma, seed=100 + i).data
                for i, p in enumerate(poses[120:])])
            noisy[sigma] = ae.encode(bent)
        return real, held, noisy

    def test_split_below_noise_and_monotone(self):
        real, held, noisy = self.encode_sets()
        base = feature_stats(real)
        d_split = frechet_distance(base, feature_stats(held))
        d_noise = [frechet_distance(base, feature_stats(noisy[s]))
                   for s in (0.05, 0.1, 0.2)]
        assert d_split < d_noise[0]
        assert d_noise[0] < d_noise[1] < d_noise[2]
