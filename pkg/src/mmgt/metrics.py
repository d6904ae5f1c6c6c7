"""Desk-scale evaluation metrics.

Gesture metrics (Frechet distance, diversity) operate in the latent space
of a small pose autoencoder trained on corpus windows.  Pixel metrics
(PSNR, SSIM) compare rendered videos directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch
from scipy.signal import convolve2d
from torch import nn

from .rng import CounterRng

__all__ = [
    "FeatureStats",
    "PoseAutoencoder",
    "train_pose_autoencoder",
    "feature_stats",
    "frechet_distance",
    "diversity",
    "psnr",
    "ssim",
]

_EIG_TOL = 1e-8


# -------------------------------------------------------- feature space

class _AutoencoderNet(nn.Module):
    def __init__(self, in_dim, hidden_dim, latent_dim):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Linear(in_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, latent_dim),
        )
        self.decoder = nn.Sequential(
            nn.Linear(latent_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, in_dim),
        )

    def forward(self, x):
        return self.decoder(self.encoder(x))


@dataclass
class PoseAutoencoder:
    """Trained encoder plus the input normalization it was fit with."""

    net: _AutoencoderNet
    input_mean: np.ndarray
    input_std: np.ndarray
    latent_dim: int
    history: List[float] = field(default_factory=list)

    def _flatten(self, poses: np.ndarray) -> np.ndarray:
        feats = _pose_features(poses)
        if feats.shape[1] != self.input_mean.shape[0]:
            raise ValueError(
                f"pose window size {feats.shape[1]} does not match the "
                f"trained size {self.input_mean.shape[0]}"
            )
        return (feats - self.input_mean) / self.input_std

    def encode(self, poses: np.ndarray) -> np.ndarray:
        """Map (M, N, Cp, 3) pose clips to (M, latent_dim) features."""
        x = torch.from_numpy(self._flatten(poses).astype(np.float32))
        with torch.no_grad():
            z = self.net.encoder(x)
        return z.double().numpy()

    def reconstruction_mse(self, poses: np.ndarray) -> float:
        x = torch.from_numpy(self._flatten(poses).astype(np.float32))
        with torch.no_grad():
            y = self.net(x)
        return float(torch.mean((y - x) ** 2))


def _pose_features(poses: np.ndarray) -> np.ndarray:
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 4 or poses.shape[-1] != 3:
        raise ValueError(f"expected pose clips shaped (M, N, Cp, 3), got {poses.shape}")
    # confidence is conditioning, not motion; only xy enters the feature space
    xy = poses[..., :2]
    return xy.reshape(poses.shape[0], -1)


def train_pose_autoencoder(poses, *, latent_dim=32, hidden_dim=128, epochs=30,
                           batch_size=64, lr=1e-3, seed=0,
                           min_clips=100) -> PoseAutoencoder:
    """Fit a small MLP autoencoder on flattened per-clip pose windows.

    Deterministic given ``seed``.  ``history`` records the mean training
    MSE per epoch in normalized feature space.
    """
    feats = _pose_features(poses)
    m = feats.shape[0]
    if m < min_clips:
        raise ValueError(f"autoencoder training needs at least {min_clips} clips, got {m}")
    mean = feats.mean(axis=0)
    std = np.maximum(feats.std(axis=0), 1e-6)
    x_all = torch.from_numpy(((feats - mean) / std).astype(np.float32))

    torch.manual_seed(seed)
    net = _AutoencoderNet(feats.shape[1], hidden_dim, latent_dim)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    order_gen = torch.Generator().manual_seed(seed + 1)

    history = []
    for _ in range(epochs):
        perm = torch.randperm(m, generator=order_gen)
        total = 0.0
        for start in range(0, m, batch_size):
            batch = x_all[perm[start:start + batch_size]]
            recon = net(batch)
            loss = torch.mean((recon - batch) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.detach().item() * batch.shape[0]
        history.append(total / m)

    net.eval()
    return PoseAutoencoder(net=net, input_mean=mean, input_std=std,
                           latent_dim=latent_dim, history=history)


# ----------------------------------------------------- Frechet distance

@dataclass(frozen=True)
class FeatureStats:
    """Gaussian summary of a feature cloud: mean, covariance, sample count."""

    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"cov shape {cov.shape} does not match mean dim {mean.shape[0]}")
        if self.count < 2:
            raise ValueError(f"need at least 2 samples, got {self.count}")
        if not np.allclose(cov, cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def feature_stats(features: np.ndarray) -> FeatureStats:
    """Sample mean and covariance of an (M, D) feature array."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"expected (M, D) features, got shape {features.shape}")
    if features.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {features.shape[0]}")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    cov = np.atleast_2d(cov)
    return FeatureStats(mean=mean, cov=cov, count=features.shape[0])


def _psd_eigh(cov: np.ndarray, label: str):
    vals, vecs = np.linalg.eigh(cov)
    floor = -_EIG_TOL * max(1.0, float(np.abs(vals).max()))
    if float(vals.min()) < floor:
        raise ValueError(f"{label} covariance is not positive semidefinite "
                         f"(min eigenvalue {vals.min():.3e})")
    return np.clip(vals, 0.0, None), vecs


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Gaussian Frechet (2-Wasserstein) distance between two stats.

    ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with the matrix
    square root taken through symmetric eigendecompositions.
    """
    if a.dim != b.dim:
        raise ValueError(f"feature dims differ: {a.dim} vs {b.dim}")
    va, ua = _psd_eigh(a.cov, "first")
    _psd_eigh(b.cov, "second")
    sqrt_a = (ua * np.sqrt(va)) @ ua.T
    # sqrt_a @ Sb @ sqrt_a is symmetric PSD and shares eigenvalues with Sa Sb
    inner = sqrt_a @ b.cov @ sqrt_a
    inner_vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = float(np.sqrt(np.clip(inner_vals, 0.0, None)).sum())
    diff = a.mean - b.mean
    value = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * trace_sqrt
    return max(value, 0.0)


def diversity(features: np.ndarray, *, pairs=2048, seed=0) -> float:
    """Mean Euclidean distance over seeded random sample pairs."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"expected (M, D) features, got shape {features.shape}")
    m = features.shape[0]
    if m < 2:
        raise ValueError(f"diversity needs at least 2 samples, got {m}")
    if pairs < 1:
        raise ValueError("pairs must be positive")
    rng = CounterRng(seed, stream=0xD1EF)
    total = 0.0
    for _ in range(pairs):
        i = min(int(rng.uniform() * m), m - 1)
        j = min(int(rng.uniform() * (m - 1)), m - 2)
        if j >= i:
            j += 1
        total += float(np.linalg.norm(features[i] - features[j]))
    return total / pairs


# --------------------------------------------------------- pixel metrics

def _as_frames(video: np.ndarray) -> np.ndarray:
    v = np.asarray(video, dtype=np.float64)
    if v.ndim == 2:
        return v[None, :, :, None]
    if v.ndim == 3:
        return v[:, :, :, None]
    if v.ndim == 4:
        return v
    raise ValueError(f"expected an image or video array, got shape {video.shape}")


def psnr(a, b, max_value=255.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(max_value * max_value / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, max_value=255.0, window_size=11, sigma=1.5) -> float:
    """Mean structural similarity with a Gaussian window (K1=0.01, K2=0.03).

    The window shrinks to fit images smaller than ``window_size``; local
    statistics are taken at valid (fully covered) positions only.
    """
    fa = _as_frames(a)
    fb = _as_frames(b)
    if fa.shape != fb.shape:
        raise ValueError(f"shape mismatch: {np.asarray(a).shape} vs {np.asarray(b).shape}")
    h, w = fa.shape[1], fa.shape[2]
    size = min(window_size, h, w)
    if size % 2 == 0:
        size -= 1
    if size < 1:
        raise ValueError("images too small for any SSIM window")
    kernel = _gaussian_kernel(size, sigma)

    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2

    def smooth(img):
        return convolve2d(img, kernel, mode="valid")

    values = []
    for n in range(fa.shape[0]):
        for c in range(fa.shape[3]):
            x = fa[n, :, :, c]
            y = fb[n, :, :, c]
            mu_x = smooth(x)
            mu_y = smooth(y)
            var_x = smooth(x * x) - mu_x * mu_x
            var_y = smooth(y * y) - mu_y * mu_y
            cov_xy = smooth(x * y) - mu_x * mu_y
            num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov_xy + c2)
            den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
            values.append(num / den)
    return float(np.mean(values))
