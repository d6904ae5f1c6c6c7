"""Stage I: audio-conditioned pose diffusion with two masked motion branches.

The denoiser splits the noisy pose into face and body channel groups,
encodes each with its own linear + learned-positional encoder, runs each
through a stack of motion blocks (residual self-attention, FiLM from
audio + timestep, residual audio cross-attention), then concatenates the
branches, applies one merge FiLM, and projects to the pose dimension. The
network predicts the clean pose x0; the initial-pose conditioning R(p0)
is added to the network input at every denoising step.

One shared conditioning sequence x_i = audio_tokens + MLP(t_embed) feeds
every FiLM site, branch and merge alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .core import AudioFeatureSequence, KeypointLayout, PoseSequence, make_spatial_masks
from .io import Checkpoint
from .losses import LossWeights, smga_loss_terms
from .maskgen import layout_masks
from .rng import CounterRng


# ------------------------------------------------------------- schedule

@dataclass
class DiffusionSchedule:
    """Betas plus derived alphas/alpha_bars and the sampler step count."""

    betas: np.ndarray
    sampler_steps: int = 50
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size < 1:
            raise ValueError("betas must be a nonempty vector")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie strictly in (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not 1 <= self.sampler_steps <= self.steps:
            raise ValueError(f"sampler_steps must be in [1, {self.steps}]")

    @property
    def steps(self) -> int:
        return self.betas.size

    @classmethod
    def cosine(cls, t_train: int = 1000, sampler_steps: int = 50) -> "DiffusionSchedule":
        """Squared-cosine alpha_bar schedule with the usual 0.008 offset."""
        s = 0.008
        t = np.arange(t_train + 1, dtype=np.float64) / t_train
        f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        alpha_bar = f / f[0]
        betas = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], 1e-8, 0.999)
        return cls(betas=betas, sampler_steps=sampler_steps)

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar for 0-based step t; t = -1 means the clean endpoint (1.0)."""
        if t == -1:
            return 1.0
        return float(self.alpha_bars[t])

    def ddim_times(self) -> list:
        """Descending step indices visited by the deterministic sampler."""
        times = np.linspace(0, self.steps - 1, self.sampler_steps)
        return sorted(set(int(round(v)) for v in times), reverse=True)


# ----------------------------------------------------------- net config

@dataclass
class SMGAConfig:
    layout: KeypointLayout
    audio_dim: int
    model_dim: int = 96
    num_heads: int = 4
    pose_dim: int = 0
    blocks_per_branch: int = 2
    max_frames: int = 512
    use_film: bool = True

    def __post_init__(self):
        if self.pose_dim == 0:
            self.pose_dim = self.layout.total_channels * 3
        if self.pose_dim != self.layout.total_channels * 3:
            raise ValueError(f"pose_dim must be Cp*3 = {self.layout.total_channels * 3}")
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if min(self.audio_dim, self.blocks_per_branch, self.max_frames) < 1:
            raise ValueError("config dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "audio_dim": self.audio_dim,
            "model_dim": self.model_dim,
            "num_heads": self.num_heads,
            "pose_dim": self.pose_dim,
            "blocks_per_branch": self.blocks_per_branch,
            "max_frames": self.max_frames,
            "use_film": self.use_film,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SMGAConfig":
        d = dict(d)
        d["layout"] = KeypointLayout.from_dict(d["layout"])
        return cls(**d)


# -------------------------------------------------------------- modules

def timestep_embedding(t, dim: int) -> torch.Tensor:
    """Sinusoidal embedding; accepts a scalar or a (B,) tensor."""
    t = torch.as_tensor(t)
    if not torch.is_floating_point(t):
        t = t.to(torch.get_default_dtype())
    scalar = t.dim() == 0
    if scalar:
        t = t[None]
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb[0] if scalar else emb


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    # (..., N, D) -> (..., heads, N, D/heads)
    return x.unflatten(-1, (heads, x.shape[-1] // heads)).transpose(-3, -2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    return x.transpose(-3, -2).flatten(-2)


def _attend(q, k, v, heads: int, return_weights: bool):
    qh, kh, vh = (_split_heads(x, heads) for x in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    weights = torch.softmax(qh @ kh.transpose(-2, -1) * scale, dim=-1)
    out = _merge_heads(weights @ vh)
    return (out, weights) if return_weights else out


class SelfAttention(nn.Module):
    """softmax(Q K^T / sqrt(d_k)) V over one token sequence."""

    def __init__(self, dim: int, heads: int = 1):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)

    def forward(self, f: torch.Tensor, return_weights: bool = False):
        return _attend(self.q(f), self.k(f), self.v(f), self.heads, return_weights)


class CrossAttention(nn.Module):
    """Queries from the pose branch, keys/values from the audio tokens."""

    def __init__(self, dim: int, heads: int = 1):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)

    def forward(self, f: torch.Tensor, fa: torch.Tensor, return_weights: bool = False):
        if f.shape[-1] != fa.shape[-1]:
            raise ValueError(f"feature dims differ: {f.shape[-1]} vs {fa.shape[-1]}")
        if f.dim() != fa.dim():
            raise ValueError("query and context must have the same rank")
        return _attend(self.q(f), self.k(fa), self.v(fa), self.heads, return_weights)


class FiLM(nn.Module):
    """Per-frame affine modulation; one generator emits gamma and beta."""

    def __init__(self, feature_dim: int, cond_dim: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.generator = nn.Linear(cond_dim, 2 * feature_dim)
        nn.init.normal_(self.generator.weight, std=0.02)
        with torch.no_grad():
            self.generator.bias.copy_(torch.cat([torch.ones(feature_dim), torch.zeros(feature_dim)]))

    def forward(self, feats: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        g = self.generator(cond)
        gamma, beta = g[..., : self.feature_dim], g[..., self.feature_dim :]
        return gamma * feats + beta


def _zero_linear(dim: int) -> nn.Linear:
    lin = nn.Linear(dim, dim)
    nn.init.zeros_(lin.weight)
    nn.init.zeros_(lin.bias)
    return lin


class MotionBlock(nn.Module):
    """Residual self-attention, FiLM, then residual audio cross-attention.

    The attention output projections start at zero, so a fresh block is a
    pure FiLM transform.
    """

    def __init__(self, dim: int, heads: int = 4, use_film: bool = True):
        super().__init__()
        self.use_film = use_film
        self.ln1 = nn.LayerNorm(dim)
        self.sa = SelfAttention(dim, heads)
        self.sa_out = _zero_linear(dim)
        self.film = FiLM(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.ca = CrossAttention(dim, heads)
        self.ca_out = _zero_linear(dim)

    def forward(self, f: torch.Tensor, fa_tokens: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        f = f + self.sa_out(self.sa(self.ln1(f)))
        if self.use_film:
            f = self.film(f, cond)
        f = f + self.ca_out(self.ca(self.ln2(f), fa_tokens))
        return f


# -------------------------------------------------- functional wrappers

def _reject_nan(name: str, *tensors):
    for t in tensors:
        if torch.isnan(t).any():
            raise ValueError(f"{name}: NaN in input")


def self_attention(f, params: SelfAttention, return_weights: bool = False):
    f = torch.as_tensor(f)
    _reject_nan("self_attention", f)
    return params(f, return_weights)


def cross_attention(f, fa, params: CrossAttention, return_weights: bool = False):
    f, fa = torch.as_tensor(f), torch.as_tensor(fa)
    _reject_nan("cross_attention", f, fa)
    return params(f, fa, return_weights)


def film(feats, t_embed, fa, generators: FiLM) -> torch.Tensor:
    """Modulate feats by gamma/beta generated from x_i = fa + t_embed."""
    feats, fa = torch.as_tensor(feats), torch.as_tensor(fa)
    if generators.generator.out_features != 2 * feats.shape[-1]:
        raise ValueError(
            f"generator emits {generators.generator.out_features} values, "
            f"need {2 * feats.shape[-1]} (gamma and beta)")
    return generators(feats, fa + torch.as_tensor(t_embed))


def motion_block(f, fa, t_embed, block: MotionBlock) -> torch.Tensor:
    f, fa = torch.as_tensor(f), torch.as_tensor(fa)
    return block(f, fa, fa + torch.as_tensor(t_embed))


# ---------------------------------------------------------------- network

class SMGANet(nn.Module):
    """The two-branch pose denoiser; predicts the clean pose x0."""

    def __init__(self, config: SMGAConfig):
        super().__init__()
        self.config = config
        cp, d = config.layout.total_channels, config.model_dim
        face, body = make_spatial_masks(config.layout)
        self.register_buffer("face_mask", torch.tensor(face.values, dtype=torch.get_default_dtype()))
        self.register_buffer("body_mask", torch.tensor(body.values, dtype=torch.get_default_dtype()))
        self.audio_proj = nn.Linear(config.audio_dim, d)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.enc_f = nn.Linear(cp * 3, d)
        self.enc_b = nn.Linear(cp * 3, d)
        self.pos_f = nn.Parameter(torch.zeros(config.max_frames, d))
        self.pos_b = nn.Parameter(torch.zeros(config.max_frames, d))
        nn.init.normal_(self.pos_f, std=0.02)
        nn.init.normal_(self.pos_b, std=0.02)
        self.blocks_f = nn.ModuleList(MotionBlock(d, config.num_heads, config.use_film)
                                      for _ in range(config.blocks_per_branch))
        self.blocks_b = nn.ModuleList(MotionBlock(d, config.num_heads, config.use_film)
                                      for _ in range(config.blocks_per_branch))
        self.merge_film = FiLM(2 * d, d)
        self.out_proj = nn.Linear(2 * d, cp * 3)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def _conditioning(self, fa: torch.Tensor, t) -> tuple[torch.Tensor, torch.Tensor]:
        fa_tokens = self.audio_proj(fa)
        t = torch.as_tensor(t, dtype=fa.dtype)
        t_emb = timestep_embedding(t, self.config.model_dim)
        t_cond = self.time_mlp(t_emb)
        if t_cond.dim() == 2:  # batched t: (B, D) -> (B, 1, D)
            t_cond = t_cond[:, None, :]
        return fa_tokens, fa_tokens + t_cond

    def branch_features(self, x_t: torch.Tensor, fa: torch.Tensor, t) -> tuple[torch.Tensor, torch.Tensor]:
        """Final face and body branch features, before the merge block."""
        n = x_t.shape[-3]
        if n > self.config.max_frames:
            raise ValueError(f"sequence length {n} exceeds max_frames {self.config.max_frames}")
        xf = (x_t * self.face_mask[:, None]).flatten(-2)
        xb = (x_t * self.body_mask[:, None]).flatten(-2)
        f = self.enc_f(xf) + self.pos_f[:n]
        b = self.enc_b(xb) + self.pos_b[:n]
        fa_tokens, cond = self._conditioning(fa, t)
        for block in self.blocks_f:
            f = block(f, fa_tokens, cond)
        for block in self.blocks_b:
            b = block(b, fa_tokens, cond)
        return f, b

    def forward(self, x_t: torch.Tensor, fa: torch.Tensor, t) -> torch.Tensor:
        f, b = self.branch_features(x_t, fa, t)
        h = torch.cat([f, b], dim=-1)
        if self.config.use_film:
            _, cond = self._conditioning(fa, t)
            h = self.merge_film(h, cond)
        out = self.out_proj(h)
        return out.reshape(x_t.shape)


def smga_forward(x_t, fa, t, net: SMGANet) -> torch.Tensor:
    """Predict x0 from a noisy pose (N, Cp, 3) or batch (B, N, Cp, 3)."""
    x_t = torch.as_tensor(x_t, dtype=torch.get_default_dtype())
    fa = torch.as_tensor(fa, dtype=x_t.dtype)
    if x_t.shape[-2] != net.config.layout.total_channels or x_t.shape[-1] != 3:
        raise ValueError(f"pose tensor shape {tuple(x_t.shape)} does not match layout")
    if fa.shape[-1] != net.config.audio_dim or fa.shape[-2] != x_t.shape[-3]:
        raise ValueError(f"audio shape {tuple(fa.shape)} does not match poses")
    return net(x_t, fa, t)


# --------------------------------------------------------------- training

def make_optimizer(net: nn.Module, lr: float = 2e-4, weight_decay: float = 0.02):
    return torch.optim.AdamW(net.parameters(), lr=lr, weight_decay=weight_decay)


def smga_train_step(
    net: SMGANet,
    batch: tuple,
    schedule: DiffusionSchedule,
    optimizer,
    weights: LossWeights = LossWeights(),
    generator=None,
) -> dict:
    """One DDPM x0-prediction update; returns the per-term loss values."""
    x0, fa, p0 = (torch.as_tensor(v, dtype=torch.get_default_dtype()) for v in batch)
    if x0.dim() != 4 or x0.shape[0] < 1:
        raise ValueError("batch must be nonempty (B, N, Cp, 3)")
    bsz = x0.shape[0]
    t = torch.randint(0, schedule.steps, (bsz,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    ab = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype)[t][:, None, None, None]
    x_noisy = torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
    x_in = x_noisy + p0[:, None, :, :]
    x0_hat = net(x_in, fa, t)
    terms = smga_loss_terms(x0, x0_hat, net.config.layout, weights)
    optimizer.zero_grad()
    terms["total"].backward()
    optimizer.step()
    return {k: float(v.detach()) for k, v in terms.items()}


def train_smga(
    poses: np.ndarray,
    audio: np.ndarray,
    config: SMGAConfig,
    schedule: DiffusionSchedule,
    steps: int,
    batch_size: int = 256,
    seed: int = 0,
    lr: float = 2e-4,
    weight_decay: float = 0.02,
    weights: LossWeights = LossWeights(),
) -> tuple[SMGANet, list]:
    """Train on stacked clips: poses (M, N, Cp, 3), audio (M, N, Da).

    Returns the net and a per-step history of loss terms.
    """
    poses = np.asarray(poses, dtype=np.float32)
    audio = np.asarray(audio, dtype=np.float32)
    if poses.ndim != 4 or audio.ndim != 3 or poses.shape[0] != audio.shape[0]:
        raise ValueError("need stacked clips: poses (M, N, Cp, 3), audio (M, N, Da)")
    torch.manual_seed(seed)
    net = SMGANet(config)
    optimizer = make_optimizer(net, lr=lr, weight_decay=weight_decay)
    gen = torch.Generator().manual_seed(seed + 1)
    picker = CounterRng(seed, stream=0x5E1EC7)
    poses_t = torch.from_numpy(poses)
    audio_t = torch.from_numpy(audio)
    m = poses.shape[0]
    history = []
    for step in range(steps):
        idx = np.minimum((picker.uniform((batch_size,)) * m).astype(np.int64), m - 1)
        batch = (poses_t[idx], audio_t[idx], poses_t[idx, 0])
        terms = smga_train_step(net, batch, schedule, optimizer, weights, generator=gen)
        history.append({"step": step, **terms})
    return net, history


# --------------------------------------------------------------- sampling

def smga_sample(
    net: SMGANet,
    p0: np.ndarray,
    fa: AudioFeatureSequence,
    schedule: DiffusionSchedule,
    seed: int,
    mask_size: tuple = (64, 64),
) -> tuple[PoseSequence, dict]:
    """Deterministic DDIM sampling plus motion masks for the result.

    p0: initial pose (Cp, 3). The conditioning R(p0) is rebuilt and added
    to the network input at every step; the sampled confidence column is
    replaced by p0's (confidence is conditioning, not motion). Bit-stable
    for a given seed.
    """
    layout = net.config.layout
    cp = layout.total_channels
    p0 = np.asarray(p0, dtype=np.float64)
    if p0.shape != (cp, 3):
        raise ValueError(f"p0 must be ({cp}, 3), got {p0.shape}")
    n = fa.num_frames
    if fa.dim != net.config.audio_dim:
        raise ValueError(f"audio dim {fa.dim} != config {net.config.audio_dim}")
    dtype = torch.get_default_dtype()
    fa_t = torch.as_tensor(fa.data, dtype=dtype)
    p0_t = torch.as_tensor(p0, dtype=dtype)
    z = torch.as_tensor(CounterRng(seed).normal((n, cp, 3)), dtype=dtype)
    times = schedule.ddim_times()
    net.eval()
    with torch.no_grad():
        for i, t in enumerate(times):
            t_prev = times[i + 1] if i + 1 < len(times) else -1
            x0_hat = net(z + p0_t, fa_t, torch.as_tensor(float(t)))
            ab_t = schedule.alpha_bar_at(t)
            ab_p = schedule.alpha_bar_at(t_prev)
            eps_hat = (z - math.sqrt(ab_t) * x0_hat) / math.sqrt(1.0 - ab_t)
            if ab_p == 1.0:
                z = x0_hat
            else:
                z = math.sqrt(ab_p) * x0_hat + math.sqrt(1.0 - ab_p) * eps_hat
    out = z.numpy().astype(np.float64)
    out[:, :, 2] = p0[:, 2]
    poses = PoseSequence(out, fps=fa.fps)
    masks = layout_masks(poses, layout, mask_size[0], mask_size[1])
    return poses, masks


# ------------------------------------------------------------ checkpoints

def schedule_to_meta(schedule: DiffusionSchedule) -> dict:
    """Schedule for a checkpoint's JSON header. Betas stay float64 there
    (JSON round-trips doubles exactly; the float32 blob store would not)."""
    return {"betas": [float(b) for b in schedule.betas],
            "sampler_steps": schedule.sampler_steps}


def schedule_from_meta(meta: dict) -> DiffusionSchedule:
    return DiffusionSchedule(betas=np.asarray(meta["betas"], dtype=np.float64),
                             sampler_steps=int(meta["sampler_steps"]))


def smga_to_checkpoint(net: SMGANet, schedule: DiffusionSchedule) -> Checkpoint:
    blobs = {f"param.{k}": v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    return Checkpoint(
        kind="smga",
        config=net.config.to_dict(),
        blobs=blobs,
        meta={"schedule": schedule_to_meta(schedule)},
    )


def smga_from_checkpoint(ckpt: Checkpoint) -> tuple[SMGANet, DiffusionSchedule]:
    if ckpt.kind != "smga":
        raise ValueError(f"expected an smga checkpoint, got kind '{ckpt.kind}'")
    config = SMGAConfig.from_dict(ckpt.config)
    net = SMGANet(config)
    state = {k[len("param."):]: torch.from_numpy(v.copy()) for k, v in ckpt.blobs.items()
             if k.startswith("param.")}
    net.load_state_dict({k: v.to(torch.get_default_dtype()) for k, v in state.items()})
    return net, schedule_from_meta(ckpt.meta["schedule"])
