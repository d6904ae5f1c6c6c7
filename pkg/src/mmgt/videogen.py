"""Stage II: motion-mask-guided latent video diffusion.

A toy UNet denoises space-to-depth latents of 64x64 clips. Every block
stack runs a residual conv (timestep-conditioned), spatial attention with
reference-frame features as extra keys/values, masked hierarchical audio
attention (per-frame audio cross-attention followed by three per-region
adapters over the mask pyramid level that matches the block's resolution),
and temporal attention across frames. All convolutions are per-frame 2D,
so frames only interact inside temporal attention.

Conditioning modalities (audio, pose features, masks, reference, speaker
context) can each be replaced by a learned null embedding; training drops
each independently with probability 0.05, inference never drops any.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .core import AudioFeatureSequence
from .io import Checkpoint
from .losses import latent_eps_loss
from .maskgen import MaskPyramid, default_pyramid_levels
from .rng import CounterRng
from .smga import DiffusionSchedule, _attend, timestep_embedding

_REGIONS = ("face_hands", "lips", "background")


# ------------------------------------------------------------ toy codec

@dataclass
class LatentVideo:
    """Space-to-depth latent frames (N, 3*scale^2, H/scale, W/scale)."""

    data: torch.Tensor
    scale: int = 8

    def __post_init__(self):
        if self.data.dim() != 4:
            raise ValueError(f"latent video must be (N, Cz, h, w), got {tuple(self.data.shape)}")
        if self.data.shape[1] != 3 * self.scale * self.scale:
            raise ValueError(f"channel count {self.data.shape[1]} != 3*scale^2 = {3 * self.scale ** 2}")


def toy_encode(video: torch.Tensor, scale: int = 8) -> LatentVideo:
    """Exactly invertible space-to-depth rearrangement of (N, 3, H, W)."""
    video = torch.as_tensor(video)
    if video.dim() != 4 or video.shape[1] != 3:
        raise ValueError(f"expected (N, 3, H, W), got {tuple(video.shape)}")
    n, _, height, width = video.shape
    if height % scale or width % scale:
        raise ValueError(f"frame size {(height, width)} not divisible by scale {scale}")
    h, w = height // scale, width // scale
    z = video.reshape(n, 3, h, scale, w, scale)
    z = z.permute(0, 1, 3, 5, 2, 4).reshape(n, 3 * scale * scale, h, w)
    return LatentVideo(z.contiguous(), scale=scale)


def toy_decode(latent: LatentVideo) -> torch.Tensor:
    z, scale = latent.data, latent.scale
    n, _, h, w = z.shape
    v = z.reshape(n, 3, scale, scale, h, w)
    v = v.permute(0, 1, 4, 2, 5, 3).reshape(n, 3, h * scale, w * scale)
    return v.contiguous()


def video_to_tensor(frames: np.ndarray) -> torch.Tensor:
    """uint8 (N, H, W, 3) -> float (N, 3, H, W) in [0, 1]."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError(f"expected (N, H, W, 3) frames, got {frames.shape}")
    t = torch.from_numpy(frames.astype(np.float32) / 255.0)
    return t.permute(0, 3, 1, 2).contiguous()


def tensor_to_video(t: torch.Tensor) -> np.ndarray:
    arr = t.detach().permute(0, 2, 3, 1).numpy()
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- config

@dataclass
class VideoGenConfig:
    image_size: tuple = (64, 64)
    scale: int = 8
    clip_len: int = 12
    audio_dim: int = 4
    channels: tuple = (48, 64, 96)
    heads: int = 4
    t_dim: int = 128
    ctx_dim: int = 16
    num_speakers: int = 4
    max_frames: int = 64
    use_temporal_pe: bool = True
    identity_adapters: bool = False

    def __post_init__(self):
        h, w = self.image_size
        if h % self.scale or w % self.scale:
            raise ValueError("image size must be divisible by scale")
        lh, lw = h // self.scale, w // self.scale
        if lh % 4 or lw % 4:
            raise ValueError("latent size must be divisible by 4 (two downsamplings)")
        if len(self.channels) != 3:
            raise ValueError("channels must list (down1, down2, mid) widths")
        if any(c % 8 for c in self.channels):
            raise ValueError("channel widths must be divisible by 8 (group norm)")
        if self.clip_len > self.max_frames:
            raise ValueError("clip_len exceeds max_frames")

    @property
    def latent_channels(self) -> int:
        return 3 * self.scale * self.scale

    @property
    def latent_size(self) -> tuple:
        return (self.image_size[0] // self.scale, self.image_size[1] // self.scale)

    def pyramid_levels(self) -> list:
        return default_pyramid_levels(*self.latent_size)

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "scale": self.scale,
            "clip_len": self.clip_len,
            "audio_dim": self.audio_dim,
            "channels": list(self.channels),
            "heads": self.heads,
            "t_dim": self.t_dim,
            "ctx_dim": self.ctx_dim,
            "num_speakers": self.num_speakers,
            "max_frames": self.max_frames,
            "use_temporal_pe": self.use_temporal_pe,
            "identity_adapters": self.identity_adapters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VideoGenConfig":
        d = dict(d)
        d["image_size"] = tuple(d["image_size"])
        d["channels"] = tuple(d["channels"])
        return cls(**d)


# --------------------------------------------------------------- bundle

@dataclass
class ConditioningBundle:
    """Everything the denoiser is conditioned on, time-aligned over N frames.

    mask_levels maps each region to one [0,1] tensor (N, h_i, w_i) per
    pyramid level, largest first.
    """

    reference_latent: torch.Tensor
    pose_features: torch.Tensor
    mask_levels: dict
    audio: torch.Tensor
    context: torch.Tensor

    def __post_init__(self):
        n = self.pose_features.shape[0]
        if self.audio.shape[0] != n:
            raise ValueError(f"audio length {self.audio.shape[0]} != frame count {n}")
        if set(self.mask_levels) != set(_REGIONS):
            raise ValueError(f"mask regions must be {_REGIONS}, got {sorted(self.mask_levels)}")
        counts = {len(v) for v in self.mask_levels.values()}
        if len(counts) != 1:
            raise ValueError("all regions must carry the same number of pyramid levels")
        for region, levels in self.mask_levels.items():
            for lv in levels:
                if lv.shape[0] != n:
                    raise ValueError(f"{region} mask level length {lv.shape[0]} != {n}")
                flat = lv.detach()
                if float(flat.min()) < 0 or float(flat.max()) > 1:
                    raise ValueError(f"{region} mask values must lie in [0, 1]")

    @property
    def num_frames(self) -> int:
        return self.pose_features.shape[0]

    def masks_at(self, level: int) -> torch.Tensor:
        """Stacked (N, 3, h, w) region masks for one pyramid level."""
        return torch.stack([self.mask_levels[r][level] for r in _REGIONS], dim=1)


# -------------------------------------------------------------- modules

class ResConvBlock(nn.Module):
    """Pre-activation residual conv pair with a timestep shift."""

    def __init__(self, cin: int, cout: int, t_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.t_proj = nn.Linear(t_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.t_proj(t_emb)[None, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return self.skip(x) + h


class SpatialAttention(nn.Module):
    """Per-frame attention over the token grid, with the reference frame's
    feature tokens appended to keys and values."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, ref_feat: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)                 # (N, L, C)
        ref = ref_feat.flatten(1).transpose(0, 1)[None]       # (1, Lr, C)
        kv = torch.cat([tokens, ref.expand(n, -1, -1)], dim=1)
        tn, kvn = self.ln(tokens), self.ln(kv)
        att = _attend(self.q(tn), self.k(kvn), self.v(kvn), self.heads, False)
        tokens = tokens + self.out(att)
        return tokens.transpose(1, 2).reshape(n, c, h, w)


class MMHAAAttention(nn.Module):
    """Per-frame cross-attention: queries from hidden tokens, keys/values
    from that frame's audio tokens."""

    def __init__(self, dim: int, audio_dim: int, heads: int = 1):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(audio_dim, dim, bias=False)
        self.v = nn.Linear(audio_dim, dim, bias=False)

    def forward(self, z_ca: torch.Tensor, fa: torch.Tensor, return_weights: bool = False):
        if fa.dim() == z_ca.dim() - 1:
            fa = fa[..., None, :]  # one audio token per frame
        if fa.shape[-3] != z_ca.shape[-3]:
            raise ValueError(f"time mismatch: {z_ca.shape[-3]} hidden frames vs {fa.shape[-3]} audio frames")
        return _attend(self.q(z_ca), self.k(fa), self.v(fa), self.heads, return_weights)


def mm_haa_cross_attention(z_ca, fa, params: MMHAAAttention, return_weights: bool = False):
    """(N, L, D) tokens x (N, Da) or (N, A, Da) audio -> (N, L, D)."""
    z_ca, fa = torch.as_tensor(z_ca), torch.as_tensor(fa)
    if torch.isnan(z_ca).any() or torch.isnan(fa).any():
        raise ValueError("mm_haa_cross_attention: NaN in input")
    return params(z_ca, fa, return_weights)


class RegionAdapter(nn.Module):
    """Residual 3x3 conv pair without biases, so a zero input maps to zero."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1, bias=False)
        nn.init.zeros_(self.conv2.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(torch.nn.functional.silu(self.conv1(x)))


def mm_haa(z_ca, masks, fa=None, adapters=None) -> torch.Tensor:
    """Masked region mixing: sum of Adapter_r(Z_CA * M_r) over the three
    regions (face+hands, lips, background).

    z_ca: (N, C, h, w); masks: three (N, h, w) tensors in region order, or
    a stacked (N, 3, h, w) tensor. adapters None means identity adapters.
    fa is accepted for call-site symmetry with the attention step that
    produced z_ca; only its time length is checked.
    """
    z_ca = torch.as_tensor(z_ca)
    if isinstance(masks, torch.Tensor) and masks.dim() == 4 and masks.shape[1] == 3:
        masks = [masks[:, i] for i in range(3)]
    masks = [torch.as_tensor(m) for m in masks]
    if len(masks) != 3:
        raise ValueError(f"need exactly 3 region masks, got {len(masks)}")
    for m in masks:
        if m.shape[-2:] != z_ca.shape[-2:] or m.shape[0] != z_ca.shape[0]:
            raise ValueError(f"mask shape {tuple(m.shape)} does not match hidden {tuple(z_ca.shape)}")
    if fa is not None and torch.as_tensor(fa).shape[0] != z_ca.shape[0]:
        raise ValueError("audio/hidden time mismatch")
    out = torch.zeros_like(z_ca)
    for i, m in enumerate(masks):
        masked = z_ca * m[:, None]
        out = out + (masked if adapters is None else adapters[i](masked))
    return out


class MMHAA(nn.Module):
    """Cross-attend to audio per frame, then recombine per-region adapter
    responses over the masked hidden states."""

    def __init__(self, dim: int, audio_dim: int, heads: int = 1, identity_adapters: bool = False):
        super().__init__()
        self.ln = nn.LayerNorm(dim)
        self.attn = MMHAAAttention(dim, audio_dim, heads)
        self.ca_out = nn.Linear(dim, dim)
        nn.init.zeros_(self.ca_out.weight)
        nn.init.zeros_(self.ca_out.bias)
        self.identity_adapters = identity_adapters
        self.adapters = None if identity_adapters else nn.ModuleList(RegionAdapter(dim) for _ in range(3))

    def forward(self, x: torch.Tensor, fa: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        z_ca = tokens + self.ca_out(self.attn(self.ln(tokens), fa))
        z_ca = z_ca.transpose(1, 2).reshape(n, c, h, w)
        return mm_haa(z_ca, masks, fa=fa, adapters=self.adapters)


class TemporalAttention(nn.Module):
    """Attention across the N frames at each spatial location, with a
    learned temporal positional encoding (optional)."""

    def __init__(self, dim: int, heads: int, max_frames: int, use_pe: bool = True):
        super().__init__()
        self.heads = heads
        self.use_pe = use_pe
        self.pe = nn.Parameter(torch.zeros(max_frames, dim))
        if use_pe:
            nn.init.normal_(self.pe, std=0.02)
        self.ln = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        if n > self.pe.shape[0]:
            raise ValueError(f"clip length {n} exceeds max_frames {self.pe.shape[0]}")
        tokens = x.permute(2, 3, 0, 1).reshape(h * w, n, c)
        inner = tokens + self.pe[:n] if self.use_pe else tokens
        inner = self.ln(inner)
        att = _attend(self.q(inner), self.k(inner), self.v(inner), self.heads, False)
        tokens = tokens + self.out(att)
        return tokens.reshape(h, w, n, c).permute(2, 3, 0, 1).contiguous()


class StageBlock(nn.Module):
    """ResConv -> spatial attention -> MM-HAA -> temporal attention."""

    def __init__(self, dim: int, cfg: VideoGenConfig):
        super().__init__()
        self.res = ResConvBlock(dim, dim, cfg.t_dim)
        self.sa = SpatialAttention(dim, cfg.heads)
        self.haa = MMHAA(dim, cfg.audio_dim, cfg.heads, cfg.identity_adapters)
        self.ta = TemporalAttention(dim, cfg.heads, cfg.max_frames, cfg.use_temporal_pe)

    def forward(self, x, t_emb, ref_feat, fa, masks):
        x = self.res(x, t_emb)
        x = self.sa(x, ref_feat)
        x = self.haa(x, fa, masks)
        return self.ta(x)


class PoseGuider(nn.Module):
    """Pixel pose video -> latent-resolution features, zero at init."""

    def __init__(self, latent_channels: int, scale: int = 8):
        super().__init__()
        if scale != 8:
            raise ValueError("pose guider is built for scale 8")
        self.stack = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.final = nn.Conv2d(64, latent_channels, 3, padding=1)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)

    def forward(self, pose_video: torch.Tensor) -> torch.Tensor:
        if pose_video.dim() != 4 or pose_video.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) pose video, got {tuple(pose_video.shape)}")
        return self.final(self.stack(pose_video))


def pose_guider(pose_video, params: PoseGuider) -> torch.Tensor:
    return params(torch.as_tensor(pose_video))


class RefEncoder(nn.Module):
    """Single pass over the reference latent; one feature map per UNet level."""

    def __init__(self, latent_channels: int, channels: tuple):
        super().__init__()
        c1, c2, c3 = channels
        self.conv0 = nn.Conv2d(latent_channels, c1, 3, padding=1)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)

    def forward(self, ref_latent: torch.Tensor) -> list:
        f1 = self.conv0(ref_latent[None])[0]
        f2 = self.down1(torch.nn.functional.silu(f1[None]))[0]
        f3 = self.down2(torch.nn.functional.silu(f2[None]))[0]
        return [f1, f2, f3]


# ----------------------------------------------------------------- model

class VideoGenModel(nn.Module):
    def __init__(self, config: VideoGenConfig):
        super().__init__()
        self.config = config
        cz = config.latent_channels
        c1, c2, c3 = config.channels
        self.pose_net = PoseGuider(cz, config.scale)
        self.ref_encoder = RefEncoder(cz, config.channels)
        self.time_mlp = nn.Sequential(nn.Linear(64, config.t_dim), nn.SiLU(),
                                      nn.Linear(config.t_dim, config.t_dim))
        self.ctx_proj = nn.Linear(config.ctx_dim, config.t_dim)
        self.in_conv = nn.Conv2d(cz, c1, 3, padding=1)
        self.block_d1 = StageBlock(c1, config)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.block_d2 = StageBlock(c2, config)
        self.down2 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.block_mid = StageBlock(c3, config)
        self.up1 = nn.Conv2d(c3, c2, 3, padding=1)
        self.fuse1 = nn.Conv2d(2 * c2, c2, 1)
        self.block_u1 = StageBlock(c2, config)
        self.up2 = nn.Conv2d(c2, c1, 3, padding=1)
        self.fuse2 = nn.Conv2d(2 * c1, c1, 1)
        self.block_u2 = StageBlock(c1, config)
        self.out_norm = nn.GroupNorm(8, c1)
        self.out_conv = nn.Conv2d(c1, cz, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)
        # the ideal noise estimate is gate(t)*z_t plus a conditioning term,
        # so expose those two scalars directly; zero init keeps a fresh
        # model's output at zero
        self.skip_gate = nn.Sequential(nn.Linear(config.t_dim, config.t_dim // 2), nn.SiLU(),
                                       nn.Linear(config.t_dim // 2, 2))
        nn.init.zeros_(self.skip_gate[-1].weight)
        nn.init.zeros_(self.skip_gate[-1].bias)
        # learned stand-ins for dropped modalities
        self.null_audio = nn.Parameter(torch.zeros(config.audio_dim))
        self.null_pose = nn.Parameter(torch.zeros(cz))
        self.null_ref = nn.Parameter(torch.zeros(cz))
        self.null_mask_logits = nn.Parameter(torch.zeros(3))
        self.speakers = nn.Embedding(config.num_speakers + 1, config.ctx_dim)

    # ------------------------------------------------------ conditioning

    def context_vector(self, speaker_id) -> torch.Tensor:
        """Index 0 of the table is the learned null context."""
        if speaker_id is None:
            idx = 0
        else:
            sid = int(speaker_id)
            if not 0 <= sid < self.config.num_speakers:
                raise ValueError(f"speaker_id {sid} out of range [0, {self.config.num_speakers})")
            idx = sid + 1
        return self.speakers(torch.tensor(idx))

    def null_mask_levels(self, n: int) -> dict:
        levels = self.config.pyramid_levels()
        out = {}
        for i, region in enumerate(_REGIONS):
            const = torch.sigmoid(self.null_mask_logits[i])
            out[region] = [const.expand(n, h, w) for h, w, _ in levels]
        return out

    def build_bundle(
        self,
        reference: torch.Tensor,
        pose_video: torch.Tensor,
        masks: dict,
        audio,
        speaker_id=None,
        drop=frozenset(),
    ) -> ConditioningBundle:
        """Assemble conditioning, replacing any dropped modality by its null.

        reference: (3, H, W) float frame; pose_video: (N, 3, H, W) float;
        masks: region -> MaskPyramid; audio: (N, Da) array or tensor;
        drop: subset of {audio, pose, masks, reference, context}.
        """
        unknown = set(drop) - {"audio", "pose", "masks", "reference", "context"}
        if unknown:
            raise ValueError(f"unknown modalities in drop set: {sorted(unknown)}")
        cz = self.config.latent_channels
        lh, lw = self.config.latent_size
        n = pose_video.shape[0]
        audio_t = torch.as_tensor(np.asarray(audio), dtype=torch.get_default_dtype())
        if audio_t.dim() != 2 or audio_t.shape[0] != n:
            raise ValueError(f"audio must be ({n}, Da), got {tuple(audio_t.shape)}")

        if "reference" in drop:
            ref_lat = self.null_ref[:, None, None].expand(cz, lh, lw)
        else:
            ref_lat = toy_encode(reference[None], self.config.scale).data[0]

        if "pose" in drop:
            pose_feat = self.null_pose[None, :, None, None].expand(n, cz, lh, lw)
        else:
            pose_feat = self.pose_net(pose_video)

        if "masks" in drop:
            mask_levels = self.null_mask_levels(n)
        else:
            if set(masks) != set(_REGIONS):
                raise ValueError(f"mask regions must be {_REGIONS}, got {sorted(masks)}")
            expected = [(h, w) for h, w, _ in self.config.pyramid_levels()]
            mask_levels = {}
            for region, pyr in masks.items():
                sizes = [lv.shape[1:] for lv in pyr.levels]
                if [tuple(s) for s in sizes] != expected:
                    raise ValueError(f"{region} pyramid sizes {sizes} != expected {expected}")
                mask_levels[region] = [torch.as_tensor(lv, dtype=torch.get_default_dtype())
                                       for lv in pyr.levels]

        fa = self.null_audio.expand(n, -1) if "audio" in drop else audio_t
        ctx = self.context_vector(None if "context" in drop else speaker_id)
        return ConditioningBundle(reference_latent=ref_lat, pose_features=pose_feat,
                                  mask_levels=mask_levels, audio=fa, context=ctx)

    # ----------------------------------------------------------- forward

    def denoise(self, z_t: torch.Tensor, t, bundle: ConditioningBundle) -> torch.Tensor:
        if z_t.dim() != 4:
            raise ValueError(f"latent must be (N, Cz, h, w), got {tuple(z_t.shape)}")
        if z_t.shape[0] != bundle.num_frames:
            raise ValueError("latent/conditioning frame counts differ")
        t = torch.as_tensor(t, dtype=z_t.dtype)
        t_base = self.time_mlp(timestep_embedding(t, 64))
        t_emb = t_base + self.ctx_proj(bundle.context)
        gate_z, gate_h = self.skip_gate(t_base)
        fa = bundle.audio
        refs = self.ref_encoder(bundle.reference_latent)
        m0, m1, m2 = (bundle.masks_at(i) for i in range(3))

        h = self.in_conv(z_t + bundle.pose_features)
        d1 = self.block_d1(h, t_emb, refs[0], fa, m0)
        h = self.down1(d1)
        d2 = self.block_d2(h, t_emb, refs[1], fa, m1)
        h = self.down2(d2)
        h = self.block_mid(h, t_emb, refs[2], fa, m2)
        h = self.up1(torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest"))
        h = self.fuse1(torch.cat([h, d2], dim=1))
        h = self.block_u1(h, t_emb, refs[1], fa, m1)
        h = self.up2(torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest"))
        h = self.fuse2(torch.cat([h, d1], dim=1))
        h = self.block_u2(h, t_emb, refs[0], fa, m0)
        out = self.out_conv(torch.nn.functional.silu(self.out_norm(h)))
        return (1.0 + gate_h) * out + gate_z * z_t


def denoising_net(z_t, t, bundle: ConditioningBundle, model: VideoGenModel) -> torch.Tensor:
    z_t = torch.as_tensor(z_t)
    if torch.isnan(z_t).any():
        raise ValueError("denoising_net: NaN in latent input")
    return model.denoise(z_t, t, bundle)


# --------------------------------------------------------------- training

_MODALITIES = ("audio", "pose", "masks", "reference", "context")


def videogen_train_step(
    model: VideoGenModel,
    batch: list,
    schedule: DiffusionSchedule,
    optimizer,
    dropout_p: float = 0.05,
    generator=None,
    forced_drop=frozenset(),
) -> float:
    """One eps-prediction update over a list of clip samples.

    Each sample: dict with pixel_video (N, H, W, 3) uint8 or (N, 3, H, W)
    float, pose_video likewise, masks (region -> MaskPyramid), audio
    (N, Da), speaker_id. The first frame is the reference. Modalities in
    forced_drop are nulled every step, on top of the random dropout.
    """
    if not batch:
        raise ValueError("empty batch")
    total = 0.0
    for sample in batch:
        pix = sample["pixel_video"]
        pix = video_to_tensor(pix) if isinstance(pix, np.ndarray) else torch.as_tensor(pix)
        pose = sample["pose_video"]
        pose = video_to_tensor(pose) if isinstance(pose, np.ndarray) else torch.as_tensor(pose)
        z0 = toy_encode(pix, model.config.scale).data
        drop = {m for m in _MODALITIES
                if float(torch.rand((), generator=generator)) < dropout_p}
        drop |= set(forced_drop)
        bundle = model.build_bundle(pix[0], pose, sample["masks"], sample["audio"],
                                    sample.get("speaker_id"), drop=drop)
        t = int(torch.randint(0, schedule.steps, (), generator=generator))
        eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
        ab = schedule.alpha_bar_at(t)
        z_t = math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps
        pred = model.denoise(z_t, float(t), bundle)
        total = total + latent_eps_loss(eps, pred)
    loss = total / len(batch)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def clip_training_sample(clip, latent_size: tuple) -> dict:
    """Precompute the per-clip training inputs (masks are reused each step)."""
    from .maskgen import layout_masks, mask_pyramid

    h, w = clip.pixel_video.shape[1:3]
    masks_px = layout_masks(clip.poses, clip.layout, h, w)
    levels = default_pyramid_levels(*latent_size)
    pyramids = {
        "face_hands": mask_pyramid(masks_px["face_hands"], levels),
        "lips": mask_pyramid(masks_px["lips"], levels),
        "background": mask_pyramid(masks_px["background"], levels),
    }
    return {
        "pixel_video": video_to_tensor(clip.pixel_video),
        "pose_video": video_to_tensor(clip.pose_video),
        "masks": pyramids,
        "audio": clip.audio.data,
        "speaker_id": clip.speaker_id,
    }


def train_videogen(
    clips: list,
    config: VideoGenConfig,
    schedule: DiffusionSchedule,
    steps: int,
    batch_size: int = 2,
    seed: int = 0,
    lr: float = 1e-5,
    dropout_p: float = 0.05,
    forced_drop=frozenset(),
    mask_transform=None,
    lr_final=None,
) -> tuple:
    """Returns (model, per-step loss history).

    mask_transform, if given, rewrites each clip's mask pyramids before
    training (region -> MaskPyramid dict in, same shape out). lr_final
    turns on a linear learning-rate ramp from lr down to that value.
    """
    if not clips:
        raise ValueError("no clips to train on")
    torch.manual_seed(seed)
    model = VideoGenModel(config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.0)
    gen = torch.Generator().manual_seed(seed + 1)
    picker = CounterRng(seed, stream=0x71DE0)
    samples = [clip_training_sample(c, config.latent_size) for c in clips]
    if mask_transform is not None:
        for s in samples:
            s["masks"] = mask_transform(s["masks"])
    history = []
    for step in range(steps):
        if lr_final is not None and steps > 1:
            cur = lr + (lr_final - lr) * step / (steps - 1)
            for group in optimizer.param_groups:
                group["lr"] = cur
        idx = np.minimum((picker.uniform((batch_size,)) * len(samples)).astype(np.int64),
                         len(samples) - 1)
        batch = [samples[i] for i in idx]
        loss = videogen_train_step(model, batch, schedule, optimizer, dropout_p,
                                   generator=gen, forced_drop=forced_drop)
        history.append({"step": step, "loss": loss})
    return model, history


# --------------------------------------------------------------- sampling

def videogen_sample(
    model: VideoGenModel,
    reference: np.ndarray,
    pose_video: np.ndarray,
    masks: dict,
    fa,
    schedule: DiffusionSchedule,
    seed: int,
    speaker_id=None,
    drop=frozenset(),
) -> np.ndarray:
    """DDIM-sample a pixel video conditioned on one reference frame.

    Frame 0 is pinned to the reference's latent trajectory at every step,
    so the first output frame reproduces the reference image bitwise.
    Random modality dropout is off; drop explicitly nulls named modalities
    (for conditioning ablations). Returns uint8 (N, H, W, 3).
    """
    for name, v in (("reference", reference), ("pose_video", pose_video),
                    ("masks", masks), ("audio features", fa)):
        if v is None:
            raise ValueError(f"missing input: {name}")
    audio = fa.data if isinstance(fa, AudioFeatureSequence) else np.asarray(fa)
    ref_t = video_to_tensor(reference[None])[0]
    pose_t = video_to_tensor(pose_video)
    n = pose_t.shape[0]
    if audio.shape[0] != n:
        raise ValueError(f"audio length {audio.shape[0]} != pose video length {n}")
    cz = model.config.latent_channels
    lh, lw = model.config.latent_size
    dtype = torch.get_default_dtype()
    z = torch.as_tensor(CounterRng(seed).normal((n, cz, lh, lw)), dtype=dtype)
    eps0 = z[0].clone()
    times = schedule.ddim_times()
    model.eval()
    with torch.no_grad():
        bundle = model.build_bundle(ref_t, pose_t, masks, audio, speaker_id, drop=frozenset(drop))
        z_ref = toy_encode(ref_t[None], model.config.scale).data[0]
        for i, t in enumerate(times):
            ab_t = schedule.alpha_bar_at(t)
            z[0] = math.sqrt(ab_t) * z_ref + math.sqrt(1.0 - ab_t) * eps0
            eps_pred = model.denoise(z, float(t), bundle)
            x0 = (z - math.sqrt(1.0 - ab_t) * eps_pred) / math.sqrt(ab_t)
            x0 = x0.clamp(0.0, 1.0)
            t_prev = times[i + 1] if i + 1 < len(times) else -1
            ab_p = schedule.alpha_bar_at(t_prev)
            z = math.sqrt(ab_p) * x0 + math.sqrt(1.0 - ab_p) * eps_pred
        z[0] = z_ref
    pixels = toy_decode(LatentVideo(z, model.config.scale)).clamp(0.0, 1.0)
    return tensor_to_video(pixels)


# ------------------------------------------------------------ checkpoints

def videogen_to_checkpoint(model: VideoGenModel, schedule: DiffusionSchedule) -> Checkpoint:
    from .smga import schedule_to_meta

    blobs = {f"param.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    return Checkpoint(kind="videogen", config=model.config.to_dict(), blobs=blobs,
                      meta={"schedule": schedule_to_meta(schedule)})


def videogen_from_checkpoint(ckpt: Checkpoint) -> tuple:
    from .smga import schedule_from_meta

    if ckpt.kind != "videogen":
        raise ValueError(f"expected a videogen checkpoint, got kind '{ckpt.kind}'")
    config = VideoGenConfig.from_dict(ckpt.config)
    model = VideoGenModel(config)
    state = {k[len("param."):]: torch.from_numpy(v.copy()).to(torch.get_default_dtype())
             for k, v in ckpt.blobs.items() if k.startswith("param.")}
    model.load_state_dict(state)
    return model, schedule_from_meta(ckpt.meta["schedule"])
