"""Pose-sequence training losses and the latent diffusion objective.

Reduction convention: squared error is summed over channels/coordinates,
averaged over the time horizon each term naturally has (T, T-1 or T-2
differences), then averaged over any leading batch dimension.

Inputs may be (T,), (T, K), (T, C, D) or batched (B, T, C, D); a 3-D
tensor is always read as a single unbatched (T, C, D) sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import KeypointLayout, SpatialMask, make_spatial_masks


@dataclass(frozen=True)
class LossWeights:
    """Relative weight of the face and body loss terms."""

    lambda_f: float = 3.0
    lambda_b: float = 1.0

    def __post_init__(self):
        if self.lambda_f < 0 or self.lambda_b < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_f == 0 and self.lambda_b == 0:
            raise ValueError("at least one loss weight must be positive")


def _paired(x, y) -> tuple[torch.Tensor, torch.Tensor]:
    x, y = torch.as_tensor(x), torch.as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return x, y


def _as_btk(x: torch.Tensor) -> torch.Tensor:
    """Normalize to (batch, time, features)."""
    if x.dim() == 1:
        return x[None, :, None]
    if x.dim() == 2:
        return x[None]
    if x.dim() == 3:
        return x.reshape(1, x.shape[0], -1)
    if x.dim() == 4:
        return x.reshape(x.shape[0], x.shape[1], -1)
    raise ValueError(f"unsupported loss input rank {x.dim()}")


def rec_loss(x, x_hat) -> torch.Tensor:
    """Mean-over-time of the squared error summed per frame."""
    xb, yb = map(_as_btk, _paired(x, x_hat))
    return ((xb - yb) ** 2).sum(-1).mean()


def vel_loss(x, x_hat) -> torch.Tensor:
    """Squared error between first temporal differences."""
    xb, yb = map(_as_btk, _paired(x, x_hat))
    if xb.shape[1] < 2:
        raise ValueError("velocity loss needs at least 2 frames")
    dx = xb[:, 1:] - xb[:, :-1]
    dy = yb[:, 1:] - yb[:, :-1]
    return ((dx - dy) ** 2).sum(-1).mean()


def acc_loss(x, x_hat) -> torch.Tensor:
    """Squared error between second temporal differences."""
    xb, yb = map(_as_btk, _paired(x, x_hat))
    if xb.shape[1] < 3:
        raise ValueError("acceleration loss needs at least 3 frames")
    ddx = xb[:, 2:] - 2 * xb[:, 1:-1] + xb[:, :-2]
    ddy = yb[:, 2:] - 2 * yb[:, 1:-1] + yb[:, :-2]
    return ((ddx - ddy) ** 2).sum(-1).mean()


def _masked(x: torch.Tensor, mask: SpatialMask) -> torch.Tensor:
    if x.dim() not in (3, 4):
        raise ValueError("region losses need (T, C, D) or (B, T, C, D) input")
    if x.shape[-2] != len(mask):
        raise ValueError(f"mask length {len(mask)} != channel count {x.shape[-2]}")
    m = torch.as_tensor(mask.values, dtype=x.dtype, device=x.device)
    return x * m[:, None]


def region_loss_terms(x, x_hat, mask: SpatialMask) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(rec, vel, acc) over the masked channel subset."""
    if not mask.values.any():
        raise ValueError("region mask selects no channels")
    x, x_hat = _paired(x, x_hat)
    xm, ym = _masked(x, mask), _masked(x_hat, mask)
    return rec_loss(xm, ym), vel_loss(xm, ym), acc_loss(xm, ym)


def region_loss(x, x_hat, mask: SpatialMask) -> torch.Tensor:
    """rec + vel + acc restricted to the masked channels."""
    rec, vel, acc = region_loss_terms(x, x_hat, mask)
    return rec + vel + acc


def total_smga_loss(
    x, x_hat, layout: KeypointLayout, weights: LossWeights = LossWeights()
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Weighted sum of face and body region losses: (total, face, body).

    The confidence coordinate is dropped unless the layout marks it
    trainable.
    """
    x, x_hat = _paired(x, x_hat)
    if x.shape[-1] != 3:
        raise ValueError(f"pose tensors must end in (x, y, conf), got {tuple(x.shape)}")
    if not layout.train_confidence:
        x, x_hat = x[..., :2], x_hat[..., :2]
    face_mask, body_mask = make_spatial_masks(layout)
    loss_f = region_loss(x, x_hat, face_mask)
    loss_b = region_loss(x, x_hat, body_mask)
    total = weights.lambda_f * loss_f + weights.lambda_b * loss_b
    return total, loss_f, loss_b


def smga_loss_terms(
    x, x_hat, layout: KeypointLayout, weights: LossWeights = LossWeights()
) -> dict[str, torch.Tensor]:
    """Full per-term breakdown used for loss-curve logging."""
    x, x_hat = _paired(x, x_hat)
    if not layout.train_confidence:
        x, x_hat = x[..., :2], x_hat[..., :2]
    face_mask, body_mask = make_spatial_masks(layout)
    rec_f, vel_f, acc_f = region_loss_terms(x, x_hat, face_mask)
    rec_b, vel_b, acc_b = region_loss_terms(x, x_hat, body_mask)
    loss_f = rec_f + vel_f + acc_f
    loss_b = rec_b + vel_b + acc_b
    return {
        "rec_f": rec_f, "vel_f": vel_f, "acc_f": acc_f,
        "rec_b": rec_b, "vel_b": vel_b, "acc_b": acc_b,
        "loss_f": loss_f, "loss_b": loss_b,
        "total": weights.lambda_f * loss_f + weights.lambda_b * loss_b,
    }


def latent_eps_loss(eps, eps_pred) -> torch.Tensor:
    """Mean squared error over every latent element."""
    eps, eps_pred = _paired(eps, eps_pred)
    return ((eps - eps_pred) ** 2).mean()
