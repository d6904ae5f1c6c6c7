"""Motion masks from keypoints, step by step.

Builds a short pose sequence of a figure raising one hand, derives the
per-region bounding-box masks, combines them into the standard region set,
and collapses them into the multi-resolution pyramids the video stage
consumes. Mask frames are written to demos/out/masks/.
"""

from pathlib import Path

import numpy as np

from mmgt.core import PoseSequence, toy_layout
from mmgt.io import save_mask_video
from mmgt.maskgen import default_pyramid_levels, layout_masks, mask_pyramid

OUT = Path(__file__).parent / "out" / "masks"


def waving_poses(frames=12):
    layout = toy_layout(16)
    base = np.full((16, 3), 0.5)
    base[:, 2] = 1.0
    for i, idx in enumerate(layout.face):
        base[idx, :2] = [0.40 + 0.025 * i, 0.18 + 0.02 * i]
    for i, idx in enumerate(layout.body):
        base[idx, :2] = [0.35 + 0.04 * i, 0.55 + 0.02 * (i % 4)]
    seq = np.repeat(base[None], frames, axis=0)
    t = np.linspace(0.0, 1.0, frames)
    for idx in layout.right_hand:
        seq[:, idx, 1] = 0.75 - 0.45 * t  # the wave: right hand travels up
        seq[:, idx, 0] = 0.72 + 0.03 * np.sin(6.0 * t)
    return PoseSequence(seq, fps=25.0), layout


def main():
    poses, layout = waving_poses()
    masks = layout_masks(poses, layout, 64, 64)

    print("region coverage (fraction of pixels active, first vs last frame)")
    for name, mv in sorted(masks.items()):
        first = mv.data[0].mean() / 255.0
        last = mv.data[-1].mean() / 255.0
        print(f"  {name:11s} {first:6.3f} -> {last:6.3f}")
        save_mask_video(OUT / name, mv)
    print(f"wrote mask frames to {OUT}")

    union = np.maximum(masks["face"].data, masks["hands"].data)
    assert np.array_equal(union, masks["face_hands"].data)
    assert (masks["face_hands"].data.astype(int) + masks["background"].data == 255).all()
    print("checked: face_hands is the union, background its exact complement")

    levels = default_pyramid_levels(8, 8)
    pyr = mask_pyramid(masks["face_hands"], levels)
    print("pyramid levels for an 8x8 latent grid:")
    for lv, sigma in zip(pyr.levels, pyr.blur_sigma):
        print(f"  {lv.shape[1]}x{lv.shape[2]}  blur sigma {sigma:g}  "
              f"mean {lv.mean():.3f}  range [{lv.min():.2f}, {lv.max():.2f}]")


if __name__ == "__main__":
    main()
