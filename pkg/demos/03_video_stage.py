"""Overfit the video stage to two clips and sample them back.

A smoke-scale version of the memorization experiment: train the latent
denoiser on two 32x32 clips for a few hundred steps, then reconstruct each
clip from its reference frame, pose video, masks, and audio. Reports PSNR
against the ground-truth pixels next to an untrained baseline, and writes
the reconstructions to demos/out/video/.
"""

import time
from pathlib import Path

import numpy as np

from mmgt.data import SyntheticCorpusConfig, generate_corpus
from mmgt.io import save_video
from mmgt.metrics import psnr
from mmgt.smga import DiffusionSchedule
from mmgt.videogen import (VideoGenConfig, VideoGenModel, clip_training_sample,
                           train_videogen, videogen_sample)

OUT = Path(__file__).parent / "out" / "video"


def reconstruct(model, clip, sample, seed):
    return videogen_sample(model, clip.pixel_video[0], clip.pose_video,
                           sample["masks"], clip.audio, DiffusionSchedule.cosine(),
                           seed=seed, speaker_id=clip.speaker_id)


def main():
    cfg = SyntheticCorpusConfig(num_clips=2, frames_per_clip=8, keypoints=16,
                                audio_dim=4, image_size=(32, 32), seed=21)
    clips = generate_corpus(cfg)
    vg = VideoGenConfig(image_size=(32, 32), clip_len=8, audio_dim=4,
                        channels=(16, 16, 32), heads=2, max_frames=8)
    schedule = DiffusionSchedule.cosine()
    samples = [clip_training_sample(c, vg.latent_size) for c in clips]

    fresh = VideoGenModel(vg)
    base = [psnr(reconstruct(fresh, c, s, seed=9), c.pixel_video, 255.0)
            for c, s in zip(clips, samples)]

    t0 = time.time()
    model, history = train_videogen(clips, vg, schedule, steps=500, batch_size=2,
                                    seed=0, lr=1e-3, dropout_p=0.0, lr_final=2e-4)
    losses = [h["loss"] for h in history]
    print(f"trained 500 steps in {time.time() - t0:.0f}s; "
          f"loss {np.mean(losses[:25]):.3f} -> {np.mean(losses[-25:]):.3f}")

    for k, (clip, sample) in enumerate(zip(clips, samples)):
        out = reconstruct(model, clip, sample, seed=9)
        trained = psnr(out, clip.pixel_video, 255.0)
        pinned = np.array_equal(out[0], clip.pixel_video[0])
        print(f"clip {k}: psnr untrained {base[k]:5.2f} dB -> trained "
              f"{trained:5.2f} dB  (frame 0 bitwise: {pinned})")
        save_video(OUT / f"clip_{k}", out, fps=clip.poses.fps)
    print(f"wrote reconstructions to {OUT}")
    print("longer budgets keep going: the memorization run in the test suite "
          "reaches >25 dB at 3000 steps on four 64x64 clips")


if __name__ == "__main__":
    main()
