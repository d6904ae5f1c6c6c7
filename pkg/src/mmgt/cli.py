"""Command-line entrypoint wiring data, training, sampling, and reports.

Every command is deterministic given its config and seed: outputs carry no
timestamps, JSON keys are sorted, and CSV floats use a fixed format, so
same-seed reruns produce byte-identical artifact trees.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AudioFeatureSequence, PoseSequence, toy_layout
from .data import (SyntheticCorpusConfig, audio_features_from_wav, generate_corpus,
                   load_corpus, render_pose_video, save_corpus, template_pose)
from .io import (load_audio_bin, load_checkpoint, load_poses_bin, load_poses_jsonl,
                 load_video, save_audio_bin, save_checkpoint, save_mask_bin,
                 save_mask_video, save_poses_bin, save_poses_jsonl, save_video)
from .losses import LossWeights
from .maskgen import MaskPyramid, default_pyramid_levels, layout_masks, mask_pyramid
from .metrics import (diversity, feature_stats, frechet_distance, psnr, ssim,
                      train_pose_autoencoder)
from .smga import (DiffusionSchedule, SMGAConfig, smga_from_checkpoint, smga_sample,
                   smga_to_checkpoint, train_smga)
from .videogen import (VideoGenConfig, train_videogen, videogen_from_checkpoint,
                       videogen_sample, videogen_to_checkpoint)

# FGD at these loss-weight ratios as published; reported next to ours for
# context, never asserted (desk-scale runs cannot reproduce them)
PUBLISHED_SWEEP_FGD = {"1:1": 6.705, "1:2": 7.296, "1:3": 7.268, "1:4": 7.369}

ABLATION_VARIANTS = ("no_film", "no_motion_mask", "still_mask", "no_audio")

SMGA_LOSS_COLUMNS = ["step", "rec_f", "vel_f", "acc_f", "rec_b", "vel_b", "acc_b",
                     "loss_f", "loss_b", "total"]


class CliError(Exception):
    """Failure with a chosen process exit code."""

    def __init__(self, message, exit_code=1):
        super().__init__(message)
        self.exit_code = exit_code


# ---------------------------------------------------------------- config

def _check_keys(d: dict, cls, section: str) -> None:
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise CliError(f"unknown keys in config section '{section}': {unknown}")


@dataclass(frozen=True)
class SMGATrainSection:
    """Stage-one model size and training budget."""

    model_dim: int = 96
    num_heads: int = 4
    blocks_per_branch: int = 2
    max_frames: int = 512
    use_film: bool = True
    steps: int = 300
    batch_size: int = 16
    lr: float = 2e-4
    weight_decay: float = 0.02


@dataclass(frozen=True)
class VideoTrainSection:
    """Stage-two model size and training budget."""

    channels: tuple = (32, 48, 64)
    heads: int = 4
    t_dim: int = 128
    ctx_dim: int = 16
    max_frames: int = 64
    use_temporal_pe: bool = True
    identity_adapters: bool = False
    steps: int = 200
    batch_size: int = 2
    lr: float = 1e-3
    dropout_p: float = 0.05


@dataclass(frozen=True)
class ScheduleSection:
    t_train: int = 1000
    sampler_steps: int = 50


@dataclass(frozen=True)
class WeightsSection:
    lambda_f: float = 3.0
    lambda_b: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    """One JSON document configuring every command; unknown keys rejected."""

    corpus: SyntheticCorpusConfig = field(default_factory=SyntheticCorpusConfig)
    smga: SMGATrainSection = field(default_factory=SMGATrainSection)
    videogen: VideoTrainSection = field(default_factory=VideoTrainSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    weights: WeightsSection = field(default_factory=WeightsSection)
    seed: int = 0
    out_dir: str = "runs/out"

    def to_dict(self) -> dict:
        vg = dataclasses.asdict(self.videogen)
        vg["channels"] = list(self.videogen.channels)
        return {
            "corpus": self.corpus.to_dict(),
            "smga": dataclasses.asdict(self.smga),
            "videogen": vg,
            "schedule": dataclasses.asdict(self.schedule),
            "weights": dataclasses.asdict(self.weights),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, cls, "run")
        kwargs = {}
        if "corpus" in d:
            _check_keys(d["corpus"], SyntheticCorpusConfig, "corpus")
            kwargs["corpus"] = SyntheticCorpusConfig.from_dict(d["corpus"])
        if "smga" in d:
            _check_keys(d["smga"], SMGATrainSection, "smga")
            kwargs["smga"] = SMGATrainSection(**d["smga"])
        if "videogen" in d:
            _check_keys(d["videogen"], VideoTrainSection, "videogen")
            vg = dict(d["videogen"])
            if "channels" in vg:
                vg["channels"] = tuple(vg["channels"])
            kwargs["videogen"] = VideoTrainSection(**vg)
        if "schedule" in d:
            _check_keys(d["schedule"], ScheduleSection, "schedule")
            kwargs["schedule"] = ScheduleSection(**d["schedule"])
        if "weights" in d:
            _check_keys(d["weights"], WeightsSection, "weights")
            kwargs["weights"] = WeightsSection(**d["weights"])
        if "seed" in d:
            kwargs["seed"] = int(d["seed"])
        if "out_dir" in d:
            kwargs["out_dir"] = str(d["out_dir"])
        return cls(**kwargs)


def load_run_config(path=None, seed=None, out_dir=None) -> RunConfig:
    if path is None:
        run = RunConfig()
    else:
        p = Path(path)
        if not p.is_file():
            raise CliError(f"config file not found: {p}", exit_code=2)
        try:
            run = RunConfig.from_dict(json.loads(p.read_text()))
        except json.JSONDecodeError as e:
            raise CliError(f"config {p} is not valid JSON: {e}")
    if seed is not None:
        run = dataclasses.replace(run, seed=int(seed))
    if out_dir is not None:
        run = dataclasses.replace(run, out_dir=str(out_dir))
    return run


def build_smga_config(run: RunConfig) -> SMGAConfig:
    s = run.smga
    return SMGAConfig(layout=run.corpus.layout(), audio_dim=run.corpus.audio_dim,
                      model_dim=s.model_dim, num_heads=s.num_heads,
                      blocks_per_branch=s.blocks_per_branch,
                      max_frames=max(s.max_frames, run.corpus.frames_per_clip),
                      use_film=s.use_film)


def build_video_config(run: RunConfig) -> VideoGenConfig:
    v = run.videogen
    return VideoGenConfig(image_size=run.corpus.image_size,
                          clip_len=run.corpus.frames_per_clip,
                          audio_dim=run.corpus.audio_dim, channels=v.channels,
                          heads=v.heads, t_dim=v.t_dim, ctx_dim=v.ctx_dim,
                          max_frames=max(v.max_frames, run.corpus.frames_per_clip),
                          use_temporal_pe=v.use_temporal_pe,
                          identity_adapters=v.identity_adapters)


def build_schedule(run: RunConfig) -> DiffusionSchedule:
    return DiffusionSchedule.cosine(run.schedule.t_train, run.schedule.sampler_steps)


def run_weights(run: RunConfig) -> LossWeights:
    return LossWeights(lambda_f=run.weights.lambda_f, lambda_b=run.weights.lambda_b)


# ----------------------------------------------------------- small utils

def _write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _hash_dict(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def ensure_corpus(run: RunConfig, corpus_dir=None) -> list:
    """Load an explicit corpus dir, else reuse/populate the MMGT_CACHE copy,
    else generate in memory."""
    if corpus_dir is not None:
        d = Path(corpus_dir)
        if not d.is_dir():
            raise CliError(f"corpus directory not found: {d}", exit_code=2)
        return load_corpus(d)
    cache = os.environ.get("MMGT_CACHE")
    if cache:
        slot = Path(cache) / f"corpus-{_hash_dict(run.corpus.to_dict())}"
        if slot.is_dir():
            return load_corpus(slot)
        clips = generate_corpus(run.corpus)
        save_corpus(slot, clips)
        return clips
    return generate_corpus(run.corpus)


def _require_file(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"missing {what}: {p}", exit_code=2)
    return p


def _load_audio_file(path, run: RunConfig) -> AudioFeatureSequence:
    p = _require_file(path, "audio file")
    if p.suffix.lower() == ".wav":
        return audio_features_from_wav(p, fps=run.corpus.fps, dim=run.corpus.audio_dim)
    return load_audio_bin(p, fps=run.corpus.fps)


def _load_pose_file(path, fps) -> PoseSequence:
    p = _require_file(path, "pose file")
    if p.suffix == ".jsonl":
        return load_poses_jsonl(p, fps=fps)
    return load_poses_bin(p, fps=fps)


def _load_image(path) -> np.ndarray:
    import cv2

    p = _require_file(path, "reference image")
    bgr = cv2.imread(str(p), cv2.IMREAD_COLOR)
    if bgr is None:
        raise CliError(f"could not decode image: {p}")
    return bgr[:, :, ::-1].copy()


def _check_device(device) -> None:
    if device not in (None, "cpu"):
        raise CliError(f"unsupported device '{device}': desk-scale runs are cpu only")


def _stack_corpus(clips):
    poses = np.stack([c.poses.data for c in clips])
    audio = np.stack([c.audio.data for c in clips])
    return poses, audio


def _pose_encoder(real_poses: np.ndarray, seed: int):
    """Feature map for FGD and diversity: a trained autoencoder when the
    corpus is big enough, otherwise raw flattened coordinates."""
    if real_poses.shape[0] >= 100:
        ae = train_pose_autoencoder(real_poses, seed=seed)
        return ae.encode, "autoencoder"
    return (lambda p: np.asarray(p, dtype=np.float64)[..., :2].reshape(p.shape[0], -1),
            "raw")


def _write_mask_dirs(out_dir: Path, masks: dict) -> dict:
    paths = {}
    for region in sorted(masks):
        save_mask_video(out_dir / region, masks[region])
        save_mask_bin(out_dir / f"{region}.bin", masks[region])
        paths[region] = str(out_dir / region)
    return paths


def _pyramids_for_masks(masks: dict, video_cfg: VideoGenConfig) -> dict:
    levels = default_pyramid_levels(*video_cfg.latent_size)
    return {r: mask_pyramid(masks[r], levels) for r in ("face_hands", "lips", "background")}


def still_pyramids(masks: dict) -> dict:
    """Replace every pyramid frame with its frame 0 (the still-mask ablation)."""
    out = {}
    for region, pyr in masks.items():
        levels = [np.repeat(lv[:1], lv.shape[0], axis=0) for lv in pyr.levels]
        out[region] = MaskPyramid(levels=levels, blur_sigma=list(pyr.blur_sigma))
    return out


# --------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    run = load_run_config(args.config, args.seed, args.out)
    cfg = run.corpus if args.seed is None else dataclasses.replace(run.corpus, seed=run.seed)
    clips = generate_corpus(cfg)
    out = Path(args.out) if args.out else Path(run.out_dir) / "corpus"
    save_corpus(out, clips)
    _write_json(out / "corpus.json", cfg.to_dict())
    print(f"wrote {len(clips)} clips to {out}")
    return 0


def cmd_masks(args) -> int:
    poses = _load_pose_file(args.poses, fps=25.0)
    if args.layout:
        from .core import KeypointLayout

        layout = KeypointLayout.from_dict(json.loads(_require_file(args.layout, "layout file").read_text()))
    else:
        layout = toy_layout(poses.num_channels)
    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise CliError(f"--size must look like 512x512, got '{args.size}'")
    masks = layout_masks(poses, layout, h, w)
    out = Path(args.out)
    _write_mask_dirs(out, masks)
    print(f"wrote {len(masks)} mask videos ({poses.num_frames} frames, {h}x{w}) to {out}")
    return 0


def cmd_train_smga(args) -> int:
    run = load_run_config(args.config, args.seed, args.out)
    clips = ensure_corpus(run, args.corpus)
    poses, audio = _stack_corpus(clips)
    config = build_smga_config(run)
    schedule = build_schedule(run)
    net, history = train_smga(poses, audio, config, schedule, steps=run.smga.steps,
                              batch_size=run.smga.batch_size, seed=run.seed,
                              lr=run.smga.lr, weight_decay=run.smga.weight_decay,
                              weights=run_weights(run))
    out_dir = Path(args.out or run.out_dir)
    ckpt_path = out_dir / "smga.ckpt"
    save_checkpoint(ckpt_path, smga_to_checkpoint(net, schedule))
    _write_csv(args.loss_csv or out_dir / "smga_loss.csv", SMGA_LOSS_COLUMNS,
               [[row[c] for c in SMGA_LOSS_COLUMNS] for row in history])
    print(f"trained stage one for {run.smga.steps} steps; "
          f"final loss {history[-1]['total']:.6g}; checkpoint {ckpt_path}")
    return 0


def cmd_sample_smga(args) -> int:
    run = load_run_config(args.config, args.seed, args.out)
    ckpt = load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    net, schedule = smga_from_checkpoint(ckpt)
    fa = _load_audio_file(args.audio, run)
    p0 = _load_pose_file(args.pose0, fps=run.corpus.fps).data[0]
    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise CliError(f"--size must look like 64x64, got '{args.size}'")
    poses, masks = smga_sample(net, p0, fa, schedule, seed=run.seed, mask_size=(h, w))
    out = Path(args.out or run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_poses_jsonl(out / "poses.jsonl", poses)
    save_poses_bin(out / "poses.bin", poses)
    _write_mask_dirs(out / "masks", masks)
    save_video(out / "pose_video", render_pose_video(poses, net.config.layout, h, w), fps=poses.fps)
    print(f"sampled {poses.num_frames} pose frames to {out}")
    return 0


def cmd_train_video(args) -> int:
    run = load_run_config(args.config, args.seed, args.out)
    clips = ensure_corpus(run, args.corpus)
    config = build_video_config(run)
    schedule = build_schedule(run)
    model, history = train_videogen(clips, config, schedule, steps=run.videogen.steps,
                                    batch_size=run.videogen.batch_size, seed=run.seed,
                                    lr=run.videogen.lr, dropout_p=run.videogen.dropout_p)
    out_dir = Path(args.out or run.out_dir)
    ckpt_path = out_dir / "video.ckpt"
    save_checkpoint(ckpt_path, videogen_to_checkpoint(model, schedule))
    _write_csv(args.loss_csv or out_dir / "video_loss.csv", ["step", "loss"],
               [[row["step"], row["loss"]] for row in history])
    print(f"trained stage two for {run.videogen.steps} steps; "
          f"final loss {history[-1]['loss']:.6g}; checkpoint {ckpt_path}")
    return 0


def _two_stage_sample(net, schedule1, model, schedule2, fa, p0, reference,
                      seed, speaker_id=None, drop=frozenset(), still=False):
    """Audio to poses to masks to video; returns all intermediates."""
    h, w = model.config.image_size
    poses, masks = smga_sample(net, p0, fa, schedule1, seed=seed, mask_size=(h, w))
    pose_video = render_pose_video(poses, net.config.layout, h, w)
    pyramids = _pyramids_for_masks(masks, model.config)
    if still:
        pyramids = still_pyramids(pyramids)
    video = videogen_sample(model, reference, pose_video, pyramids, fa, schedule2,
                            seed=seed, speaker_id=speaker_id, drop=drop)
    return poses, masks, pose_video, video


def cmd_sample_video(args) -> int:
    run = load_run_config(args.config, args.seed, args.out)
    net, schedule1 = smga_from_checkpoint(load_checkpoint(_require_file(args.ckpt1, "stage-one checkpoint")))
    model, schedule2 = videogen_from_checkpoint(load_checkpoint(_require_file(args.ckpt2, "stage-two checkpoint")))
    fa = _load_audio_file(args.audio, run)
    reference = _load_image(args.ref)
    if reference.shape[:2] != model.config.image_size:
        raise CliError(f"reference image is {reference.shape[:2]}, "
                       f"model expects {model.config.image_size}")
    if args.pose0:
        p0 = _load_pose_file(args.pose0, fps=run.corpus.fps).data[0]
    else:
        p0 = template_pose(run.corpus)
    poses, masks, pose_video, video = _two_stage_sample(
        net, schedule1, model, schedule2, fa, p0, reference, seed=run.seed,
        speaker_id=args.speaker)
    out = Path(args.out or run.out_dir)
    save_video(out / "video", video, fps=fa.fps)
    save_poses_jsonl(out / "poses.jsonl", poses)
    print(f"sampled {video.shape[0]} frames to {out / 'video'}")
    return 0


def cmd_pipeline(args) -> int:
    run = load_run_config(args.config, args.seed, args.out)
    out = Path(args.out or run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clips = ensure_corpus(run, args.corpus)
    schedule = build_schedule(run)

    smga_path = out / "smga.ckpt"
    video_path = out / "video.ckpt"
    if args.train_first:
        poses_arr, audio_arr = _stack_corpus(clips)
        net, smga_hist = train_smga(poses_arr, audio_arr, build_smga_config(run), schedule,
                                    steps=run.smga.steps, batch_size=run.smga.batch_size,
                                    seed=run.seed, lr=run.smga.lr,
                                    weight_decay=run.smga.weight_decay,
                                    weights=run_weights(run))
        save_checkpoint(smga_path, smga_to_checkpoint(net, schedule))
        _write_csv(out / "smga_loss.csv", SMGA_LOSS_COLUMNS,
                   [[row[c] for c in SMGA_LOSS_COLUMNS] for row in smga_hist])
        model, video_hist = train_videogen(clips, build_video_config(run), schedule,
                                           steps=run.videogen.steps,
                                           batch_size=run.videogen.batch_size,
                                           seed=run.seed, lr=run.videogen.lr,
                                           dropout_p=run.videogen.dropout_p)
        save_checkpoint(video_path, videogen_to_checkpoint(model, schedule))
        _write_csv(out / "video_loss.csv", ["step", "loss"],
                   [[row["step"], row["loss"]] for row in video_hist])
        schedule1 = schedule2 = schedule
    else:
        for p in (smga_path, video_path):
            if not p.is_file():
                raise CliError(f"missing checkpoint: {p} (run with --train-first)", exit_code=2)
        net, schedule1 = smga_from_checkpoint(load_checkpoint(smga_path))
        model, schedule2 = videogen_from_checkpoint(load_checkpoint(video_path))

    if args.audio:
        fa = _load_audio_file(args.audio, run)
    else:
        fa = clips[0].audio
    if args.ref:
        reference = _load_image(args.ref)
    else:
        reference = clips[0].pixel_video[0]
    if reference.shape[:2] != model.config.image_size:
        raise CliError(f"reference image is {reference.shape[:2]}, "
                       f"model expects {model.config.image_size}")
    p0 = clips[0].poses.data[0] if args.pose0 is None else _load_pose_file(args.pose0, run.corpus.fps).data[0]
    speaker = clips[0].speaker_id if (args.audio is None and args.ref is None) else None

    poses, masks, pose_video, video = _two_stage_sample(
        net, schedule1, model, schedule2, fa, p0, reference, seed=run.seed,
        speaker_id=speaker)

    save_poses_jsonl(out / "poses.jsonl", poses)
    save_poses_bin(out / "poses.bin", poses)
    save_audio_bin(out / "audio.bin", fa)
    _write_mask_dirs(out / "masks", masks)
    save_video(out / "pose_video", pose_video, fps=poses.fps)
    save_video(out / "video", video, fps=fa.fps)
    # paths relative to the manifest and no out_dir in the config echo, so
    # same-seed runs into different directories stay byte-identical
    cfg_echo = run.to_dict()
    del cfg_echo["out_dir"]
    _write_json(out / "manifest.json", {
        "artifacts": {
            "audio": "audio.bin",
            "masks": {r: f"masks/{r}" for r in sorted(masks)},
            "pose_video": "pose_video",
            "poses": "poses.jsonl",
            "video": "video",
        },
        "checkpoints": {"smga": smga_path.name, "videogen": video_path.name},
        "config": cfg_echo,
        "frames": int(video.shape[0]),
        "seed": run.seed,
    })
    print(f"pipeline wrote {video.shape[0]} frames and intermediates to {out}")
    return 0


def cmd_eval(args) -> int:
    real_dir = Path(args.real)
    gen_dir = Path(args.gen)
    for d, what in ((real_dir, "real corpus"), (gen_dir, "generated corpus")):
        if not d.is_dir():
            raise CliError(f"missing {what} directory: {d}", exit_code=2)
    real = load_corpus(real_dir)
    gen = load_corpus(gen_dir)
    if not real or not gen:
        raise CliError("both corpora must contain at least one clip")
    seed = 0 if args.seed is None else int(args.seed)

    real_poses = np.stack([c.poses.data for c in real])
    gen_poses = np.stack([c.poses.data for c in gen])
    encode, space = _pose_encoder(real_poses, seed)
    fgd = frechet_distance(feature_stats(encode(real_poses)),
                           feature_stats(encode(gen_poses)))
    div = diversity(encode(gen_poses), seed=seed)

    pairs = min(len(real), len(gen))
    rows = []
    for i in range(pairs):
        a, b = real[i].pixel_video, gen[i].pixel_video
        if a.shape != b.shape:
            raise CliError(f"clip {i}: video shapes differ {a.shape} vs {b.shape}")
        rows.append([i, psnr(a, b, 255.0), ssim(a, b, 255.0)])
    report = {
        "div": div,
        "feature_space": space,
        "fgd": fgd,
        "psnr_mean": float(np.mean([r[1] for r in rows])),
        "ssim_mean": float(np.mean([r[2] for r in rows])),
    }
    out = Path(args.out)
    _write_json(out, report)
    _write_csv(out.with_suffix(".csv"), ["clip", "psnr", "ssim"], rows)
    print(f"fgd {report['fgd']:.6g}  div {report['div']:.6g}  "
          f"psnr {report['psnr_mean']:.4g}  ssim {report['ssim_mean']:.4g}")
    return 0


def _parse_ratios(text: str) -> list:
    ratios = []
    for part in text.split(","):
        part = part.strip()
        try:
            a, b = (int(v) for v in part.split(":"))
        except ValueError:
            raise CliError(f"ratio '{part}' must look like 1:3")
        if a < 1 or b < 1:
            raise CliError(f"ratio '{part}' must be positive")
        ratios.append((a, b))
    if not ratios:
        raise CliError("empty ratio list")
    return ratios


def cmd_sweep(args) -> int:
    run = load_run_config(args.config, args.seed, args.out)
    ratios = _parse_ratios(args.ratios)
    clips = ensure_corpus(run, args.corpus)
    poses_arr, audio_arr = _stack_corpus(clips)
    schedule = build_schedule(run)
    config = build_smga_config(run)
    encode, space = _pose_encoder(poses_arr, run.seed)
    real_stats = feature_stats(encode(poses_arr))
    n_samples = min(len(clips), 16)

    rows = []
    for a, b in ratios:
        name = f"{a}:{b}"
        net, history = train_smga(poses_arr, audio_arr, config, schedule,
                                  steps=run.smga.steps, batch_size=run.smga.batch_size,
                                  seed=run.seed, lr=run.smga.lr,
                                  weight_decay=run.smga.weight_decay,
                                  weights=LossWeights(lambda_f=float(a), lambda_b=float(b)))
        sampled = []
        for i in range(n_samples):
            p, _ = smga_sample(net, clips[i].poses.data[0], clips[i].audio, schedule,
                               seed=run.seed + i, mask_size=(8, 8))
            sampled.append(p.data)
        fgd = frechet_distance(real_stats, feature_stats(encode(np.stack(sampled))))
        rows.append([name, a, b, fgd, PUBLISHED_SWEEP_FGD.get(name, ""),
                     history[-1]["total"]])
        print(f"ratio {name}: fgd {fgd:.6g} (final loss {history[-1]['total']:.6g})")

    out = Path(args.out or run.out_dir)
    _write_csv(out / "sweep.csv",
               ["ratio", "lambda_f", "lambda_b", "fgd", "published_fgd", "final_loss"], rows)
    _plot_sweep(out / "sweep.png", rows)
    print(f"sweep report: {out / 'sweep.csv'} ({space} features)")
    return 0


def _plot_sweep(path, rows) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [r[0] for r in rows]
    ours = [r[3] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(names, ours, color="#4878d0")
    ax.set_xlabel("face:body loss weight ratio")
    ax.set_ylabel("FGD (toy corpus)")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def cmd_ablate(args) -> int:
    run = load_run_config(args.config, args.seed, args.out)
    if args.variant not in ABLATION_VARIANTS:
        raise CliError(f"unknown variant '{args.variant}'; choose from {ABLATION_VARIANTS}")
    clips = ensure_corpus(run, args.corpus)
    out = Path(args.out or run.out_dir)

    rows = []
    for label in ("base", args.variant):
        rows.append(_ablation_row(label, run, clips, out / label))
    _write_csv(out / "ablation.csv", ["variant", "fgd", "psnr", "ssim"], rows)
    print(f"ablation report: {out / 'ablation.csv'}")
    return 0


def _ablation_row(label: str, run: RunConfig, clips, row_dir: Path) -> list:
    """Train both stages with one pathway toggled; score against clip 0."""
    poses_arr, audio_arr = _stack_corpus(clips)
    schedule = build_schedule(run)
    smga_cfg = build_smga_config(run)
    if label == "no_film":
        smga_cfg = dataclasses.replace(smga_cfg, use_film=False)
    stage1_audio = np.zeros_like(audio_arr) if label == "no_audio" else audio_arr

    net, _ = train_smga(poses_arr, stage1_audio, smga_cfg, schedule,
                        steps=run.smga.steps, batch_size=run.smga.batch_size,
                        seed=run.seed, lr=run.smga.lr,
                        weight_decay=run.smga.weight_decay, weights=run_weights(run))

    forced = frozenset()
    mask_transform = None
    if label == "no_motion_mask":
        forced = frozenset({"masks"})
    elif label == "no_audio":
        forced = frozenset({"audio"})
    elif label == "still_mask":
        mask_transform = still_pyramids
    model, _ = train_videogen(clips, build_video_config(run), schedule,
                              steps=run.videogen.steps,
                              batch_size=run.videogen.batch_size, seed=run.seed,
                              lr=run.videogen.lr, dropout_p=run.videogen.dropout_p,
                              forced_drop=forced, mask_transform=mask_transform)

    row_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(row_dir / "smga.ckpt", smga_to_checkpoint(net, schedule))
    save_checkpoint(row_dir / "video.ckpt", videogen_to_checkpoint(model, schedule))

    clip = clips[0]
    fa = clip.audio
    if label == "no_audio":
        fa = AudioFeatureSequence(np.zeros_like(fa.data), fps=fa.fps)
    poses, masks, pose_video, video = _two_stage_sample(
        net, schedule, model, schedule, fa, clip.poses.data[0], clip.pixel_video[0],
        seed=run.seed, speaker_id=clip.speaker_id, drop=forced,
        still=(label == "still_mask"))
    save_video(row_dir / "video", video, fps=fa.fps)

    encode, _ = _pose_encoder(poses_arr, run.seed)
    sampled = []
    for i in range(min(len(clips), 8)):
        src = clips[i].audio
        if label == "no_audio":
            src = AudioFeatureSequence(np.zeros_like(src.data), fps=src.fps)
        p, _m = smga_sample(net, clips[i].poses.data[0], src, schedule,
                            seed=run.seed + i, mask_size=(8, 8))
        sampled.append(p.data)
    fgd = frechet_distance(feature_stats(encode(poses_arr)),
                           feature_stats(encode(np.stack(sampled))))
    return [label, fgd, psnr(video, clip.pixel_video, 255.0),
            ssim(video, clip.pixel_video, 255.0)]


def cmd_visualize(args) -> int:
    if not args.losses and not args.video:
        raise CliError("nothing to visualize: pass --losses and/or --video", exit_code=2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.losses:
        _plot_losses(_require_file(args.losses, "loss CSV"), out / "loss_curve.png")
        print(f"wrote {out / 'loss_curve.png'}")
    if args.video:
        d = Path(args.video)
        if not d.is_dir():
            raise CliError(f"missing video directory: {d}", exit_code=2)
        _frame_strip(d, out / "frame_strip.png")
        print(f"wrote {out / 'frame_strip.png'}")
    return 0


def _plot_losses(csv_path, png_path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "step" not in reader.fieldnames:
            raise CliError(f"{csv_path} has no 'step' column")
        columns = [c for c in reader.fieldnames if c != "step"]
        steps, series = [], {c: [] for c in columns}
        for row in reader:
            steps.append(float(row["step"]))
            for c in columns:
                series[c].append(float(row[c]))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for c in columns:
        ax.plot(steps, series[c], label=c, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(png_path, metadata={"Software": None})
    plt.close(fig)


def _frame_strip(video_dir, png_path, max_frames=8) -> None:
    import cv2

    frames, _fps = load_video(video_dir)
    n = frames.shape[0]
    picks = np.unique(np.linspace(0, n - 1, min(max_frames, n)).astype(int))
    strip = np.concatenate([frames[i] for i in picks], axis=1)
    cv2.imwrite(str(png_path), strip[:, :, ::-1])


# ------------------------------------------------------------ entrypoint

def _add_common(p, config=True):
    if config:
        p.add_argument("--config", help="RunConfig JSON path (defaults apply if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--device", help="compute device (cpu)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmgt",
                                     description="Two-stage co-speech gesture video toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and save a synthetic corpus")
    _add_common(p)

    p = sub.add_parser("masks", help="motion masks from a pose file")
    p.add_argument("--poses", required=True)
    p.add_argument("--layout", help="keypoint layout JSON (toy layout if omitted)")
    p.add_argument("--size", default="64x64")
    _add_common(p, config=False)

    p = sub.add_parser("train-smga", help="train the audio-to-pose stage")
    p.add_argument("--corpus", help="existing corpus directory")
    p.add_argument("--loss-csv", help="loss curve CSV path")
    _add_common(p)

    p = sub.add_parser("sample-smga", help="sample poses and masks from audio")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--audio", required=True, help=".bin features or .wav")
    p.add_argument("--pose0", required=True, help="initial pose file (.jsonl or .bin)")
    p.add_argument("--size", default="64x64", help="mask/render size HxW")
    _add_common(p)

    p = sub.add_parser("train-video", help="train the video stage")
    p.add_argument("--corpus", help="existing corpus directory")
    p.add_argument("--loss-csv", help="loss curve CSV path")
    _add_common(p)

    p = sub.add_parser("sample-video", help="audio + reference image to video")
    p.add_argument("--ref", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--ckpt1", required=True, help="stage-one checkpoint")
    p.add_argument("--ckpt2", required=True, help="stage-two checkpoint")
    p.add_argument("--pose0", help="initial pose file (template pose if omitted)")
    p.add_argument("--speaker", type=int)
    _add_common(p)

    p = sub.add_parser("pipeline", help="end-to-end: audio to poses to masks to video")
    p.add_argument("--train-first", action="store_true",
                   help="train both stages before sampling")
    p.add_argument("--corpus", help="existing corpus directory")
    p.add_argument("--audio", help="audio file (corpus clip 0 if omitted)")
    p.add_argument("--ref", help="reference image (corpus clip 0 if omitted)")
    p.add_argument("--pose0", help="initial pose file (corpus clip 0 if omitted)")
    _add_common(p)

    p = sub.add_parser("eval", help="FGD/diversity/PSNR/SSIM between two corpora")
    p.add_argument("--real", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--seed", type=int)
    p.add_argument("--device")

    p = sub.add_parser("sweep", help="loss-weight ratio sweep with FGD report")
    p.add_argument("--ratios", default="1:1,1:2,1:3,1:4")
    p.add_argument("--corpus", help="existing corpus directory")
    _add_common(p)

    p = sub.add_parser("ablate", help="train and score one ablation variant")
    p.add_argument("--variant", required=True)
    p.add_argument("--corpus", help="existing corpus directory")
    _add_common(p)

    p = sub.add_parser("visualize", help="loss curves and frame strips as PNG")
    p.add_argument("--losses", help="loss CSV to plot")
    p.add_argument("--video", help="video directory for a frame strip")
    p.add_argument("--out", required=True)
    p.add_argument("--device")

    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "masks": cmd_masks,
    "train-smga": cmd_train_smga,
    "sample-smga": cmd_sample_smga,
    "train-video": cmd_train_video,
    "sample-video": cmd_sample_video,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "visualize": cmd_visualize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _check_device(getattr(args, "device", None))
        return _COMMANDS[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename or e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
