"""Command-line entry point: synth-data | train | transfer | evaluate | recomposite.

Every command takes an optional YAML config plus ``--set key=value``
overrides and writes a manifest (config + seed + package version) beside
its outputs.  All randomness is routed through the recorded seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml
from scipy.ndimage import binary_dilation, binary_erosion, gaussian_filter

from . import __version__
from .config import TrainConfig
from .dataset import (
    load_image,
    load_mask,
    load_poses,
    load_video_dir,
    save_image,
    save_mask,
    save_video_dir,
    to_uint8,
    validate_video_dir,
)
from .metrics import sequence_report
from .pipeline import composite, transfer
from .skeleton import nearest_training_pose, normalize_pose
from .synthetic import SceneConfig, generate_video
from .training import load_checkpoint, restore_models, split_frames
from .training import train as run_training

log = logging.getLogger("motiontransfer")


def _parse_value(text: str):
    return yaml.safe_load(text)


def _collect_overrides(pairs: list[str]) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def _write_manifest(out_dir: Path, command: str, config: dict, seed) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "argv": sys.argv[1:],
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)


def _prepare_out_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise SystemExit(f"output directory {path} is not empty (use --force)")


def cmd_synth_data(args) -> int:
    overrides = _collect_overrides(args.set)
    if args.config:
        with open(args.config) as f:
            cfg_dict = yaml.safe_load(f) or {}
    else:
        cfg_dict = {}
    cfg_dict.update(overrides)
    cfg = SceneConfig.from_dict(cfg_dict)
    out = Path(args.output)
    _prepare_out_dir(out, args.force)
    frames = generate_video(cfg, args.seed)
    save_video_dir(out, frames, cfg, args.seed, force=True)
    validate_video_dir(out)
    _write_manifest(out, "synth-data", cfg.to_dict(), args.seed)
    log.info("wrote %d frames to %s", len(frames), out)
    return 0


def _load_train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_yaml(args.config) if args.config else TrainConfig()
    overrides = _collect_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    out = Path(args.output)
    _prepare_out_dir(out, args.force or args.resume is not None)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, "train", cfg.to_dict(), cfg.seed)
    summary = run_training(args.data, cfg, out, resume=args.resume)
    log.info("training done in %.1fs; eval: %s", summary["train_seconds"], summary["trained"])
    print(json.dumps({k: v for k, v in summary.items() if k != "trained_records"}, indent=2))
    return 0


def cmd_transfer(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    models, ckpt_cfg, _ = restore_models(payload)
    if args.config is not None:
        cfg = _load_train_config(args)
    else:
        cfg = ckpt_cfg
        overrides = _collect_overrides(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            cfg = cfg.with_overrides(overrides)
    out = Path(args.output)
    _prepare_out_dir(out, args.force)
    out.mkdir(parents=True, exist_ok=True)

    data = load_video_dir(args.data)
    res = cfg.res_fine if payload["stage"] == "fine" else cfg.res_coarse
    from .training import FrameStore

    if args.restrict_pool == "train":
        pool_range, _ = split_frames(data.n_frames, cfg.split_ratio)
    else:
        pool_range = range(data.n_frames)
    store = FrameStore.build(data, res, cfg, pool_range)

    ref_path = Path(args.reference)
    ref_poses_raw = load_poses(ref_path if ref_path.is_file() else ref_path / "poses.json")
    # reference poses live in the reference video's pixel frame; rescale
    if ref_path.is_dir():
        ref_data = load_video_dir(ref_path)
        rh, rw = ref_data.size
    else:
        rh, rw = args.reference_size or (res, res)
    sx, sy = res / rw, res / rh
    ref_poses = []
    for p in ref_poses_raw:
        q = p.copy()
        q.keypoints = q.keypoints * np.array([sx, sy])
        q.landmarks = {k: v * np.array([sx, sy]) for k, v in q.landmarks.items()}
        ref_poses.append(q)

    pool_poses = [store.poses[i] for i in pool_range]
    n_written = 0
    skipped = []
    history: list = []
    for t, ref_pose in enumerate(ref_poses):
        try:
            normalize_pose(ref_pose)
        except ValueError as e:
            skipped.append(t)
            log.warning("skipping reference frame %d: %s", t, e)
            history = []
            continue
        nearest, _ = nearest_training_pose(ref_pose, pool_poses, k=min(10, len(pool_poses)))
        in_idx = pool_range[nearest] if isinstance(pool_range, range) else nearest
        history.append(ref_pose)
        history = history[-cfg.k_history :]
        result = transfer(
            store.images[in_idx],
            store.part_masks[in_idx],
            store.poses[in_idx],
            history,
            models.g_h,
            models.g_f,
            store.background,
            k_history=cfg.k_history,
            raster_cfg=store.raster_cfg,
        )
        save_image(out / f"{t:06d}.png", result.output)
        if args.save_foreground:
            (out / "fg").mkdir(exist_ok=True)
            (out / "fgmask").mkdir(exist_ok=True)
            save_image(out / "fg" / f"{t:06d}.png", result.foreground)
            save_mask(out / "fgmask" / f"{t:06d}.png", result.fg_mask)
        n_written += 1
    _write_manifest(out, "transfer", cfg.to_dict(), cfg.seed)
    log.info("wrote %d frames (%d skipped) to %s", n_written, len(skipped), out)
    if skipped:
        with open(out / "skipped_frames.json", "w") as f:
            json.dump(skipped, f)
    return 0


def _mask_boundary_band(mask: np.ndarray, band_px: int = 1) -> np.ndarray:
    grown = binary_dilation(mask, iterations=band_px)
    shrunk = binary_erosion(mask, iterations=band_px)
    return grown & ~shrunk


def recomposite_frame(
    fg: np.ndarray,
    mask: np.ndarray,
    background: np.ndarray,
    blur_sigma: float = 1.0,
    band_px: int = 1,
) -> np.ndarray:
    """Paste a foreground onto a new background with soft mask boundaries.

    The binary mask is Gaussian-blurred (sigma in pixels) only inside a
    2*band_px boundary band; interior and exterior pixels keep the hard
    composite.  blur_sigma=0 gives the exact hard paste.
    """
    if fg.shape != background.shape:
        raise ValueError(f"foreground {fg.shape} vs background {background.shape}")
    mask = np.asarray(mask, dtype=bool)
    if blur_sigma <= 0:
        return composite(fg, mask, background)
    alpha = mask.astype(np.float64)
    soft = gaussian_filter(alpha, sigma=blur_sigma)
    band = _mask_boundary_band(mask, band_px)
    alpha = np.where(band, soft, alpha)
    return composite(fg, alpha, background)


def cmd_recomposite(args) -> int:
    out = Path(args.output)
    _prepare_out_dir(out, args.force)
    out.mkdir(parents=True, exist_ok=True)
    fg_paths = sorted(Path(args.frames).glob("*.png"))
    if not fg_paths:
        raise SystemExit(f"no foreground frames found in {args.frames}")
    bg = load_image(args.background)
    blur = 0.0 if args.no_blur else args.blur_sigma
    from PIL import Image

    for i, fg_path in enumerate(fg_paths):
        fg = load_image(fg_path)
        mask_path = Path(args.masks) / fg_path.name
        if not mask_path.exists():
            raise SystemExit(f"missing mask for {fg_path.name}")
        mask = load_mask(mask_path)
        if bg.shape != fg.shape:
            h, w = fg.shape[:2]
            bg_img = Image.fromarray(to_uint8(bg)).resize((w, h), Image.BILINEAR)
            bg = (np.asarray(bg_img).astype(np.float32) / 127.5) - 1.0
        if bg.shape != fg.shape or mask.shape != fg.shape[:2]:
            raise SystemExit(f"size mismatch at {fg_path.name}: fg {fg.shape}, mask {mask.shape}")
        save_image(out / f"{i:06d}.png", recomposite_frame(fg, mask, bg, blur_sigma=blur))
    _write_manifest(out, "recomposite", {"blur_sigma": blur, "background": str(args.background)}, None)
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    gen_paths = sorted(Path(args.gen).glob("*.png"))
    gt_paths = sorted((Path(args.gt) / "frames").glob("*.png"))
    if not gt_paths:
        gt_paths = sorted(Path(args.gt).glob("*.png"))
    if len(gen_paths) != len(gt_paths):
        raise SystemExit(f"frame count mismatch: {len(gen_paths)} generated vs {len(gt_paths)} ground truth")
    if not gen_paths:
        raise SystemExit("no frames to evaluate")
    gen = np.stack([to_uint8(load_image(p)).astype(np.float64) for p in gen_paths])
    gt = np.stack([to_uint8(load_image(p)).astype(np.float64) for p in gt_paths])
    fg_masks = None
    if args.masks:
        mask_paths = sorted(Path(args.masks).glob("*.png"))
        if len(mask_paths) != len(gen_paths):
            raise SystemExit("mask count mismatch")
        fg_masks = np.stack([load_mask(p) for p in mask_paths])
    test_poses = train_poses = None
    if args.poses and args.train_poses:
        test_poses = load_poses(args.poses)
        train_poses = load_poses(args.train_poses)
    report = sequence_report(gen, gt, fg_masks, test_poses, train_poses)
    report.to_json(out / "eval_report.json")
    with open(out / "eval_table.txt", "w") as f:
        f.write(report.table() + "\n")
    if report.novelty:
        report.novelty_csv(out / "novelty_curve.csv")
    _write_manifest(out, "evaluate", {"gen": str(args.gen), "gt": str(args.gt)}, None)
    print(report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motiontransfer",
        description="Personalized motion transfer: synthesize a target figure performing reference motion.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="render a synthetic labeled video")
    p.add_argument("--config", type=str, default=None, help="scene config YAML")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=str, required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train the two-stage model on a video directory")
    p.add_argument("--config", type=str, default=None, help="train config YAML")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--output", type=str, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", type=str, default=None)
    p.add_argument("--force", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("transfer", help="drive the trained model with reference poses")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True, help="target personal video directory")
    p.add_argument("--reference", type=str, required=True, help="poses.json or reference video dir")
    p.add_argument("--reference-size", type=int, nargs=2, default=None, metavar=("H", "W"))
    p.add_argument("--output", type=str, required=True)
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--restrict-pool", choices=["all", "train"], default="all")
    p.add_argument("--save-foreground", action="store_true")
    p.add_argument("--force", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("recomposite", help="paste generated foregrounds onto a new background")
    p.add_argument("--frames", type=str, required=True, help="foreground frames directory")
    p.add_argument("--masks", type=str, required=True, help="foreground masks directory")
    p.add_argument("--background", type=str, required=True, help="background image")
    p.add_argument("--output", type=str, required=True)
    p.add_argument("--blur-sigma", type=float, default=1.0)
    p.add_argument("--no-blur", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_recomposite)

    p = sub.add_parser("evaluate", help="score generated frames against ground truth")
    p.add_argument("--gen", type=str, required=True)
    p.add_argument("--gt", type=str, required=True)
    p.add_argument("--masks", type=str, default=None)
    p.add_argument("--poses", type=str, default=None)
    p.add_argument("--train-poses", type=str, default=None)
    p.add_argument("--output", type=str, required=True)
    p.set_defaults(fn=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
