"""On-disk video layout: frames/, per-part masks/, poses.json, meta.json.

This layout is both what the synthetic renderer writes and the ingestion
contract for user-supplied videos (frames as PNG, masks as binary PNG per
part, poses in the keypoint-file format).
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .skeleton import PART_NAMES, Pose2D
from .synthetic import LabeledFrame, SceneConfig

FRAME_PATTERN = "frames/{:06d}.png"
MASK_PATTERN = "masks/{:06d}_part{:02d}.png"


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[-1, 1] float -> 8-bit."""
    return np.clip(np.round((np.asarray(img) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    """8-bit -> [-1, 1] float32."""
    return (np.asarray(img).astype(np.float32) / 127.5) - 1.0


def save_image(path: Path | str, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(str(path))


def load_image(path: Path | str) -> np.ndarray:
    with Image.open(str(path)) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def save_mask(path: Path | str, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask, dtype=bool) * np.uint8(255))).save(str(path))


def load_mask(path: Path | str) -> np.ndarray:
    with Image.open(str(path)) as im:
        return np.asarray(im.convert("L")) > 127


@dataclass
class VideoData:
    """A loaded clip: images in [-1, 1], boolean masks, one pose per frame."""

    images: np.ndarray  # (N, H, W, 3) float32
    part_masks: np.ndarray  # (N, 10, H, W) bool
    poses: list[Pose2D]
    meta: dict | None = None

    @property
    def fg_masks(self) -> np.ndarray:
        return self.part_masks.any(axis=1)

    @property
    def n_frames(self) -> int:
        return self.images.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]


def save_video_dir(
    out_dir: Path | str,
    frames: list[LabeledFrame],
    cfg: SceneConfig | None = None,
    seed: int | None = None,
    force: bool = False,
) -> Path:
    """Write the standard layout; refuses to clobber unless force is set."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"{out} is not empty (use force to overwrite)")
        shutil.rmtree(out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    records = []
    for i, fr in enumerate(frames):
        save_image(out / FRAME_PATTERN.format(i), fr.image)
        for p in range(len(PART_NAMES)):
            save_mask(out / MASK_PATTERN.format(i, p), fr.part_masks[p])
        records.append(fr.pose.to_record(i))
    with open(out / "poses.json", "w") as f:
        json.dump(records, f)
    meta = {
        "generator": "motiontransfer",
        "version": __version__,
        "seed": seed,
        "scene_config": cfg.to_dict() if cfg is not None else None,
    }
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, indent=2)
    return out


def load_poses(path: Path | str) -> list[Pose2D]:
    with open(path) as f:
        records = json.load(f)
    records = sorted(records, key=lambda r: r["frame_index"])
    return [Pose2D.from_record(r) for r in records]


def load_video_dir(video_dir: Path | str) -> VideoData:
    video_dir = Path(video_dir)
    validate_video_dir(video_dir)
    frame_paths = sorted((video_dir / "frames").glob("*.png"))
    images = np.stack([load_image(p) for p in frame_paths])
    n = len(frame_paths)
    masks = np.stack(
        [
            np.stack([load_mask(video_dir / MASK_PATTERN.format(i, p)) for p in range(len(PART_NAMES))])
            for i in range(n)
        ]
    )
    poses = load_poses(video_dir / "poses.json")
    meta = None
    meta_path = video_dir / "meta.json"
    if meta_path.exists():
        with open(meta_path) as f:
            meta = json.load(f)
    return VideoData(images=images, part_masks=masks, poses=poses, meta=meta)


def validate_video_dir(video_dir: Path | str) -> dict:
    """Check the ingestion contract; raises ValueError with all problems found."""
    video_dir = Path(video_dir)
    problems = []
    frame_paths = sorted((video_dir / "frames").glob("*.png"))
    if not frame_paths:
        problems.append("no frames/*.png found")
    n = len(frame_paths)
    for i in range(n):
        if not (video_dir / FRAME_PATTERN.format(i)).exists():
            problems.append(f"missing frame {i:06d}.png")
            break
    missing_masks = 0
    for i in range(n):
        for p in range(len(PART_NAMES)):
            if not (video_dir / MASK_PATTERN.format(i, p)).exists():
                missing_masks += 1
    if missing_masks:
        problems.append(f"{missing_masks} part-mask files missing")
    poses_path = video_dir / "poses.json"
    n_poses = 0
    if not poses_path.exists():
        problems.append("poses.json missing")
    else:
        try:
            poses = load_poses(poses_path)
            n_poses = len(poses)
            if n and n_poses != n:
                problems.append(f"{n_poses} pose records vs {n} frames")
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            problems.append(f"poses.json unreadable: {e}")
    if problems:
        raise ValueError(f"invalid video directory {video_dir}: " + "; ".join(problems))
    return {"n_frames": n, "n_poses": n_poses}


def resize_video(data: VideoData, height: int, width: int) -> VideoData:
    """Resample a clip to a new resolution (bilinear frames, nearest masks)."""
    h0, w0 = data.size
    if (h0, w0) == (height, width):
        return data
    sx, sy = width / w0, height / h0
    images = np.stack(
        [
            from_uint8(
                np.asarray(
                    Image.fromarray(to_uint8(img)).resize((width, height), Image.BILINEAR)
                )
            )
            for img in data.images
        ]
    )
    masks = np.stack(
        [
            np.stack(
                [
                    np.asarray(
                        Image.fromarray(m.astype(np.uint8) * 255).resize(
                            (width, height), Image.NEAREST
                        )
                    )
                    > 127
                    for m in frame_masks
                ]
            )
            for frame_masks in data.part_masks
        ]
    )
    poses = []
    for pose in data.poses:
        p = pose.copy()
        p.keypoints = p.keypoints * np.array([sx, sy])
        p.landmarks = {k: v * np.array([sx, sy]) for k, v in p.landmarks.items()}
        poses.append(p)
    return VideoData(images=images, part_masks=masks, poses=poses, meta=data.meta)
