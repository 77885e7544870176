"""Image-quality metrics: MSE / PSNR / SSIM and the difference-frame score.

All metrics use the on-disk 8-bit convention (values in [0, 255], MAX=255).
SSIM uses an 11x11 Gaussian window (sigma 1.5) with the standard constants
and is averaged over window centers whose window lies fully inside the
image; masked variants restrict the average to mask-1 pixels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .skeleton import Pose2D, nearest_training_pose

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_MAX = 255.0


def _ssim_kernel() -> np.ndarray:
    r = SSIM_WINDOW // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * SSIM_SIGMA**2))
    return k / k.sum()


def _local_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = convolve1d(img, kernel, axis=0, mode="constant", cval=0.0)
    out = convolve1d(out, kernel, axis=1, mode="constant", cval=0.0)
    r = SSIM_WINDOW // 2
    return out[r:-r, r:-r]


def _ssim_map_channel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    k = _ssim_kernel()
    c1 = (SSIM_K1 * DATA_MAX) ** 2
    c2 = (SSIM_K2 * DATA_MAX) ** 2
    mx = _local_mean(x, k)
    my = _local_mean(y, k)
    mxx = _local_mean(x * x, k)
    myy = _local_mean(y * y, k)
    mxy = _local_mean(x * y, k)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


@dataclass
class FrameMetrics:
    mse: float
    psnr: float
    ssim: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.mse, self.psnr, self.ssim


def psnr_from_mse(mse: float) -> float:
    """PSNR in dB for the 8-bit range; +inf sentinel at zero error."""
    if mse <= 0:
        return math.inf
    return 10.0 * math.log10(DATA_MAX**2 / mse)


def frame_metrics(x: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None) -> FrameMetrics:
    """MSE, PSNR and SSIM between two images in the [0, 255] convention.

    ``mask`` (H, W) restricts both the MSE pixels and the SSIM window
    centers to mask-1 positions.  Images must be at least the SSIM window
    size in each dimension.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[..., None]
        y = y[..., None]
    h, w, _ = x.shape
    if min(h, w) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}px for SSIM")

    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise ValueError(f"mask shape {mask.shape} does not match image {h}x{w}")
        if not mask.any():
            raise ValueError("empty metric mask")
        sq = (x - y) ** 2
        mse = float(sq[mask].mean())
    else:
        mse = float(((x - y) ** 2).mean())

    r = SSIM_WINDOW // 2
    center_mask = None
    if mask is not None:
        center_mask = mask[r:-r, r:-r]
        if not center_mask.any():
            raise ValueError("mask has no valid SSIM window centers")
    ssim_vals = []
    for c in range(x.shape[-1]):
        m = _ssim_map_channel(x[..., c], y[..., c])
        ssim_vals.append(float(m[center_mask].mean()) if center_mask is not None else float(m.mean()))
    return FrameMetrics(mse=mse, psnr=psnr_from_mse(mse), ssim=float(np.mean(ssim_vals)))


def diff_frame_mse(gen: np.ndarray | list, gt: np.ndarray | list) -> float:
    """Temporal-coherence surrogate: MSE between consecutive-frame differences.

    mean over t of MSE[(gen_t - gen_{t-1}) - (gt_t - gt_{t-1})], in the
    8-bit convention.  Constant per-frame offsets cancel exactly.
    """
    gen = np.asarray(gen, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if gen.shape != gt.shape:
        raise ValueError(f"sequence shape mismatch: {gen.shape} vs {gt.shape}")
    if gen.shape[0] < 2:
        raise ValueError("need at least 2 frames for difference-frame MSE")
    d = (gen[1:] - gen[:-1]) - (gt[1:] - gt[:-1])
    return float((d**2).reshape(d.shape[0], -1).mean(axis=1).mean())


def novelty_curve(
    test_poses: list[Pose2D],
    test_scores: list[float],
    train_poses: list[Pose2D],
    k: int = 10,
) -> list[tuple[float, float]]:
    """(pose novelty, score) per test frame; novelty = mean of k nearest distances."""
    if len(test_poses) != len(test_scores):
        raise ValueError("one score per test pose required")
    out = []
    for pose, score in zip(test_poses, test_scores):
        _, novelty = nearest_training_pose(pose, train_poses, k=k)
        out.append((novelty, float(score)))
    return out


@dataclass
class EvalReport:
    """Aggregate metrics for a generated sequence vs its ground truth."""

    whole: dict = field(default_factory=dict)
    foreground: dict = field(default_factory=dict)
    diff_mse: float | None = None
    per_frame: list[dict] = field(default_factory=list)
    novelty: list[tuple[float, float]] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_json(self, path: Path | str) -> None:
        payload = {
            "whole_frame": self.whole,
            "foreground": self.foreground,
            "diff_frame_mse": self.diff_mse,
            "per_frame": self.per_frame,
            "novelty_points": self.novelty,
            "notes": self.notes,
        }
        with open(path, "w") as f:
            json.dump(sanitize_inf(payload), f, indent=2)

    def novelty_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["novelty", "ssim"])
            writer.writerows(self.novelty)

    def table(self) -> str:
        rows = [("region", "MSE", "PSNR", "SSIM")]
        for name, agg in (("whole frame", self.whole), ("foreground", self.foreground)):
            if agg:
                rows.append(
                    (name, f"{agg['mse']:.4f}", _fmt_psnr(agg["psnr"]), f"{agg['ssim']:.4f}")
                )
        if self.diff_mse is not None:
            rows.append(("diff-frame MSE", f"{self.diff_mse:.4f}", "", ""))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(v.ljust(widths[i]) for i, v in enumerate(r)).rstrip() for r in rows]
        if self.notes:
            lines.append("")
            lines.extend(f"# {k}: {v}" for k, v in self.notes.items())
        return "\n".join(lines)


def _fmt_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def sanitize_inf(obj):
    """Replace infinite floats with the "inf" sentinel string (strict JSON)."""
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, dict):
        return {k: sanitize_inf(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize_inf(v) for v in obj]
    return obj


def aggregate_metrics(per_frame: list[FrameMetrics]) -> dict:
    """Mean metrics over frames; infinite-PSNR frames are excluded from the
    PSNR average and counted in the report notes."""
    if not per_frame:
        raise ValueError("no frames to aggregate")
    mses = [m.mse for m in per_frame]
    ssims = [m.ssim for m in per_frame]
    psnrs = [m.psnr for m in per_frame if math.isfinite(m.psnr)]
    n_inf = sum(1 for m in per_frame if math.isinf(m.psnr))
    return {
        "mse": float(np.mean(mses)),
        "psnr": float(np.mean(psnrs)) if psnrs else math.inf,
        "ssim": float(np.mean(ssims)),
        "n_frames": len(per_frame),
        "n_psnr_inf_excluded": n_inf,
    }


def sequence_report(
    gen: np.ndarray,
    gt: np.ndarray,
    fg_masks: np.ndarray | None = None,
    test_poses: list[Pose2D] | None = None,
    train_poses: list[Pose2D] | None = None,
) -> EvalReport:
    """Evaluate a generated sequence ([0,255] convention) against ground truth."""
    gen = np.asarray(gen, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if gen.shape != gt.shape:
        raise ValueError("generated and ground-truth sequences differ in shape")
    whole, fg, per_frame = [], [], []
    for i in range(gen.shape[0]):
        m = frame_metrics(gen[i], gt[i])
        whole.append(m)
        rec = {"frame": i, "mse": m.mse, "psnr": m.psnr, "ssim": m.ssim}
        if fg_masks is not None and fg_masks[i].any():
            fm = frame_metrics(gen[i], gt[i], mask=fg_masks[i])
            fg.append(fm)
            rec.update({"fg_mse": fm.mse, "fg_psnr": fm.psnr, "fg_ssim": fm.ssim})
        per_frame.append(rec)
    report = EvalReport(whole=aggregate_metrics(whole), per_frame=per_frame)
    if fg:
        report.foreground = aggregate_metrics(fg)
    if gen.shape[0] >= 2:
        report.diff_mse = diff_frame_mse(gen, gt)
    if test_poses is not None and train_poses is not None:
        report.novelty = novelty_curve(test_poses, [m.ssim for m in whole], train_poses)
    return report
