"""Chroma-key extraction, compositing and the end-to-end transfer pipeline.

The synthesis stage paints the person over pure green, so the foreground
mask of a generated frame is just a color-distance threshold.  Compositing
is the exact per-pixel selection

    I_comb = m * fg + (1 - m) * B

and the fusion stage refines the pasted result.  ``transfer`` chains all
stages: part segmentation, per-part similarity fit, warping, synthesis,
keying, compositing, fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import binary_opening

from .heatmaps import RasterConfig, build_pose_volume, stack_temporal
from .skeleton import Pose2D, part_transforms
from .warp import FILL_VALUE, assemble_parts

# Pure green in the [-1, 1] value range.
KEY_GREEN = np.array([-1.0, 1.0, -1.0], dtype=np.float32)


@dataclass
class ChromaKeyConfig:
    key_color: tuple[float, float, float] = (-1.0, 1.0, -1.0)
    tau: float = 0.5

    def __post_init__(self):
        # max distance between two [-1,1] colors is 2*sqrt(3)
        if not 0.0 < self.tau < 2.0 * np.sqrt(3.0):
            raise ValueError(f"chroma threshold {self.tau} outside (0, 2*sqrt(3))")


def extract_foreground_mask(img: np.ndarray, ck: ChromaKeyConfig | None = None) -> np.ndarray:
    """Boolean mask of pixels farther than tau from the key color.

    Pure thresholding; apply ``clean_mask`` separately if speckle removal
    is wanted before compositing.
    """
    ck = ck or ChromaKeyConfig()
    img = np.asarray(img, dtype=np.float32)
    key = np.asarray(ck.key_color, dtype=np.float32)
    dist = np.sqrt(((img - key) ** 2).sum(axis=-1))
    return dist > ck.tau


def clean_mask(mask: np.ndarray) -> np.ndarray:
    """3x3 morphological opening; suppresses speckle at part boundaries."""
    return binary_opening(np.asarray(mask, dtype=bool), structure=np.ones((3, 3), dtype=bool))


def composite(fg: np.ndarray, mask: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Per-pixel foreground-over-background selection.

    ``mask`` may be boolean or a float alpha in [0, 1] (used for soft
    recompositing); 0/1 masks reproduce fg and background bit-exactly.
    """
    fg = np.asarray(fg)
    background = np.asarray(background)
    if fg.shape != background.shape:
        raise ValueError(f"foreground {fg.shape} vs background {background.shape}")
    m = np.asarray(mask, dtype=fg.dtype)
    if m.ndim == fg.ndim - 1:
        m = m[..., None]
    return m * fg + (1.0 - m) * background


def _to_nchw(arr: np.ndarray | torch.Tensor, name: str) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(np.asarray(arr, dtype=np.float32) if isinstance(arr, np.ndarray) else arr)
    t = t.float()
    if t.dim() == 3:
        return t.permute(2, 0, 1).unsqueeze(0), False
    if t.dim() == 4:
        return t.permute(0, 3, 1, 2), True
    raise ValueError(f"{name} must be HWC or NHWC, got shape {tuple(t.shape)}")


def _from_nchw(t: torch.Tensor, batched: bool) -> np.ndarray:
    out = t.permute(0, 2, 3, 1).numpy()
    return out if batched else out[0]


def _run_generator(g, inputs: list, expected_channels: int, what: str) -> np.ndarray:
    tensors = []
    batched = False
    for arr, name in inputs:
        t, b = _to_nchw(arr, name)
        tensors.append(t)
        batched = batched or b
    x = torch.cat(tensors, dim=1)
    if x.shape[1] != expected_channels:
        raise ValueError(
            f"{what}: generator expects {expected_channels} input channels, got {x.shape[1]}"
        )
    with torch.no_grad():
        g.eval()
        out = g(x)
    return _from_nchw(out, batched)


def synthesize_foreground(t_parts: np.ndarray, p_stack: np.ndarray, g_human) -> np.ndarray:
    """First stage: transformed parts + stacked pose maps -> person on green."""
    return _run_generator(
        g_human,
        [(t_parts, "T"), (p_stack, "P")],
        g_human.in_channels,
        "synthesize_foreground",
    )


def fuse(i_comb: np.ndarray, p_stack: np.ndarray, g_fusion) -> np.ndarray:
    """Second stage: pasted frame + stacked pose maps -> final frame."""
    return _run_generator(
        g_fusion,
        [(i_comb, "I_comb"), (p_stack, "P")],
        g_fusion.in_channels,
        "fuse",
    )


@dataclass
class TransferResult:
    """All pipeline intermediates for one generated frame."""

    t_parts: np.ndarray
    p_stack: np.ndarray
    foreground: np.ndarray
    fg_mask: np.ndarray
    combined: np.ndarray
    output: np.ndarray
    transforms: object = None


def transfer(
    image_in: np.ndarray,
    part_masks_in: np.ndarray,
    pose_in: Pose2D,
    ref_pose_history: list[Pose2D],
    g_human,
    g_fusion,
    background: np.ndarray,
    k_history: int = 3,
    raster_cfg: RasterConfig | None = None,
    chroma: ChromaKeyConfig | None = None,
    use_mask_cleanup: bool = True,
) -> TransferResult:
    """Full motion transfer for one reference pose.

    ``ref_pose_history`` is ordered oldest -> newest; the newest pose is the
    one being transferred.  Stage failures propagate with the stage name.
    """
    if not ref_pose_history:
        raise ValueError("transfer: empty reference pose history")
    h, w = image_in.shape[:2]
    ref_pose = ref_pose_history[-1]

    def stage(name, fn):
        try:
            return fn()
        except Exception as e:
            raise RuntimeError(f"transfer failed at stage {name!r}: {e}") from e

    transforms = stage("part_transforms", lambda: part_transforms(pose_in, ref_pose))
    t_parts = stage(
        "assemble_parts",
        lambda: assemble_parts(image_in, part_masks_in, transforms, FILL_VALUE).numpy(),
    )
    p_stack = stage(
        "pose_volume",
        lambda: stack_temporal(
            [build_pose_volume(p, h, w, raster_cfg) for p in ref_pose_history[-k_history:]],
            k_history,
        ),
    )
    fg = stage("synthesize_foreground", lambda: synthesize_foreground(t_parts, p_stack, g_human))
    mask = stage("chroma_key", lambda: extract_foreground_mask(fg, chroma))
    if use_mask_cleanup:
        mask = clean_mask(mask)
    comb = stage("composite", lambda: composite(fg, mask, background))
    out = stage("fuse", lambda: fuse(comb, p_stack, g_fusion))
    return TransferResult(
        t_parts=t_parts,
        p_stack=p_stack,
        foreground=fg,
        fg_mask=mask,
        combined=comb,
        output=out,
        transforms=transforms,
    )
