"""Two-stage joint training: pair sampling, optimization loop, checkpoints.

Both generators train jointly with their own supervision: the synthesis
stage against the reference person over pure green, the fusion stage
against the full reference frame, with gradients flowing from the fusion
loss into the synthesis generator through the compositing path.  Both
discriminators take one relativistic-average step (plus gradient penalty)
per generator step.  Runs are bit-reproducible on a single-threaded
configuration: all randomness flows from the config seed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from . import __version__
from .config import TrainConfig
from .dataset import VideoData, load_video_dir, resize_video, to_uint8
from .features import RandomFeaturePyramid, pretrain_pose_encoders
from .heatmaps import RasterConfig, build_pose_volume
from .losses import (
    feature_matching_terms,
    gradient_penalty,
    patch_scores,
    perceptual_loss,
    rela_d_loss,
    rela_g_terms,
    run_discriminator,
    semantic_pose_loss,
    total_generator_loss,
)
from .metrics import frame_metrics, sanitize_inf
from .networks import (
    CoarseGenerator,
    DiscriminatorSpec,
    GeneratorSpec,
    MultiScaleDiscriminator,
    build_generator,
    init_weights,
    promote_to_fine,
)
from .pipeline import ChromaKeyConfig, transfer
from .skeleton import PART_NAMES, part_transforms
from .synthetic import estimate_background
from .warp import FILL_VALUE, _base_points, assemble_parts, bilinear_sample

CHECKPOINT_VERSION = 1
T_CHANNELS = 30
GREEN = torch.tensor([-1.0, 1.0, -1.0]).view(1, 3, 1, 1)


class PairSample(NamedTuple):
    in_idx: int
    ref_idx: int
    history: tuple[int, ...]


def split_frames(n_frames: int, ratio: float) -> tuple[range, range]:
    cut = int(np.floor(n_frames * ratio))
    return range(0, cut), range(cut, n_frames)


def _sample_pairs(rng, frame_range: range, n_pairs: int, k: int) -> list[PairSample]:
    lo, hi = frame_range.start, frame_range.stop
    pairs = []
    for _ in range(n_pairs):
        in_idx = int(rng.integers(lo, hi))
        ref_idx = int(rng.integers(lo, hi))
        history = tuple(max(lo, ref_idx - offset) for offset in range(k - 1, -1, -1))
        pairs.append(PairSample(in_idx, ref_idx, history))
    return pairs


def split_and_sample(n_frames: int, cfg: TrainConfig) -> tuple[list[PairSample], list[PairSample]]:
    """Contiguous temporal split, then uniform with-replacement pair draws.

    Pose history indices clamp to the split start so no pair ever reads
    across the train/test boundary.
    """
    if n_frames < 2 * cfg.k_history:
        raise ValueError(f"video too short: {n_frames} frames < 2*K={2 * cfg.k_history}")
    train_range, test_range = split_frames(n_frames, cfg.split_ratio)
    if len(train_range) == 0 or len(test_range) == 0:
        raise ValueError(f"split ratio {cfg.split_ratio} leaves an empty split for {n_frames} frames")
    rng = np.random.default_rng([cfg.seed, 101])
    train_pairs = _sample_pairs(rng, train_range, cfg.n_train_pairs, cfg.k_history)
    test_pairs = _sample_pairs(rng, test_range, cfg.n_test_pairs, cfg.k_history)
    return train_pairs, test_pairs


@dataclass
class FrameStore:
    """A clip prepared for one training scale: tensors plus caches."""

    images: np.ndarray  # (N, H, W, 3) float32
    part_masks: np.ndarray  # (N, 10, H, W) bool
    fg_masks: np.ndarray  # (N, H, W) bool
    poses: list
    images_t: torch.Tensor  # (N, 3, H, W)
    images_hwc_t: torch.Tensor  # (N, H, W, 3)
    part_masks_t: torch.Tensor  # (N, 10, H, W) bool
    fg_t: torch.Tensor  # (N, 1, H, W)
    pose_volumes_t: torch.Tensor  # (N, 15, H, W)
    background: np.ndarray  # (H, W, 3)
    background_t: torch.Tensor  # (1, 3, H, W)
    raster_cfg: RasterConfig
    _tf_cache: dict = None

    @classmethod
    def build(cls, data: VideoData, resolution: int, cfg: TrainConfig, background_frames: range) -> "FrameStore":
        rs = resize_video(data, resolution, resolution)
        raster_cfg = RasterConfig(sigma_ratio=cfg.sigma_ratio, width_ratio=cfg.width_ratio)
        vols = np.stack(
            [
                build_pose_volume(p, resolution, resolution, raster_cfg).transpose(2, 0, 1)
                for p in rs.poses
            ]
        )
        fg = rs.fg_masks
        bg_idx = list(background_frames)
        background = estimate_background(rs.images[bg_idx], fg[bg_idx])
        images_hwc = torch.as_tensor(rs.images)
        return cls(
            images=rs.images,
            part_masks=rs.part_masks,
            fg_masks=fg,
            poses=rs.poses,
            images_t=images_hwc.permute(0, 3, 1, 2).contiguous(),
            images_hwc_t=images_hwc,
            part_masks_t=torch.as_tensor(rs.part_masks),
            fg_t=torch.as_tensor(fg).unsqueeze(1).float(),
            pose_volumes_t=torch.as_tensor(vols),
            background=background,
            background_t=torch.as_tensor(background).permute(2, 0, 1).unsqueeze(0),
            raster_cfg=raster_cfg,
            _tf_cache={},
        )

    @property
    def size(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def transforms_for(self, in_idx: int, ref_idx: int):
        key = (in_idx, ref_idx)
        if key not in self._tf_cache:
            self._tf_cache[key] = part_transforms(self.poses[in_idx], self.poses[ref_idx])
        return self._tf_cache[key]

    def parts_tensor(self, in_idx: int, ref_idx: int) -> torch.Tensor:
        """(30, H, W) transformed-parts volume for one pair."""
        tf = self.transforms_for(in_idx, ref_idx)
        t = assemble_parts(self.images[in_idx], self.part_masks[in_idx], tf)
        return t.permute(2, 0, 1).float()

    def parts_batch(self, pairs: list[PairSample]) -> torch.Tensor:
        """(B, 30, H, W) transformed parts for a whole batch in one warp call.

        Equivalent to stacking ``parts_tensor`` results; missing parts use an
        identity grid with an empty mask, which degenerates to a fill slab.
        """
        h, w = self.size
        b = len(pairs)
        mats = np.empty((b, len(PART_NAMES), 2, 3))
        masks = torch.zeros((b, len(PART_NAMES), h, w), dtype=torch.bool)
        identity = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        for s, pair in enumerate(pairs):
            tf = self.transforms_for(pair.in_idx, pair.ref_idx)
            for i, part in enumerate(PART_NAMES):
                m = tf[part]
                if m is None:
                    mats[s, i] = identity
                else:
                    mats[s, i] = m.inverse().m
                    masks[s, i] = self.part_masks_t[pair.in_idx, i]
        base = _base_points(h, w)  # (H, W, 2) float64
        mt = torch.as_tensor(mats)
        grids = torch.einsum("hwj,bkij->bkhwi", base, mt[..., :2]) + mt[..., 2].view(b, -1, 1, 1, 2)
        imgs = self.images_hwc_t[[p.in_idx for p in pairs]]  # (B, H, W, 3)
        src = torch.where(masks.unsqueeze(-1), imgs.unsqueeze(1), torch.tensor(FILL_VALUE))
        warped = bilinear_sample(
            src.reshape(b * len(PART_NAMES), h, w, 3),
            grids.reshape(b * len(PART_NAMES), h, w, 2).float(),
            FILL_VALUE,
        )
        return warped.view(b, len(PART_NAMES), h, w, 3).permute(0, 1, 4, 2, 3).reshape(b, -1, h, w)


def make_batch(store: FrameStore, pairs: list[PairSample], step: int, cfg: TrainConfig) -> dict:
    n = len(pairs)
    idxs = [(step * cfg.batch + i) % n for i in range(cfg.batch)]
    chosen = [pairs[i] for i in idxs]
    t_parts = store.parts_batch(chosen)
    p_stack = torch.stack(
        [torch.cat([store.pose_volumes_t[h] for h in p.history], dim=0) for p in chosen]
    )
    i_ref = torch.stack([store.images_t[p.ref_idx] for p in chosen])
    fg_ref = torch.stack([store.fg_t[p.ref_idx] for p in chosen])
    y_green = fg_ref * i_ref + (1.0 - fg_ref) * GREEN
    return {"t_parts": t_parts, "p": p_stack, "i_ref": i_ref, "y_green": y_green, "pairs": chosen}


def chroma_mask_t(x: torch.Tensor, tau: float) -> torch.Tensor:
    """(B, 1, H, W) float chroma mask of a batch of generated frames."""
    d = ((x - GREEN) ** 2).sum(dim=1, keepdim=True).sqrt()
    return (d > tau).float()


def open3_t(mask: torch.Tensor) -> torch.Tensor:
    """3x3 binary opening on a float 0/1 mask."""
    eroded = 1.0 - F.max_pool2d(1.0 - mask, 3, stride=1, padding=1)
    return F.max_pool2d(eroded, 3, stride=1, padding=1)


@dataclass
class StageModels:
    stage: str
    g_h: torch.nn.Module
    g_f: torch.nn.Module
    d_h: MultiScaleDiscriminator
    d_f: MultiScaleDiscriminator
    phi: RandomFeaturePyramid
    phi_p: torch.nn.Module | None
    phi_s: torch.nn.Module | None
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    gp_gen: torch.Generator


def _generator_spec(cfg: TrainConfig, stage: str) -> GeneratorSpec:
    scales = ("coarse",) if stage == "coarse" else ("coarse", "fine")
    return GeneratorSpec(
        in_channels=T_CHANNELS + 15 * cfg.k_history,
        base_channels=cfg.base_channels,
        n_down=cfg.n_down,
        n_residual=cfg.n_residual,
        n_residual_fine=cfg.n_residual_fine,
        scales=scales,
    )


def build_stage_models(
    cfg: TrainConfig,
    stage: str,
    phi_p=None,
    phi_s=None,
    coarse_g_h: CoarseGenerator | None = None,
    coarse_g_f: CoarseGenerator | None = None,
) -> StageModels:
    """Fresh models (plus optimizers) for one training scale.

    Model initialization consumes the torch global RNG; seed it beforehand
    for reproducible builds.
    """
    cond_ch = 15 * cfg.k_history
    n_scales = cfg.d_scales_coarse if stage == "coarse" else cfg.d_scales_fine
    spec_h = _generator_spec(cfg, stage)
    spec_f = GeneratorSpec(
        in_channels=3 + cond_ch,
        base_channels=cfg.base_channels,
        n_down=cfg.n_down,
        n_residual=cfg.n_residual,
        n_residual_fine=cfg.n_residual_fine,
        scales=spec_h.scales,
    )
    if stage == "coarse":
        g_h = build_generator(spec_h)
        g_f = build_generator(spec_f)
        init_weights(g_h)
        init_weights(g_f)
    else:
        if coarse_g_h is None or coarse_g_f is None:
            raise ValueError("fine stage requires trained coarse generators")
        g_h = promote_to_fine(coarse_g_h, spec_h)
        g_f = promote_to_fine(coarse_g_f, spec_f)
        init_weights(g_h.front)
        init_weights(g_h.core)
        init_weights(g_h.back)
        init_weights(g_f.front)
        init_weights(g_f.core)
        init_weights(g_f.back)
    d_h = MultiScaleDiscriminator(
        DiscriminatorSpec(3 + cond_ch, cfg.d_base_channels, cfg.d_layers, n_scales)
    )
    d_f = MultiScaleDiscriminator(
        DiscriminatorSpec(3 + cond_ch, cfg.d_base_channels, cfg.d_layers, n_scales)
    )
    init_weights(d_h)
    init_weights(d_f)
    phi = RandomFeaturePyramid(
        3, cfg.perceptual_stages, cfg.perceptual_base, seed=cfg.perceptual_seed
    )
    opt_g = torch.optim.Adam(
        list(g_h.parameters()) + list(g_f.parameters()), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2)
    )
    opt_d = torch.optim.Adam(
        list(d_h.parameters()) + list(d_f.parameters()), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2)
    )
    gp_gen = torch.Generator().manual_seed(cfg.seed + 7919)
    return StageModels(stage, g_h, g_f, d_h, d_f, phi, phi_p, phi_s, opt_g, opt_d, gp_gen)


class NonFiniteLossError(RuntimeError):
    pass


def _check_finite(name: str, value: torch.Tensor, batch: dict, dump_path: Path | None):
    if torch.isfinite(value).all():
        return
    if dump_path is not None:
        np.savez(
            dump_path,
            **{k: v.detach().numpy() for k, v in batch.items() if isinstance(v, torch.Tensor)},
        )
    where = f" (offending batch dumped to {dump_path})" if dump_path else ""
    raise NonFiniteLossError(f"non-finite {name} loss{where}")


def train_step(
    batch: dict,
    models: StageModels,
    cfg: TrainConfig,
    background_t: torch.Tensor,
    dump_path: Path | None = None,
) -> dict:
    """One alternating update; returns the per-step metrics record."""
    w = cfg.weights
    p = batch["p"]
    y_h = batch["y_green"]
    y_f = batch["i_ref"]

    x_h = models.g_h(torch.cat([batch["t_parts"], p], dim=1))
    m = chroma_mask_t(x_h, cfg.chroma_tau)
    if cfg.mask_cleanup:
        m = open3_t(m)
    i_comb = m * x_h + (1.0 - m) * background_t
    x_f = models.g_f(torch.cat([i_comb, p], dim=1))

    # discriminators: relativistic average terms plus gradient penalty
    models.opt_d.zero_grad(set_to_none=True)
    l_rela_d = rela_d_loss(models.d_h, y_h, x_h.detach(), p) + rela_d_loss(
        models.d_f, y_f, x_f.detach(), p
    )
    l_gp = gradient_penalty(
        models.d_h, y_h, x_h.detach(), p, generator=models.gp_gen
    ) + gradient_penalty(models.d_f, y_f, x_f.detach(), p, generator=models.gp_gen)
    d_total = l_rela_d + w.w_gp * l_gp
    _check_finite("discriminator", d_total, batch, dump_path)
    d_total.backward()
    models.opt_d.step()

    # generators: both stages' totals, 1:1 (one D evaluation per branch,
    # shared between the relativistic and feature-matching terms)
    zero = torch.zeros(())
    comps = {}
    for tag, y, x, d in (("h", y_h, x_h, models.d_h), ("f", y_f, x_f, models.d_f)):
        real_feats = run_discriminator(d, y, p)
        fake_feats = run_discriminator(d, x, p)
        comps[tag] = {
            "rela_g": rela_g_terms(patch_scores(real_feats), patch_scores(fake_feats)),
            "fm": feature_matching_terms(real_feats, fake_feats),
            "vgg": perceptual_loss(models.phi, y, x),
            "sp": (
                semantic_pose_loss(models.phi_p, models.phi_s, y, x, w.w_s)
                if w.w_sp > 0 and models.phi_p is not None
                else zero
            ),
        }
    g_total = total_generator_loss(w, comps["h"]) + total_generator_loss(w, comps["f"])
    _check_finite("generator", g_total, batch, dump_path)
    models.opt_g.zero_grad(set_to_none=True)
    if g_total.requires_grad:
        g_total.backward()
        models.opt_g.step()

    fusion_l1 = (x_f.detach() - y_f).abs().mean()
    return {
        "l_rela_d": float(l_rela_d.detach()),
        "l_rela_g": float((comps["h"]["rela_g"] + comps["f"]["rela_g"]).detach()),
        "l_gp": float(l_gp.detach()),
        "l_fm": float((comps["h"]["fm"] + comps["f"]["fm"]).detach()),
        "l_vgg": float((comps["h"]["vgg"] + comps["f"]["vgg"]).detach()),
        "l_sp": float((comps["h"]["sp"] + comps["f"]["sp"]).detach()),
        "total": float(g_total.detach()),
        "fusion_l1": float(fusion_l1),
    }


def save_checkpoint(path: Path | str, models: StageModels, cfg: TrainConfig, step: int) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "stage": models.stage,
        "step": step,
        "models": {
            "g_h": models.g_h.state_dict(),
            "g_f": models.g_f.state_dict(),
            "d_h": models.d_h.state_dict(),
            "d_f": models.d_f.state_dict(),
        },
        "extractors": {
            "phi_p": models.phi_p.state_dict() if models.phi_p is not None else None,
            "phi_s": models.phi_s.state_dict() if models.phi_s is not None else None,
        },
        "optims": {"g": models.opt_g.state_dict(), "d": models.opt_d.state_dict()},
        "torch_rng": torch.get_rng_state(),
        "gp_rng": models.gp_gen.get_state(),
    }
    torch.save(payload, str(path))


def load_checkpoint(path: Path | str, cfg: TrainConfig | None = None) -> dict:
    """Load a checkpoint; fails loudly when architecture config differs."""
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    if cfg is not None:
        saved = TrainConfig.from_dict(payload["config"])
        mismatches = {
            k: (v, getattr(saved, k))
            for k, v in cfg.arch_signature().items()
            if saved.arch_signature()[k] != v
        }
        if mismatches:
            raise ValueError(f"checkpoint architecture mismatch: {mismatches}")
    return payload


def restore_models(payload: dict, phi_p=None, phi_s=None) -> tuple[StageModels, TrainConfig, int]:
    """Rebuild models from a checkpoint payload, restoring all state."""
    cfg = TrainConfig.from_dict(payload["config"])
    stage = payload["stage"]
    if stage == "coarse":
        models = build_stage_models(cfg, "coarse", phi_p, phi_s)
    else:
        base_h = CoarseGenerator(
            T_CHANNELS + 15 * cfg.k_history, cfg.base_channels, cfg.n_down, cfg.n_residual
        )
        base_f = CoarseGenerator(
            3 + 15 * cfg.k_history, cfg.base_channels, cfg.n_down, cfg.n_residual
        )
        models = build_stage_models(cfg, "fine", phi_p, phi_s, base_h, base_f)
    models.g_h.load_state_dict(payload["models"]["g_h"])
    models.g_f.load_state_dict(payload["models"]["g_f"])
    models.d_h.load_state_dict(payload["models"]["d_h"])
    models.d_f.load_state_dict(payload["models"]["d_f"])
    if payload["extractors"]["phi_p"] is not None and models.phi_p is not None:
        models.phi_p.load_state_dict(payload["extractors"]["phi_p"])
        models.phi_s.load_state_dict(payload["extractors"]["phi_s"])
    models.opt_g.load_state_dict(payload["optims"]["g"])
    models.opt_d.load_state_dict(payload["optims"]["d"])
    torch.set_rng_state(payload["torch_rng"])
    models.gp_gen.set_state(payload["gp_rng"])
    return models, cfg, payload["step"]


def evaluate_models(
    store: FrameStore, g_h, g_f, pairs: list[PairSample], cfg: TrainConfig
) -> dict:
    """Identity-transfer evaluation on held-out pairs (8-bit metric convention)."""
    chroma = ChromaKeyConfig(tau=cfg.chroma_tau)
    records = []
    for pair in pairs:
        hist = [store.poses[h] for h in pair.history]
        res = transfer(
            store.images[pair.in_idx],
            store.part_masks[pair.in_idx],
            store.poses[pair.in_idx],
            hist,
            g_h,
            g_f,
            store.background,
            k_history=cfg.k_history,
            raster_cfg=store.raster_cfg,
            chroma=chroma,
            use_mask_cleanup=cfg.mask_cleanup,
        )
        gt8 = to_uint8(store.images[pair.ref_idx]).astype(np.float64)
        out8 = to_uint8(res.output).astype(np.float64)
        comb8 = to_uint8(res.combined).astype(np.float64)
        m_out = frame_metrics(out8, gt8)
        m_comb = frame_metrics(comb8, gt8)
        rec = {
            "in_idx": pair.in_idx,
            "ref_idx": pair.ref_idx,
            "mse": m_out.mse,
            "psnr": m_out.psnr,
            "ssim": m_out.ssim,
            "comb_mse": m_comb.mse,
            "comb_ssim": m_comb.ssim,
        }
        fg = store.fg_masks[pair.ref_idx]
        if fg.any():
            m_fg = frame_metrics(out8, gt8, mask=fg)
            rec.update({"fg_mse": m_fg.mse, "fg_ssim": m_fg.ssim})
        records.append(rec)
    ssims = [r["ssim"] for r in records]
    mses = [r["mse"] for r in records]
    fused_wins = sum(1 for r in records if r["mse"] <= r["comb_mse"])
    return {
        "records": records,
        "mean_ssim": float(np.mean(ssims)),
        "mean_mse": float(np.mean(mses)),
        "mean_comb_mse": float(np.mean([r["comb_mse"] for r in records])),
        "fused_beats_pasted_frac": fused_wins / len(records) if records else 0.0,
    }


def _run_stage(
    models: StageModels,
    store: FrameStore,
    train_pairs: list[PairSample],
    iters: int,
    start_step: int,
    cfg: TrainConfig,
    out_dir: Path,
    log_file,
) -> None:
    for step in range(start_step, iters):
        batch = make_batch(store, train_pairs, step, cfg)
        rec = train_step(
            batch, models, cfg, store.background_t, out_dir / f"diagnostic_step{step}.npz"
        )
        if cfg.log_every and step % cfg.log_every == 0:
            row = {"step": step, "stage": models.stage, **rec}
            log_file.write(json.dumps(row) + "\n")
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / "checkpoint.pt", models, cfg, step + 1)
    log_file.flush()


def train(
    video: Path | str | VideoData,
    cfg: TrainConfig,
    out_dir: Path | str,
    resume: Path | str | None = None,
    eval_baseline: bool = True,
) -> dict:
    """Full staged training run; writes checkpoint, metrics log, eval report.

    Returns a summary dict with the trained and baseline evaluation
    aggregates and the output paths.
    """
    t_start = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.num_threads:
        torch.set_num_threads(cfg.num_threads)

    data = video if isinstance(video, VideoData) else load_video_dir(video)
    train_pairs, test_pairs = split_and_sample(data.n_frames, cfg)
    train_range, _ = split_frames(data.n_frames, cfg.split_ratio)

    stages = [("coarse", cfg.res_coarse, cfg.iters_coarse)]
    if cfg.iters_fine > 0:
        stages.append(("fine", cfg.res_fine, cfg.iters_fine))

    torch.manual_seed(cfg.seed)

    # fixed pose/parsing encoders, pre-trained on the training split only
    phi_p = phi_s = None
    if cfg.weights.w_sp > 0:
        store0 = FrameStore.build(data, cfg.res_coarse, cfg, train_range)
        idx = list(train_range)
        phi_p, phi_s = pretrain_pose_encoders(
            store0.images[idx],
            store0.pose_volumes_t.numpy()[idx],
            store0.part_masks[idx],
            steps=cfg.sp_pretrain_steps,
            feat_channels=cfg.sp_feat_channels,
            seed=cfg.seed,
        )
        torch.manual_seed(cfg.seed)  # re-anchor the main-model init stream

    resume_payload = None
    resume_stage = None
    if resume is not None:
        resume_payload = load_checkpoint(resume, cfg)
        resume_stage = resume_payload["stage"]

    models = None
    store = None
    log_path = out_dir / "metrics.jsonl"
    mode = "a" if resume is not None else "w"
    with open(log_path, mode) as log_file:
        for stage, res, iters in stages:
            start_step = 0
            if resume_payload is not None:
                if stage != resume_stage:
                    continue  # this stage finished before the checkpoint
                models, _, start_step = restore_models(resume_payload, phi_p, phi_s)
                resume_payload = None
            elif stage == "coarse":
                models = build_stage_models(cfg, "coarse", phi_p, phi_s)
            else:
                coarse_h = models.g_h if isinstance(models.g_h, CoarseGenerator) else models.g_h.coarse
                coarse_f = models.g_f if isinstance(models.g_f, CoarseGenerator) else models.g_f.coarse
                models = build_stage_models(cfg, "fine", phi_p, phi_s, coarse_h, coarse_f)
            store = FrameStore.build(data, res, cfg, train_range)
            _run_stage(models, store, train_pairs, iters, start_step, cfg, out_dir, log_file)
            save_checkpoint(out_dir / "checkpoint.pt", models, cfg, iters)

    train_seconds = time.time() - t_start

    final_stage, final_res, _ = stages[-1]
    eval_store = store if store is not None else FrameStore.build(data, final_res, cfg, train_range)
    evaluation = evaluate_models(eval_store, models.g_h, models.g_f, test_pairs, cfg)

    baseline = None
    if eval_baseline:
        torch.manual_seed(cfg.seed)
        base = build_stage_models(cfg, "coarse", None, None)
        if final_stage == "fine":
            base = build_stage_models(cfg, "fine", None, None, base.g_h, base.g_f)
        baseline = evaluate_models(eval_store, base.g_h, base.g_f, test_pairs, cfg)

    report = {
        "config": cfg.to_dict(),
        "train_seconds": train_seconds,
        "trained": evaluation,
        "baseline": baseline,
    }
    with open(out_dir / "eval_report.json", "w") as f:
        json.dump(sanitize_inf(report), f, indent=2)
    return {
        "checkpoint": str(out_dir / "checkpoint.pt"),
        "metrics_log": str(log_path),
        "eval_report": str(out_dir / "eval_report.json"),
        "train_seconds": train_seconds,
        "trained": {k: v for k, v in evaluation.items() if k != "records"},
        "baseline": None
        if baseline is None
        else {k: v for k, v in baseline.items() if k != "records"},
    }
