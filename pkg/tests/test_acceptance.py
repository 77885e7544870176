"""Acceptance suite: every shipping criterion, one pass/fail line each.

The two training-based checks share one desk-scale smoke run (module-scoped
fixture); the determinism check repeats that run and compares metric logs
byte for byte.  Run with ``pytest -s tests/test_acceptance.py`` to see the
per-criterion lines as they pass.
"""

import hashlib
import json
import time

import numpy as np
import pytest
import torch

from motiontransfer.config import TrainConfig
from motiontransfer.dataset import VideoData
from motiontransfer.heatmaps import build_pose_volume, stack_temporal
from motiontransfer.losses import (
    LossWeights,
    feature_matching_loss,
    gradient_penalty,
    perceptual_loss,
    rela_d_loss,
    rela_g_loss,
    semantic_pose_loss,
)
from motiontransfer.metrics import diff_frame_mse, frame_metrics
from motiontransfer.pipeline import ChromaKeyConfig, KEY_GREEN, composite, extract_foreground_mask
from motiontransfer.skeleton import PartSegment, estimate_part_transform, part_segments
from motiontransfer.synthetic import SceneConfig, generate_video
from motiontransfer.training import split_and_sample, train
from motiontransfer.warp import bilinear_sample

from conftest import make_pose
from test_heatmaps import dense_convolve, rect_mask_oracle
from test_losses import SmoothConvD
from test_metrics import brute_force_psnr, brute_force_ssim

torch.set_num_threads(1)


def report(n, text):
    print(f"\nACCEPTANCE {n:02d} PASS: {text}")


SMOKE_SCENE = SceneConfig(height=64, width=64, n_frames=300, background="static", shadow=True)
SMOKE_SEED = 20


def smoke_config():
    return TrainConfig(
        seed=7,
        res_coarse=64,
        iters_coarse=3000,
        iters_fine=0,
        batch=4,
        n_train_pairs=2000,
        n_test_pairs=200,
        base_channels=16,
        n_residual=3,
        d_base_channels=8,
        d_layers=3,
        perceptual_stages=5,
        perceptual_base=8,
        weights=LossWeights(w_sp=0.0),
        sp_pretrain_steps=0,
        checkpoint_every=3000,
        num_threads=1,
    )


@pytest.fixture(scope="module")
def smoke_data():
    frames = generate_video(SMOKE_SCENE, seed=SMOKE_SEED)
    return VideoData(
        images=np.stack([f.image for f in frames]),
        part_masks=np.stack([f.part_masks for f in frames]),
        poses=[f.pose for f in frames],
    )


@pytest.fixture(scope="module")
def smoke_run(smoke_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke_a")
    summary = train(smoke_data, smoke_config(), out, eval_baseline=True)
    return {"out": out, "summary": summary}


def test_criterion_01_geometry_exactness():
    """1,000 random non-degenerate segment pairs map exactly, in under 1 s."""
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    n = 0
    while n < 1000:
        src = rng.uniform(-200, 200, (2, 2))
        dst = rng.uniform(-200, 200, (2, 2))
        if np.linalg.norm(src[1] - src[0]) < 2 or np.linalg.norm(dst[1] - dst[0]) < 2:
            continue
        m = estimate_part_transform(PartSegment("head", *src), PartSegment("head", *dst))
        worst = max(worst, float(np.abs(m.apply(src) - dst).max()))
        n += 1
    elapsed = time.perf_counter() - t0
    assert worst < 1e-9, f"max endpoint error {worst}"
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    report(1, f"1000 similarity fits exact (max err {worst:.2e}) in {elapsed:.2f}s")


def test_criterion_02_warper_gradient_check():
    """bilinear_sample gradients vs central differences (step 1e-3), 50 cases."""
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    h = 1e-3
    for case in range(50):
        img = torch.tensor(rng.uniform(-1, 1, (8, 8, 1)), requires_grad=True)
        base = rng.integers(0, 7, (8, 8, 2)).astype(float)
        grid = torch.tensor(base + rng.uniform(0.1, 0.9, (8, 8, 2)), requires_grad=True)
        weights = torch.tensor(rng.uniform(-1, 1, (8, 8, 1)))
        (bilinear_sample(img, grid) * weights).sum().backward()
        g_img = img.grad.reshape(-1)
        g_grid = grid.grad.reshape(-1)

        def f(i_t, g_t):
            return float((bilinear_sample(i_t, g_t) * weights).sum())

        flat_img = img.detach().reshape(-1)
        flat_grid = grid.detach().reshape(-1)
        for li in rng.choice(flat_img.numel(), 6, replace=False):
            plus, minus = flat_img.clone(), flat_img.clone()
            plus[li] += h
            minus[li] -= h
            fd = (f(plus.reshape(8, 8, 1), grid.detach()) - f(minus.reshape(8, 8, 1), grid.detach())) / (2 * h)
            a = float(g_img[li])
            assert abs(a - fd) / max(abs(a), abs(fd), 1e-8) < 1e-3, (case, "img", a, fd)
        for li in rng.choice(flat_grid.numel(), 6, replace=False):
            plus, minus = flat_grid.clone(), flat_grid.clone()
            plus[li] += h
            minus[li] -= h
            fd = (f(img.detach(), plus.reshape(8, 8, 2)) - f(img.detach(), minus.reshape(8, 8, 2))) / (2 * h)
            a = float(g_grid[li])
            assert abs(a - fd) / max(abs(a), abs(fd), 1e-8) < 1e-3, (case, "grid", a, fd)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"took {elapsed:.2f}s"
    report(2, f"50 gradient cases (image+grid paths) within rel 1e-3 in {elapsed:.2f}s")


def test_criterion_03_pose_volume_contract():
    """45 channels at K=3, values in [0,1], peaks exactly 1, oracle match on 32x32."""
    pose = make_pose(seed=3, scale=0.5)
    vols = [build_pose_volume(make_pose(seed=s, scale=0.5), 32, 32) for s in (1, 2, 3)]
    stacked = stack_temporal(vols, k=3)
    assert stacked.shape[-1] == 45, f"stacked channels {stacked.shape[-1]}"
    assert stacked.min() >= 0.0 and stacked.max() <= 1.0
    vol = build_pose_volume(pose, 32, 32)
    for c in range(15):
        assert vol[..., c].max() == pytest.approx(1.0), f"channel {c} peak"
    # dense-convolution oracle on a rectangle part channel at 32x32
    from motiontransfer.heatmaps import RasterConfig, rasterize_part_channel

    cfg = RasterConfig()
    sigma = cfg.sigma_for(32, 32)
    segs = [s for s in part_segments(pose) if not s.missing]
    checked = 0
    for s in segs[:4]:
        if s.part_id == "head":
            continue
        width = cfg.width_for(s.length)
        got = rasterize_part_channel(s, 32, 32, width, sigma)
        expected = dense_convolve(rect_mask_oracle(s.p0, s.p1, width, 32, 32), sigma)
        if expected.max() > 0:
            expected /= expected.max()
        np.testing.assert_allclose(got, expected, atol=1e-6)
        checked += 1
    assert checked >= 2
    report(3, f"45-channel stack in [0,1], peaks 1.0, {checked} channels match dense oracle @1e-6")


def test_criterion_04_loss_analytics():
    """Relativistic constants, GP closed forms, zero at x=y, FD gradients."""
    t0 = time.perf_counter()
    torch.set_default_dtype(torch.float64)
    try:
        y = torch.zeros(4, 3, 8, 8)
        x = torch.ones(4, 3, 8, 8)

        def const_d(img, cond):
            return [[torch.full((img.shape[0], 1, 3, 3), 0.25)]]

        assert float(rela_d_loss(const_d, y, x, None)) == 0.5
        assert float(rela_g_loss(const_d, y, x, None)) == 0.5

        def pixel_sum_d(img, cond):
            return [[img.sum(dim=(1, 2, 3)).reshape(-1, 1, 1, 1)]]

        gp = gradient_penalty(pixel_sum_d, y, x, None, eps=torch.full((4, 1, 1, 1), 0.5))
        expected = (np.sqrt(3 * 8 * 8) - 1.0) ** 2
        assert abs(float(gp.detach()) - expected) < 1e-6

        def const_out_d(img, cond):
            return [[torch.full((img.shape[0], 1, 2, 2), 1.5) + 0.0 * img.mean()]]

        gp_const = gradient_penalty(const_out_d, y, x, None, eps=torch.full((4, 1, 1, 1), 0.3))
        assert float(gp_const.detach()) == pytest.approx(1.0)

        # distance losses vanish at x = y
        d = SmoothConvD(6, seed=1)
        rng = np.random.default_rng(2)
        same = torch.tensor(rng.uniform(-1, 1, (2, 3, 8, 8)))
        p = torch.tensor(rng.uniform(-1, 1, (2, 3, 8, 8)))
        phi = lambda t: [torch.tanh(2 * t)]
        assert float(feature_matching_loss(d, same, same.clone(), p).detach()) == 0.0
        assert float(perceptual_loss(phi, same, same.clone()).detach()) == 0.0
        assert float(semantic_pose_loss(phi, phi, same, same.clone(), 0.01).detach()) == 0.0

        # finite-difference gradients for every loss
        x0 = torch.tensor(rng.uniform(-1, 1, (2, 3, 8, 8)))
        yr = torch.tensor(rng.uniform(-1, 1, (2, 3, 8, 8)))
        eps = torch.full((2, 1, 1, 1), 0.4)
        cases = {
            "rela_d": lambda t: rela_d_loss(d, yr, t, p),
            "rela_g": lambda t: rela_g_loss(d, yr, t, p),
            "gp": lambda t: gradient_penalty(d, yr, t, p, eps=eps),
            "fm": lambda t: feature_matching_loss(d, yr, t, p),
            "vgg": lambda t: perceptual_loss(phi, yr, t),
            "sp": lambda t: semantic_pose_loss(phi, phi, yr, t, 0.01),
        }
        h = 1e-4
        for name, fn in cases.items():
            t = x0.clone().requires_grad_(True)
            fn(t).backward()
            grad = t.grad.reshape(-1)
            flat = x0.reshape(-1)
            for li in np.random.default_rng(3).choice(flat.numel(), 4, replace=False):
                plus, minus = flat.clone(), flat.clone()
                plus[li] += h
                minus[li] -= h
                fd = (
                    float(fn(plus.reshape(x0.shape)).detach())
                    - float(fn(minus.reshape(x0.shape)).detach())
                ) / (2 * h)
                a = float(grad[li])
                assert abs(a - fd) / max(abs(a), abs(fd), 1e-7) < 1e-3, (name, a, fd)
    finally:
        torch.set_default_dtype(torch.float32)
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0, f"took {elapsed:.2f}s"
    report(4, f"loss constants exact, GP closed forms @1e-6, FD gradients @1e-3 in {elapsed:.2f}s")


def test_criterion_05_compositing_chroma_round_trip():
    """Mask recovery through green compositing is exact; Eq. 2 limits bit-exact."""
    rng = np.random.default_rng(4)
    ck = ChromaKeyConfig(tau=0.5)
    green = np.tile(KEY_GREEN, (24, 24, 1))
    key = np.asarray(ck.key_color, dtype=np.float32)
    for _ in range(20):
        fg = rng.uniform(-1, 1, (24, 24, 3)).astype(np.float32)
        # keep every foreground color strictly farther than tau from green
        dist = np.sqrt(((fg - key) ** 2).sum(-1))
        too_close = dist <= ck.tau
        fg[too_close] = [1.0, -1.0, 1.0]
        mask = rng.random((24, 24)) > 0.5
        comped = composite(fg, mask, green)
        recovered = extract_foreground_mask(comped, ck)
        inter = (recovered & mask).sum()
        union = (recovered | mask).sum()
        iou = inter / union if union else 1.0
        assert iou == 1.0
    fg = rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
    bg = rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
    assert np.array_equal(composite(fg, np.ones((16, 16), bool), bg), fg)
    assert np.array_equal(composite(fg, np.zeros((16, 16), bool), bg), bg)
    report(5, "20 chroma round trips IoU=1.0; mask limits bit-exact")


def test_criterion_06_metric_oracles():
    """frame_metrics vs brute-force SSIM/PSNR on 100 pairs; telescoping exact."""
    rng = np.random.default_rng(5)
    worst_ssim = worst_psnr = 0.0
    for _ in range(100):
        x = rng.uniform(0, 255, (16, 16, 3))
        y = np.clip(x + rng.normal(0, rng.uniform(5, 60), x.shape), 0, 255)
        m = frame_metrics(x, y)
        worst_ssim = max(worst_ssim, abs(m.ssim - brute_force_ssim(x, y)))
        worst_psnr = max(worst_psnr, abs(m.psnr - brute_force_psnr(x, y)))
    assert worst_ssim < 1e-6, worst_ssim
    assert worst_psnr < 1e-6, worst_psnr
    gt = rng.uniform(0, 200, (4, 16, 16, 3))
    assert diff_frame_mse(gt + 17.0, gt) == pytest.approx(0.0, abs=1e-18)
    report(6, f"100 SSIM/PSNR oracle pairs (max diff {worst_ssim:.1e}); telescoping exact")


def test_criterion_07_training_smoke(smoke_run):
    """3,000 joint steps at 64x64: time budget, SSIM gain >= 0.15, fusion L1 drop."""
    summary = smoke_run["summary"]
    train_minutes = summary["train_seconds"] / 60.0
    assert train_minutes < 30.0, f"training took {train_minutes:.1f} min"
    base = summary["baseline"]["mean_ssim"]
    trained = summary["trained"]["mean_ssim"]
    gain = trained - base
    assert gain >= 0.15, f"SSIM gain {gain:.3f} (trained {trained:.3f} vs baseline {base:.3f})"
    lines = [json.loads(l) for l in open(smoke_run["out"] / "metrics.jsonl")]
    assert len(lines) == 3000
    first = float(np.mean([l["fusion_l1"] for l in lines[:50]]))
    last = float(np.mean([l["fusion_l1"] for l in lines[-50:]]))
    assert last < first, f"fusion L1 did not decrease ({first:.4f} -> {last:.4f})"
    report(
        7,
        f"3000 steps in {train_minutes:.1f} min; SSIM {base:.3f} -> {trained:.3f} "
        f"(gain {gain:.3f}); fusion L1 {first:.4f} -> {last:.4f}",
    )


def test_criterion_08_two_stage_benefit(smoke_run):
    """Fused output beats the raw paste on >= 60% of held-out frames."""
    frac = smoke_run["summary"]["trained"]["fused_beats_pasted_frac"]
    assert frac >= 0.60, f"fusion beat pasting on only {frac:.0%} of frames"
    report(8, f"fused I_out MSE <= pasted I_comb MSE on {frac:.0%} of held-out frames")


def test_criterion_09_determinism(smoke_run, smoke_data, tmp_path_factory):
    """A second complete smoke run reproduces the metric log byte-for-byte."""
    out_b = tmp_path_factory.mktemp("smoke_b")
    train(smoke_data, smoke_config(), out_b, eval_baseline=False)
    log_a = (smoke_run["out"] / "metrics.jsonl").read_bytes()
    log_b = (out_b / "metrics.jsonl").read_bytes()
    ha = hashlib.sha256(log_a).hexdigest()
    hb = hashlib.sha256(log_b).hexdigest()
    assert ha == hb, f"metric logs differ: {ha[:12]} vs {hb[:12]}"
    report(9, f"two complete runs, identical 3000-line metric logs (sha256 {ha[:12]})")


def test_criterion_10_split_hygiene():
    """No test frame index appears in any training pair, 20 seeds exhaustively."""
    for seed in range(20):
        cfg = TrainConfig(
            seed=seed, n_train_pairs=500, n_test_pairs=100, iters_coarse=0, num_threads=0
        )
        train_pairs, test_pairs = split_and_sample(120, cfg)
        cut = int(np.floor(120 * cfg.split_ratio))
        test_frames = set(range(cut, 120))
        for pair in train_pairs:
            touched = {pair.in_idx, pair.ref_idx, *pair.history}
            assert not (touched & test_frames), f"seed {seed}: leak {touched & test_frames}"
        for pair in test_pairs:
            touched = {pair.in_idx, pair.ref_idx, *pair.history}
            assert touched <= test_frames
    report(10, "no train/test index leakage across 20 seeds (500 pairs each)")
