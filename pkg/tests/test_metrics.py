import math

import numpy as np
import pytest

from motiontransfer.metrics import (
    SSIM_SIGMA,
    SSIM_WINDOW,
    aggregate_metrics,
    diff_frame_mse,
    frame_metrics,
    novelty_curve,
    sequence_report,
)

from conftest import make_pose


def brute_force_ssim(x, y):
    """Independent SSIM written from the definition: per valid window center,
    Gaussian-weighted local statistics, standard constants, channel-averaged."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    r = SSIM_WINDOW // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    k1d = np.exp(-(ax**2) / (2 * SSIM_SIGMA**2))
    k1d /= k1d.sum()
    kern = np.outer(k1d, k1d)
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    h, w, c = x.shape
    vals = []
    for ch in range(c):
        total = []
        for i in range(r, h - r):
            for j in range(r, w - r):
                wx = x[i - r : i + r + 1, j - r : j + r + 1, ch]
                wy = y[i - r : i + r + 1, j - r : j + r + 1, ch]
                mx = (kern * wx).sum()
                my = (kern * wy).sum()
                vx = (kern * wx * wx).sum() - mx * mx
                vy = (kern * wy * wy).sum() - my * my
                cxy = (kern * wx * wy).sum() - mx * my
                total.append(
                    ((2 * mx * my + c1) * (2 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
        vals.append(np.mean(total))
    return float(np.mean(vals))


def brute_force_psnr(x, y):
    mse = float(np.mean((np.asarray(x, float) - np.asarray(y, float)) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(255.0**2 / mse)


class TestFrameMetrics:
    def test_identical_images(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 255, (16, 16, 3))
        m = frame_metrics(x, x)
        assert m.mse == 0.0
        assert math.isinf(m.psnr)
        assert m.ssim == pytest.approx(1.0)

    def test_extreme_difference(self):
        x = np.zeros((16, 16))
        y = np.full((16, 16), 255.0)
        m = frame_metrics(x, y)
        assert m.mse == pytest.approx(255.0**2)
        assert m.psnr == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(8):
            x = rng.uniform(0, 255, (16, 16, 3))
            y = np.clip(x + rng.normal(0, 25, x.shape), 0, 255)
            m = frame_metrics(x, y)
            assert m.ssim == pytest.approx(brute_force_ssim(x, y), abs=1e-6)
            assert m.psnr == pytest.approx(brute_force_psnr(x, y), abs=1e-6)
            assert m.mse == pytest.approx(float(np.mean((x - y) ** 2)), abs=1e-9)

    def test_ssim_symmetric(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 255, (20, 20))
        y = rng.uniform(0, 255, (20, 20))
        assert frame_metrics(x, y).ssim == pytest.approx(frame_metrics(y, x).ssim, abs=1e-9)

    def test_psnr_decreasing_in_mse(self):
        x = np.zeros((16, 16))
        psnrs = [frame_metrics(x, np.full_like(x, v)).psnr for v in (10.0, 40.0, 160.0)]
        assert psnrs[0] > psnrs[1] > psnrs[2]

    def test_masked_mse_direction(self):
        # all error inside the mask: the masked average runs over fewer
        # pixels, so it is >= the whole-frame average (and equal total error)
        x = np.zeros((16, 16))
        y = x.copy()
        mask = np.zeros((16, 16), dtype=bool)
        mask[4:12, 4:12] = True
        y[5, 5] = 80.0
        whole = frame_metrics(x, y)
        fg = frame_metrics(x, y, mask=mask)
        assert fg.mse >= whole.mse
        assert fg.mse == pytest.approx(80.0**2 / mask.sum())
        # all error outside the mask: masked error is zero
        y2 = x.copy()
        y2[0, 0] = 80.0
        assert frame_metrics(x, y2, mask=mask).mse == 0.0

    def test_masked_ssim_restricts_centers(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 255, (20, 20))
        y = np.clip(x + rng.normal(0, 20, x.shape), 0, 255)
        full = frame_metrics(x, y).ssim
        mask = np.zeros((20, 20), dtype=bool)
        mask[8:12, 8:12] = True
        masked = frame_metrics(x, y, mask=mask).ssim
        assert masked != pytest.approx(full)

    def test_empty_mask_raises(self):
        x = np.zeros((16, 16))
        with pytest.raises(ValueError, match="empty"):
            frame_metrics(x, x, mask=np.zeros((16, 16), dtype=bool))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            frame_metrics(np.zeros((16, 16)), np.zeros((16, 17)))

    def test_too_small_raises(self):
        with pytest.raises(ValueError):
            frame_metrics(np.zeros((8, 8)), np.zeros((8, 8)))


class TestDiffFrameMse:
    def test_identical_sequences(self):
        rng = np.random.default_rng(4)
        seq = rng.uniform(0, 255, (4, 8, 8, 3))
        assert diff_frame_mse(seq, seq) == 0.0

    def test_constant_offset_cancels(self):
        rng = np.random.default_rng(5)
        gt = rng.uniform(0, 200, (5, 8, 8, 3))
        gen = gt + 31.0
        assert diff_frame_mse(gen, gt) == pytest.approx(0.0, abs=1e-18)

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(6)
        gen = rng.uniform(0, 255, (3, 6, 6, 3))
        gt = rng.uniform(0, 255, (3, 6, 6, 3))
        d1 = (gen[1] - gen[0]) - (gt[1] - gt[0])
        d2 = (gen[2] - gen[1]) - (gt[2] - gt[1])
        expected = (np.mean(d1**2) + np.mean(d2**2)) / 2
        assert diff_frame_mse(gen, gt) == pytest.approx(expected, rel=1e-12)

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            diff_frame_mse(np.zeros((3, 4, 4, 3)), np.zeros((2, 4, 4, 3)))

    def test_too_short_raises(self):
        with pytest.raises(ValueError):
            diff_frame_mse(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 4, 3)))


class TestNoveltyCurve:
    def test_pose_in_training_set_zero_novelty(self):
        pose = make_pose(seed=1)
        train = [make_pose(seed=1) for _ in range(12)]
        pts = novelty_curve([pose], [0.9], train, k=10)
        assert pts[0][0] == pytest.approx(0.0, abs=1e-12)
        assert pts[0][1] == 0.9

    def test_single_training_pose(self):
        from motiontransfer.skeleton import pose_distance

        ref, train = make_pose(seed=2), make_pose(seed=3)
        pts = novelty_curve([ref], [0.5], [train], k=10)
        assert pts[0][0] == pytest.approx(pose_distance(ref, train))

    def test_matches_per_frame_recomputation(self):
        from motiontransfer.skeleton import nearest_training_pose

        test = [make_pose(seed=s) for s in range(5)]
        train = [make_pose(seed=100 + s) for s in range(20)]
        scores = [0.1 * s for s in range(5)]
        pts = novelty_curve(test, scores, train, k=10)
        for pose, score, (nov, got_score) in zip(test, scores, pts):
            _, expected = nearest_training_pose(pose, train, k=10)
            assert nov == pytest.approx(expected)
            assert got_score == pytest.approx(score)


class TestReports:
    def test_aggregate_excludes_inf_psnr(self):
        from motiontransfer.metrics import FrameMetrics

        agg = aggregate_metrics(
            [FrameMetrics(0.0, math.inf, 1.0), FrameMetrics(4.0, 42.0, 0.9)]
        )
        assert agg["psnr"] == pytest.approx(42.0)
        assert agg["n_psnr_inf_excluded"] == 1

    def test_sequence_report_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        gt = rng.uniform(0, 255, (3, 16, 16, 3))
        gen = np.clip(gt + rng.normal(0, 10, gt.shape), 0, 255)
        masks = np.zeros((3, 16, 16), dtype=bool)
        masks[:, 4:12, 4:12] = True
        report = sequence_report(gen, gt, masks)
        assert report.whole["n_frames"] == 3
        assert report.foreground["mse"] > 0
        assert report.diff_mse is not None
        report.to_json(tmp_path / "r.json")
        assert (tmp_path / "r.json").exists()
        table = report.table()
        assert "whole frame" in table and "foreground" in table
