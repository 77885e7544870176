import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motiontransfer.skeleton import (
    KEYPOINT_INDEX,
    PART_NAMES,
    AffineMatrix,
    PartSegment,
    PartTransformSet,
    Pose2D,
    estimate_part_transform,
    nearest_training_pose,
    normalize_pose,
    part_segments,
    part_transforms,
    pose_distance,
)

from conftest import make_pose


def lstsq_similarity(src_pts, dst_pts):
    """Independent oracle: least-squares 4-parameter similarity fit.

    Solves for (a0, a1, b0, b1) in X = a0 + a1 x - b1 y, Y = b0 + b1 x + a1 y.
    """
    src = np.asarray(src_pts, dtype=float)
    dst = np.asarray(dst_pts, dtype=float)
    rows = src.shape[0]
    A = np.zeros((rows * 2, 4))
    A[:rows, 0] = 1
    A[:rows, 1] = src[:, 0]
    A[:rows, 3] = -src[:, 1]
    A[rows:, 2] = 1
    A[rows:, 3] = src[:, 0]
    A[rows:, 1] = src[:, 1]
    b = np.concatenate([dst[:, 0], dst[:, 1]])
    a0, b0 = None, None
    params, *_ = np.linalg.lstsq(A, b, rcond=None)
    a0, a1, b0, b1 = params
    return np.array([[a1, -b1, a0], [b1, a1, b0]])


def seg(part, p0, p1):
    return PartSegment(part, np.asarray(p0, float), np.asarray(p1, float))


class TestEstimatePartTransform:
    def test_identity(self):
        m = estimate_part_transform(seg("torso", (0, 0), (0, 10)), seg("torso", (0, 0), (0, 10)))
        np.testing.assert_allclose(m.m, [[1, 0, 0], [0, 1, 0]], atol=1e-12)

    def test_rotation_90(self):
        src = seg("torso", (0, 0), (0, 10))
        dst = seg("torso", (0, 0), (10, 0))
        m = estimate_part_transform(src, dst)
        mapped = m.apply(np.array([[0.0, 0.0], [0.0, 10.0]]))
        np.testing.assert_allclose(mapped, [[0, 0], [10, 0]], atol=1e-9)
        # unit scale: the linear block is a pure rotation
        assert np.linalg.det(m.linear) == pytest.approx(1.0, abs=1e-12)

    def test_scale_translate(self):
        m = estimate_part_transform(seg("torso", (0, 0), (0, 10)), seg("torso", (5, 5), (5, 25)))
        np.testing.assert_allclose(m.linear, [[2, 0], [0, 2]], atol=1e-12)
        np.testing.assert_allclose(m.translation, [5, 5], atol=1e-12)

    def test_matches_lstsq_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            src_pts = rng.uniform(-50, 50, (2, 2))
            dst_pts = rng.uniform(-50, 50, (2, 2))
            if np.linalg.norm(src_pts[1] - src_pts[0]) < 2 or np.linalg.norm(dst_pts[1] - dst_pts[0]) < 2:
                continue
            m = estimate_part_transform(seg("head", *src_pts), seg("head", *dst_pts))
            expected = lstsq_similarity(src_pts, dst_pts)
            np.testing.assert_allclose(m.m, expected, atol=1e-8)

    def test_endpoint_exactness(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(500):
            src_pts = rng.uniform(-100, 100, (2, 2))
            dst_pts = rng.uniform(-100, 100, (2, 2))
            if np.linalg.norm(src_pts[1] - src_pts[0]) < 2 or np.linalg.norm(dst_pts[1] - dst_pts[0]) < 2:
                continue
            m = estimate_part_transform(seg("head", *src_pts), seg("head", *dst_pts))
            worst = max(worst, np.abs(m.apply(src_pts) - dst_pts).max())
        assert worst < 1e-9

    def test_composition(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b, c = (rng.uniform(-20, 20, (2, 2)) for _ in range(3))
            if min(np.linalg.norm(p[1] - p[0]) for p in (a, b, c)) < 2:
                continue
            m_ab = estimate_part_transform(seg("head", *a), seg("head", *b))
            m_bc = estimate_part_transform(seg("head", *b), seg("head", *c))
            m_ac = estimate_part_transform(seg("head", *a), seg("head", *c))
            composed = m_bc.apply(m_ab.apply(a))
            np.testing.assert_allclose(composed, m_ac.apply(a), atol=1e-9)

    def test_degenerate_raises_with_part_name(self):
        with pytest.raises(ValueError, match="l_lower_arm"):
            estimate_part_transform(
                seg("l_lower_arm", (3, 3), (3, 3)), seg("l_lower_arm", (0, 0), (0, 10))
            )

    def test_orientation_preserving(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            src_pts = rng.uniform(-20, 20, (2, 2))
            dst_pts = rng.uniform(-20, 20, (2, 2))
            if np.linalg.norm(src_pts[1] - src_pts[0]) < 2 or np.linalg.norm(dst_pts[1] - dst_pts[0]) < 2:
                continue
            m = estimate_part_transform(seg("head", *src_pts), seg("head", *dst_pts))
            assert m.det() > 0


class TestPartSegments:
    def test_torso_pairing(self):
        pose = make_pose()
        pose.keypoints[KEYPOINT_INDEX["neck"]] = (50, 20)
        pose.keypoints[KEYPOINT_INDEX["mid_hip"]] = (50, 60)
        segs = {s.part_id: s for s in part_segments(pose)}
        np.testing.assert_array_equal(segs["torso"].p0, [50, 20])
        np.testing.assert_array_equal(segs["torso"].p1, [50, 60])

    def test_canonical_order_and_count(self):
        segs = part_segments(make_pose())
        assert [s.part_id for s in segs] == list(PART_NAMES)

    def test_invisible_wrist_marks_missing(self):
        pose = make_pose()
        pose.visibility[KEYPOINT_INDEX["l_wrist"]] = False
        segs = part_segments(pose)
        missing = [s.part_id for s in segs if s.missing]
        assert missing == ["l_lower_arm"]
        assert sum(not s.missing for s in segs) == 9

    def test_degenerate_marked_with_note(self):
        pose = make_pose()
        pose.keypoints[KEYPOINT_INDEX["nose"]] = pose.keypoints[KEYPOINT_INDEX["neck"]]
        segs = {s.part_id: s for s in part_segments(pose)}
        assert segs["head"].missing
        assert "degenerate" in segs["head"].note

    def test_matches_renderer_bones(self, small_scene):
        from motiontransfer.synthetic import renderer_bones

        cfg, frames = small_scene
        for t in (0, 7, 19):
            bones = renderer_bones(cfg, 11, t)
            segs = {s.part_id: s for s in part_segments(frames[t].pose)}
            for part, (p0, p1) in bones.items():
                assert np.abs(segs[part].p0 - p0).max() < 0.5
                assert np.abs(segs[part].p1 - p1).max() < 0.5


class TestNormalizePose:
    def test_fixed_point(self):
        pose = make_pose()
        pose.keypoints -= pose.kp("mid_hip").copy()
        torso = np.linalg.norm(pose.kp("neck"))
        pose.keypoints /= torso
        out = normalize_pose(pose)
        np.testing.assert_allclose(out.keypoints, pose.keypoints, atol=1e-12)

    def test_unit_torso(self):
        out = normalize_pose(make_pose(seed=1))
        assert np.linalg.norm(out.kp("neck") - out.kp("mid_hip")) == pytest.approx(1.0)
        np.testing.assert_allclose(out.kp("mid_hip"), [0, 0], atol=1e-12)

    def test_similarity_invariance(self):
        pose = make_pose(seed=2)
        moved = make_pose(seed=2)
        moved.keypoints = moved.keypoints * 3.0 + np.array([7.0, 7.0])
        moved.landmarks = {k: v * 3.0 + 7.0 for k, v in moved.landmarks.items()}
        a, b = normalize_pose(pose), normalize_pose(moved)
        np.testing.assert_allclose(a.keypoints, b.keypoints, atol=1e-9)
        for name in a.landmarks:
            np.testing.assert_allclose(a.landmarks[name], b.landmarks[name], atol=1e-9)

    def test_requires_visible_torso(self):
        pose = make_pose()
        pose.visibility[KEYPOINT_INDEX["neck"]] = False
        with pytest.raises(ValueError):
            normalize_pose(pose)

    def test_degenerate_torso_raises(self):
        pose = make_pose()
        pose.keypoints[KEYPOINT_INDEX["neck"]] = pose.keypoints[KEYPOINT_INDEX["mid_hip"]]
        with pytest.raises(ValueError):
            normalize_pose(pose)


class TestPoseDistance:
    def test_identical_zero(self):
        pose = make_pose(seed=3)
        assert pose_distance(pose, pose) == 0.0

    def test_similarity_copy_zero(self):
        pose = make_pose(seed=4)
        moved = make_pose(seed=4)
        moved.keypoints = moved.keypoints * 2.5 + np.array([11.0, -4.0])
        assert pose_distance(pose, moved) == pytest.approx(0.0, abs=1e-9)

    def test_hand_computed_oracle(self):
        a, b = make_pose(seed=5), make_pose(seed=6)
        na, nb = normalize_pose(a), normalize_pose(b)
        expected = np.mean(np.linalg.norm(na.keypoints - nb.keypoints, axis=1))
        assert pose_distance(a, b) == pytest.approx(expected, rel=1e-12)

    def test_symmetry_and_nonnegativity(self):
        a, b = make_pose(seed=7), make_pose(seed=8)
        assert pose_distance(a, b) == pytest.approx(pose_distance(b, a), rel=1e-12)
        assert pose_distance(a, b) >= 0

    def test_too_few_shared_raises(self):
        a, b = make_pose(), make_pose()
        a.visibility[:] = False
        for name in ("neck", "mid_hip", "nose"):
            a.visibility[KEYPOINT_INDEX[name]] = True
        with pytest.raises(ValueError):
            pose_distance(a, b)

    @settings(max_examples=25, deadline=None, derandomize=True)
    @given(
        s1=st.integers(0, 1000),
        s2=st.integers(0, 1000),
        scale=st.floats(0.5, 4.0),
        tx=st.floats(-30, 30),
    )
    def test_pseudometric_properties(self, s1, s2, scale, tx):
        a, b = make_pose(seed=s1), make_pose(seed=s2)
        moved = make_pose(seed=s2)
        moved.keypoints = moved.keypoints * scale + np.array([tx, 0.0])
        d1, d2 = pose_distance(a, b), pose_distance(a, moved)
        assert d1 >= 0
        assert d1 == pytest.approx(pose_distance(b, a), rel=1e-9, abs=1e-12)
        assert d1 == pytest.approx(d2, rel=1e-6, abs=1e-9)


class TestNearestTrainingPose:
    def test_self_in_pool(self):
        ref = make_pose(seed=9)
        pool = [make_pose(seed=i) for i in range(5)] + [ref]
        idx, novelty = nearest_training_pose(ref, pool, k=3)
        assert idx == 5
        assert novelty >= 0

    def test_pool_of_one(self):
        ref, other = make_pose(seed=1), make_pose(seed=2)
        idx, novelty = nearest_training_pose(ref, [other], k=10)
        assert idx == 0
        assert novelty == pytest.approx(pose_distance(ref, other))

    def test_matches_exhaustive_oracle(self):
        rng_seeds = range(50)
        ref = make_pose(seed=999)
        pool = [make_pose(seed=s) for s in rng_seeds]
        idx, novelty = nearest_training_pose(ref, pool, k=10)
        dists = np.array([pose_distance(ref, p) for p in pool])
        assert idx == int(np.argmin(dists))
        assert novelty == pytest.approx(float(np.sort(dists)[:10].mean()))

    def test_empty_pool_raises(self):
        with pytest.raises(ValueError):
            nearest_training_pose(make_pose(), [], k=1)

    def test_k_exceeding_pool_warns_and_uses_full_pool(self, caplog):
        import logging

        ref = make_pose(seed=1)
        pool = [make_pose(seed=s) for s in range(3)]
        with caplog.at_level(logging.WARNING):
            idx, novelty = nearest_training_pose(ref, pool, k=10)
        assert any("pool" in r.message for r in caplog.records)
        dists = sorted(pose_distance(ref, p) for p in pool)
        assert novelty == pytest.approx(float(np.mean(dists)))


class TestTransformSet:
    def test_part_transforms_complete(self):
        tfs = part_transforms(make_pose(seed=1), make_pose(seed=2))
        assert set(tfs.transforms) == set(PART_NAMES)
        assert tfs.missing_parts() == []

    def test_missing_part_flagged_not_dropped(self):
        a = make_pose(seed=1)
        a.visibility[KEYPOINT_INDEX["r_wrist"]] = False
        tfs = part_transforms(a, make_pose(seed=2))
        assert tfs.missing_parts() == ["r_lower_arm"]
        assert len(tfs.transforms) == 10

    def test_incomplete_set_rejected(self):
        with pytest.raises(ValueError):
            PartTransformSet({"head": AffineMatrix.identity()})

    def test_identity_transfer_all_identity(self):
        pose = make_pose(seed=3)
        tfs = part_transforms(pose, pose)
        for part in PART_NAMES:
            np.testing.assert_allclose(tfs[part].m, [[1, 0, 0], [0, 1, 0]], atol=1e-9)


class TestPoseRecordRoundtrip:
    def test_roundtrip(self):
        pose = make_pose(seed=12)
        pose.visibility[3] = False
        rec = pose.to_record(17)
        assert rec["frame_index"] == 17
        back = Pose2D.from_record(rec)
        np.testing.assert_allclose(back.keypoints, pose.keypoints)
        np.testing.assert_array_equal(back.visibility, pose.visibility)
        for name in pose.landmarks:
            np.testing.assert_allclose(back.landmarks[name], pose.landmarks[name])
