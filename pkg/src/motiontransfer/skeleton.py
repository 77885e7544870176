"""Skeleton model: 15-keypoint 2D poses, body-part segments, similarity fits.

The figure is a fixed 15-keypoint skeleton (COCO-like, plus neck and mid-hip)
spanning exactly 10 body parts: head, torso and the eight limb segments.
Per-part alignment between two poses is a 4-DOF similarity transform
(rotation + uniform scale + translation) fit from the two part endpoints,
stored as a 2x3 affine matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

KEYPOINT_NAMES = (
    "nose",
    "neck",
    "mid_hip",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
)
KEYPOINT_INDEX = {name: i for i, name in enumerate(KEYPOINT_NAMES)}

LANDMARK_NAMES = ("face", "lhand", "rhand", "lfoot", "rfoot")

# Parent keypoint whose visibility gates each landmark set.
LANDMARK_PARENT = {
    "face": "nose",
    "lhand": "l_wrist",
    "rhand": "r_wrist",
    "lfoot": "l_ankle",
    "rfoot": "r_ankle",
}

# Canonical part order; endpoints are (proximal, distal).
PART_NAMES = (
    "head",
    "torso",
    "l_upper_arm",
    "l_lower_arm",
    "r_upper_arm",
    "r_lower_arm",
    "l_upper_leg",
    "l_lower_leg",
    "r_upper_leg",
    "r_lower_leg",
)
PART_ENDPOINTS = {
    "head": ("nose", "neck"),
    "torso": ("neck", "mid_hip"),
    "l_upper_arm": ("l_shoulder", "l_elbow"),
    "l_lower_arm": ("l_elbow", "l_wrist"),
    "r_upper_arm": ("r_shoulder", "r_elbow"),
    "r_lower_arm": ("r_elbow", "r_wrist"),
    "l_upper_leg": ("l_hip", "l_knee"),
    "l_lower_leg": ("l_knee", "l_ankle"),
    "r_upper_leg": ("r_hip", "r_knee"),
    "r_lower_leg": ("r_knee", "r_ankle"),
}

# Segments shorter than this (pixels) are treated as degenerate.
MIN_SEGMENT_LENGTH = 1.0


@dataclass
class Pose2D:
    """A single-figure 2D pose: 15 keypoints plus 5 landmark point sets.

    ``keypoints`` is (15, 2) float64 pixel coordinates (x, y), ``visibility``
    a (15,) bool array.  ``landmarks`` maps each of ``LANDMARK_NAMES`` to an
    (n, 2) array with 1-8 points (may be empty when the parent keypoint is
    invisible).
    """

    keypoints: np.ndarray
    visibility: np.ndarray
    landmarks: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.keypoints.shape != (15, 2):
            raise ValueError(f"keypoints must be (15, 2), got {self.keypoints.shape}")
        self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.visibility.shape != (15,):
            raise ValueError(f"visibility must be (15,), got {self.visibility.shape}")
        lm = {}
        for name in LANDMARK_NAMES:
            pts = self.landmarks.get(name)
            if pts is None:
                pts = np.zeros((0, 2))
            pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
            lm[name] = pts
        self.landmarks = lm

    def kp(self, name: str) -> np.ndarray:
        return self.keypoints[KEYPOINT_INDEX[name]]

    def visible(self, name: str) -> bool:
        return bool(self.visibility[KEYPOINT_INDEX[name]])

    def copy(self) -> "Pose2D":
        return Pose2D(
            self.keypoints.copy(),
            self.visibility.copy(),
            {k: v.copy() for k, v in self.landmarks.items()},
        )

    def validate(self, height: int | None = None, width: int | None = None) -> None:
        """Raise ValueError on non-finite coordinates or out-of-frame visible points."""
        if not np.all(np.isfinite(self.keypoints)):
            raise ValueError("pose has non-finite keypoint coordinates")
        for name, pts in self.landmarks.items():
            if not np.all(np.isfinite(pts)):
                raise ValueError(f"landmark set {name!r} has non-finite coordinates")
        if height is not None and width is not None:
            vis = self.keypoints[self.visibility]
            if vis.size and (
                np.any(vis[:, 0] < 0)
                or np.any(vis[:, 0] >= width)
                or np.any(vis[:, 1] < 0)
                or np.any(vis[:, 1] >= height)
            ):
                raise ValueError("visible keypoint outside frame bounds")

    def to_record(self, frame_index: int) -> dict:
        """Serialize to the per-frame keypoint-file record."""
        kps = [
            [float(x), float(y), bool(v)]
            for (x, y), v in zip(self.keypoints, self.visibility)
        ]
        lms = {
            name: [[float(x), float(y)] for x, y in pts]
            for name, pts in self.landmarks.items()
        }
        return {"frame_index": int(frame_index), "keypoints": kps, "landmarks": lms}

    @classmethod
    def from_record(cls, record: dict) -> "Pose2D":
        kps = np.asarray(record["keypoints"], dtype=np.float64)
        if kps.shape != (15, 3):
            raise ValueError(f"keypoints field must be 15 x [x, y, visible], got {kps.shape}")
        landmarks = {
            name: np.asarray(pts, dtype=np.float64).reshape(-1, 2)
            for name, pts in record.get("landmarks", {}).items()
        }
        return cls(kps[:, :2], kps[:, 2] > 0.5, landmarks)


@dataclass
class PartSegment:
    """Oriented bone of one body part: endpoints are (proximal, distal)."""

    part_id: str
    p0: np.ndarray
    p1: np.ndarray
    missing: bool = False
    note: str = ""

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=np.float64).reshape(2)
        self.p1 = np.asarray(self.p1, dtype=np.float64).reshape(2)

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.p1 - self.p0)))

    @property
    def midpoint(self) -> np.ndarray:
        return (self.p0 + self.p1) / 2.0


@dataclass
class AffineMatrix:
    """2x3 affine transform; the linear block must be orientation-preserving."""

    m: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        if self.m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {self.m.shape}")
        if not np.all(np.isfinite(self.m)):
            raise ValueError("affine matrix has non-finite entries")

    @classmethod
    def identity(cls) -> "AffineMatrix":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @property
    def linear(self) -> np.ndarray:
        return self.m[:, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.m[:, 2]

    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (n, 2) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.translation

    def inverse(self) -> "AffineMatrix":
        a = self.linear
        det = np.linalg.det(a)
        if abs(det) < 1e-12:
            raise ValueError("affine matrix is singular")
        inv = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
        t = -inv @ self.translation
        return AffineMatrix(np.column_stack([inv, t]))


@dataclass
class PartTransformSet:
    """One affine per part; missing parts are explicit ``None`` entries."""

    transforms: dict[str, AffineMatrix | None]

    def __post_init__(self):
        extra = set(self.transforms) - set(PART_NAMES)
        if extra:
            raise ValueError(f"unknown part ids: {sorted(extra)}")
        missing_keys = set(PART_NAMES) - set(self.transforms)
        if missing_keys:
            raise ValueError(f"transform set must cover all 10 parts, lacks {sorted(missing_keys)}")

    def __getitem__(self, part_id: str) -> AffineMatrix | None:
        return self.transforms[part_id]

    def missing_parts(self) -> list[str]:
        return [p for p in PART_NAMES if self.transforms[p] is None]

    @classmethod
    def identity(cls) -> "PartTransformSet":
        return cls({p: AffineMatrix.identity() for p in PART_NAMES})


def part_segments(pose: Pose2D) -> list[PartSegment]:
    """Split a pose into its 10 part segments, in canonical part order.

    Parts with an invisible endpoint, or with near-coincident endpoints,
    come back flagged ``missing`` with a diagnostic note instead of being
    dropped.
    """
    segments = []
    for part in PART_NAMES:
        a, b = PART_ENDPOINTS[part]
        p0, p1 = pose.kp(a), pose.kp(b)
        seg = PartSegment(part, p0, p1)
        if not (pose.visible(a) and pose.visible(b)):
            seg.missing = True
            seg.note = f"{part}: endpoint keypoint not visible"
        elif seg.length <= MIN_SEGMENT_LENGTH:
            seg.missing = True
            seg.note = f"{part}: degenerate segment (length {seg.length:.3g} px)"
        segments.append(seg)
    return segments


def estimate_part_transform(src: PartSegment, dst: PartSegment) -> AffineMatrix:
    """Similarity transform (rotation, uniform scale, translation) taking
    the two src endpoints exactly onto the dst endpoints.

    Two point correspondences pin down the 4 similarity DOF exactly; the
    closed form below treats points as complex numbers:  z -> a*z + t with
    a = (d1-d0)/(s1-s0).
    """
    for seg in (src, dst):
        if seg.missing or seg.length <= MIN_SEGMENT_LENGTH:
            raise ValueError(f"cannot fit transform for degenerate part {seg.part_id!r}")
    s0 = complex(src.p0[0], src.p0[1])
    s1 = complex(src.p1[0], src.p1[1])
    d0 = complex(dst.p0[0], dst.p0[1])
    d1 = complex(dst.p1[0], dst.p1[1])
    a = (d1 - d0) / (s1 - s0)
    t = d0 - a * s0
    m = np.array(
        [
            [a.real, -a.imag, t.real],
            [a.imag, a.real, t.imag],
        ]
    )
    return AffineMatrix(m)


def part_transforms(src_pose: Pose2D, dst_pose: Pose2D) -> PartTransformSet:
    """Per-part similarity transforms aligning src_pose parts to dst_pose.

    A part missing in either pose yields a ``None`` entry.
    """
    src_segs = part_segments(src_pose)
    dst_segs = part_segments(dst_pose)
    out: dict[str, AffineMatrix | None] = {}
    for s, d in zip(src_segs, dst_segs):
        if s.missing or d.missing:
            out[s.part_id] = None
        else:
            out[s.part_id] = estimate_part_transform(s, d)
    return PartTransformSet(out)


def normalize_pose(pose: Pose2D) -> Pose2D:
    """Translate mid-hip to the origin and scale the torso to unit length."""
    if not (pose.visible("neck") and pose.visible("mid_hip")):
        raise ValueError("normalize_pose requires visible neck and mid_hip")
    origin = pose.kp("mid_hip")
    torso = float(np.hypot(*(pose.kp("neck") - origin)))
    if torso <= 1e-9:
        raise ValueError("normalize_pose: degenerate torso (neck == mid_hip)")
    out = pose.copy()
    out.keypoints = (out.keypoints - origin) / torso
    out.landmarks = {k: (v - origin) / torso for k, v in out.landmarks.items()}
    return out


def pose_distance(a: Pose2D, b: Pose2D) -> float:
    """Mean keypoint distance between torso-normalized poses.

    Only keypoints visible in both poses contribute; landmark point sets are
    ignored.  Invariant to per-pose translation and uniform scaling.
    """
    na, nb = normalize_pose(a), normalize_pose(b)
    shared = na.visibility & nb.visibility
    if int(shared.sum()) < 4:
        raise ValueError(f"pose_distance needs >= 4 shared visible keypoints, got {int(shared.sum())}")
    d = np.linalg.norm(na.keypoints[shared] - nb.keypoints[shared], axis=1)
    return float(d.mean())


def nearest_training_pose(ref: Pose2D, pool: list[Pose2D], k: int = 10) -> tuple[int, float]:
    """Index of the nearest pool pose plus a novelty score.

    Novelty is the mean of the k smallest distances (k=10 by default).  A k
    larger than the pool degrades to the full pool with a warning.
    """
    if not pool:
        raise ValueError("nearest_training_pose: empty pose pool")
    if k < 1:
        raise ValueError("nearest_training_pose: k must be >= 1")
    dists = np.array([pose_distance(ref, p) for p in pool])
    if k > len(pool):
        log.warning("novelty k=%d exceeds pool size %d; using full pool", k, len(pool))
        k = len(pool)
    idx = int(np.argmin(dists))
    novelty = float(np.sort(dists)[:k].mean())
    return idx, novelty
