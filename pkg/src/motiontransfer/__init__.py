"""Personalized motion transfer: pose-driven person synthesis in two stages.

The pipeline takes frames of a target figure plus reference poses and
re-renders the target performing the reference motion.  Foreground synthesis
(person on a green background) and background fusion are separate generator
stages with their own supervision.
"""

__version__ = "0.1.0"

from .skeleton import (
    KEYPOINT_NAMES,
    LANDMARK_NAMES,
    PART_NAMES,
    AffineMatrix,
    PartSegment,
    PartTransformSet,
    Pose2D,
    estimate_part_transform,
    nearest_training_pose,
    normalize_pose,
    part_segments,
    pose_distance,
)

__all__ = [
    "__version__",
    "KEYPOINT_NAMES",
    "LANDMARK_NAMES",
    "PART_NAMES",
    "Pose2D",
    "PartSegment",
    "AffineMatrix",
    "PartTransformSet",
    "part_segments",
    "estimate_part_transform",
    "normalize_pose",
    "pose_distance",
    "nearest_training_pose",
]
