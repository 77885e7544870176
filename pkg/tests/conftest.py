import numpy as np
import pytest
import torch

from motiontransfer.dataset import VideoData
from motiontransfer.skeleton import KEYPOINT_NAMES, Pose2D
from motiontransfer.synthetic import SceneConfig, generate_video

torch.set_num_threads(1)


def make_pose(offset=(0.0, 0.0), scale=1.0, seed=None):
    """A plausible fully-visible standing pose, optionally jittered."""
    base = {
        "nose": (32, 10),
        "neck": (32, 18),
        "mid_hip": (32, 34),
        "l_shoulder": (37, 18),
        "l_elbow": (40, 25),
        "l_wrist": (42, 31),
        "r_shoulder": (27, 18),
        "r_elbow": (24, 25),
        "r_wrist": (22, 31),
        "l_hip": (35, 34),
        "l_knee": (36, 44),
        "r_hip": (29, 34),
        "r_knee": (28, 44),
        "l_ankle": (37, 54),
        "r_ankle": (27, 54),
    }
    kps = np.array([base[name] for name in KEYPOINT_NAMES], dtype=np.float64)
    if seed is not None:
        rng = np.random.default_rng(seed)
        kps = kps + rng.uniform(-3, 3, kps.shape)
    kps = kps * scale + np.asarray(offset)
    landmarks = {
        "face": kps[0] + np.array([[1.0, -1.0], [-1.0, -1.0], [0.0, 1.0]]),
        "lhand": kps[5][None, :] + np.array([[1.0, 1.0]]),
        "rhand": kps[8][None, :] + np.array([[-1.0, 1.0]]),
        "lfoot": kps[11][None, :] + np.array([[0.5, 1.0]]),
        "rfoot": kps[14][None, :] + np.array([[-0.5, 1.0]]),
    }
    return Pose2D(kps, np.ones(15, dtype=bool), landmarks)


@pytest.fixture(scope="session")
def small_scene():
    cfg = SceneConfig(height=64, width=64, n_frames=24, background="static", shadow=False)
    return cfg, generate_video(cfg, seed=11)


@pytest.fixture(scope="session")
def small_video(small_scene):
    _, frames = small_scene
    return VideoData(
        images=np.stack([f.image for f in frames]),
        part_masks=np.stack([f.part_masks for f in frames]),
        poses=[f.pose for f in frames],
    )
