"""Procedural articulated-figure videos with exact poses, masks and shadows.

A 10-part 2D figure (capsule limbs, ellipse head, rectangle torso) is
animated by smooth joint-angle curves over a static, drifting, or
distractor background, optionally casting a soft ground shadow.  Every
frame carries its exact pose, per-part masks and foreground silhouette,
so the pipeline never needs external pose/parsing detectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import convolve

from .skeleton import KEYPOINT_NAMES, PART_NAMES, Pose2D

BACKGROUND_STYLES = ("static", "drifting", "distractor")

# Painter's order, back to front.  Right limbs render behind the torso,
# left limbs in front.
RENDER_ORDER = (
    "r_upper_arm",
    "r_lower_arm",
    "r_upper_leg",
    "r_lower_leg",
    "torso",
    "head",
    "l_upper_leg",
    "l_lower_leg",
    "l_upper_arm",
    "l_lower_arm",
)

KEY_GREEN_01 = np.array([0.0, 1.0, 0.0])


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    n_frames: int = 300
    background: str = "static"
    shadow: bool = True
    motion_amplitude: float = 1.0
    figure_height_frac: float = 0.72
    appearance_seed: int = 0
    motion_seed: int = 0

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ValueError("scene must be at least 32x32")
        if self.n_frames < 6:
            raise ValueError("scene needs at least 6 frames (2x pose history)")
        if self.background not in BACKGROUND_STYLES:
            raise ValueError(f"background must be one of {BACKGROUND_STYLES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**d)


@dataclass
class LabeledFrame:
    """One rendered frame with its ground-truth annotations.

    image: (H, W, 3) float32 in [-1, 1]; part_masks: (10, H, W) bool in
    canonical part order; fg_mask is their union.
    """

    image: np.ndarray
    pose: Pose2D
    part_masks: np.ndarray
    fg_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.fg_mask is None:
            self.fg_mask = self.part_masks.any(axis=0)


def _unit(angle):
    return np.array([np.cos(angle), np.sin(angle)])


class MotionScript:
    """Seeded joint-angle curves and figure appearance for one scene.

    All randomness is drawn up front; per-frame evaluation is pure
    trigonometry, so generation is deterministic and parallel-safe.
    """

    # (mean, amplitude scale) per angle track, radians; screen +y is down.
    _TRACKS = {
        "sway": (-np.pi / 2, 0.05),
        "head": (0.0, 0.12),
        "l_ua": (np.pi / 2 + 0.25, 0.45),
        "r_ua": (np.pi / 2 - 0.25, 0.45),
        "l_elbow": (-0.45, 0.40),
        "r_elbow": (0.45, 0.40),
        "l_ul": (np.pi / 2 + 0.10, 0.22),
        "r_ul": (np.pi / 2 - 0.10, 0.22),
        "l_knee": (0.18, 0.28),
        "r_knee": (-0.18, 0.28),
        "drift_x": (0.0, 1.0),
        "drift_y": (0.0, 1.0),
    }

    def __init__(self, cfg: SceneConfig, seed: int):
        self.cfg = cfg
        h, w = cfg.height, cfg.width
        body = cfg.figure_height_frac * h
        self.lengths = {
            "head": 0.15 * body,
            "torso": 0.30 * body,
            "upper_arm": 0.15 * body,
            "lower_arm": 0.14 * body,
            "upper_leg": 0.21 * body,
            "lower_leg": 0.20 * body,
        }
        self.shoulder_halfwidth = 0.10 * body
        self.hip_halfwidth = 0.065 * body
        self.limb_radius = max(1.5, 0.050 * body)
        self.torso_halfwidth = self.shoulder_halfwidth + 0.4 * self.limb_radius
        self.center0 = np.array([0.5 * w, 0.54 * h])

        rng = np.random.default_rng([seed, cfg.motion_seed, 11])
        amp = cfg.motion_amplitude
        self.curves = {}
        for name, (mean, scale) in self._TRACKS.items():
            n_harm = 2
            a = rng.uniform(0.35, 1.0, n_harm) * scale * amp
            f = rng.integers(1, 4, n_harm).astype(float)  # cycles over the clip
            phase = rng.uniform(0, 2 * np.pi, n_harm)
            self.curves[name] = (mean, a, f, phase)
        self.drift_scale = np.array([0.05 * w, 0.02 * h]) * amp

        rng_a = np.random.default_rng([seed, cfg.appearance_seed, 23])
        self.part_colors = {p: self._figure_color(rng_a) for p in PART_NAMES}
        self.part_grad = {p: rng_a.uniform(-0.12, 0.12, 3) for p in PART_NAMES}
        self.bg_rng_state = np.random.default_rng([seed, cfg.appearance_seed, 31])

    @staticmethod
    def _figure_color(rng) -> np.ndarray:
        # reject colors close to the chroma key green (nobody films in it)
        while True:
            c = rng.uniform(0.08, 0.92, 3)
            if np.linalg.norm(2 * c - 1 - (2 * KEY_GREEN_01 - 1)) >= 0.7:
                return c

    def _track(self, name: str, t: float) -> float:
        mean, a, f, phase = self.curves[name]
        n = self.cfg.n_frames
        return mean + float(np.sum(a * np.sin(2 * np.pi * f * t / n + phase)))

    def _track_rate_bound(self, name: str) -> float:
        _, a, f, _ = self.curves[name]
        return float(np.sum(a * 2 * np.pi * f / self.cfg.n_frames))

    def joints_at(self, t: float) -> dict[str, np.ndarray]:
        L = self.lengths
        center = self.center0 + self.drift_scale * np.array(
            [self._track("drift_x", t), self._track("drift_y", t)]
        )
        torso_dir = self._track("sway", t)
        j = {"mid_hip": center}
        j["neck"] = center + L["torso"] * _unit(torso_dir)
        j["nose"] = j["neck"] + L["head"] * _unit(torso_dir + self._track("head", t))
        perp = _unit(torso_dir + np.pi / 2)
        j["l_shoulder"] = j["neck"] + self.shoulder_halfwidth * perp
        j["r_shoulder"] = j["neck"] - self.shoulder_halfwidth * perp
        j["l_hip"] = center + self.hip_halfwidth * perp
        j["r_hip"] = center - self.hip_halfwidth * perp
        for side in ("l", "r"):
            ua = self._track(f"{side}_ua", t)
            j[f"{side}_elbow"] = j[f"{side}_shoulder"] + L["upper_arm"] * _unit(ua)
            la = ua + self._track(f"{side}_elbow", t)
            j[f"{side}_wrist"] = j[f"{side}_elbow"] + L["lower_arm"] * _unit(la)
            ul = self._track(f"{side}_ul", t)
            j[f"{side}_knee"] = j[f"{side}_hip"] + L["upper_leg"] * _unit(ul)
            ll = ul + self._track(f"{side}_knee", t)
            j[f"{side}_ankle"] = j[f"{side}_knee"] + L["lower_leg"] * _unit(ll)
        return j

    def pose_at(self, t: float, validate_frame: bool = True) -> Pose2D:
        j = self.joints_at(t)
        kps = np.stack([j[name] for name in KEYPOINT_NAMES])
        vis = np.ones(15, dtype=bool)
        if validate_frame:
            h, w = self.cfg.height, self.cfg.width
            inside = (
                (kps[:, 0] >= 0) & (kps[:, 0] < w) & (kps[:, 1] >= 0) & (kps[:, 1] < h)
            )
            vis &= inside
        landmarks = self._landmarks(j, t)
        return Pose2D(kps, vis, landmarks)

    def _landmarks(self, j: dict, t: float) -> dict[str, np.ndarray]:
        L = self.lengths
        head_axis = j["nose"] - j["neck"]
        head_axis = head_axis / (np.linalg.norm(head_axis) + 1e-9)
        head_perp = np.array([-head_axis[1], head_axis[0]])
        head_c = (j["nose"] + j["neck"]) / 2
        face = np.stack(
            [
                head_c + 0.30 * L["head"] * head_axis + 0.22 * L["head"] * head_perp,
                head_c + 0.30 * L["head"] * head_axis - 0.22 * L["head"] * head_perp,
                head_c + 0.05 * L["head"] * head_axis,
            ]
        )
        out = {"face": face}
        for side, key in (("l", "lhand"), ("r", "rhand")):
            d = j[f"{side}_wrist"] - j[f"{side}_elbow"]
            d = d / (np.linalg.norm(d) + 1e-9)
            out[key] = (j[f"{side}_wrist"] + 0.6 * self.limb_radius * d)[None, :]
        for side, key in (("l", "lfoot"), ("r", "rfoot")):
            d = j[f"{side}_ankle"] - j[f"{side}_knee"]
            d = d / (np.linalg.norm(d) + 1e-9)
            out[key] = (j[f"{side}_ankle"] + 0.6 * self.limb_radius * d)[None, :]
        return out

    def bones_at(self, t: float) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Part -> (proximal, distal) endpoints, the renderer's ground truth."""
        j = self.joints_at(t)
        return {
            "head": (j["nose"], j["neck"]),
            "torso": (j["neck"], j["mid_hip"]),
            "l_upper_arm": (j["l_shoulder"], j["l_elbow"]),
            "l_lower_arm": (j["l_elbow"], j["l_wrist"]),
            "r_upper_arm": (j["r_shoulder"], j["r_elbow"]),
            "r_lower_arm": (j["r_elbow"], j["r_wrist"]),
            "l_upper_leg": (j["l_hip"], j["l_knee"]),
            "l_lower_leg": (j["l_knee"], j["l_ankle"]),
            "r_upper_leg": (j["r_hip"], j["r_knee"]),
            "r_lower_leg": (j["r_knee"], j["r_ankle"]),
        }

    def velocity_cap(self) -> float:
        """Upper bound on per-frame keypoint displacement, in pixels.

        Angle-rate bounds propagate down each kinematic chain; the chain
        from the torso to a wrist is the worst case.
        """
        L = self.lengths
        sway = self._track_rate_bound("sway")
        drift = float(np.linalg.norm(self.drift_scale * np.array(
            [self._track_rate_bound("drift_x"), self._track_rate_bound("drift_y")]
        )))
        arm = max(self._track_rate_bound(f"{s}_ua") for s in "lr")
        elbow = max(self._track_rate_bound(f"{s}_elbow") for s in "lr")
        leg = max(self._track_rate_bound(f"{s}_ul") for s in "lr")
        knee = max(self._track_rate_bound(f"{s}_knee") for s in "lr")
        head = self._track_rate_bound("head")
        torso_reach = L["torso"] + self.shoulder_halfwidth
        wrist = (
            drift
            + sway * (torso_reach + L["upper_arm"] + L["lower_arm"])
            + arm * (L["upper_arm"] + L["lower_arm"])
            + elbow * L["lower_arm"]
        )
        ankle = (
            drift
            + sway * self.hip_halfwidth
            + leg * (L["upper_leg"] + L["lower_leg"])
            + knee * L["lower_leg"]
        )
        nose = drift + (sway + head) * (L["torso"] + L["head"])
        # small safety factor for the discrete-time step vs the rate bound
        return 1.05 * max(wrist, ankle, nose) + 1e-6


def _capsule_mask(xs, ys, p0, p1, r):
    d = p1 - p0
    len2 = float(d @ d)
    px, py = xs - p0[0], ys - p0[1]
    if len2 < 1e-12:
        return px**2 + py**2 <= r**2
    s = np.clip((px * d[0] + py * d[1]) / len2, 0.0, 1.0)
    cx = px - s * d[0]
    cy = py - s * d[1]
    return cx**2 + cy**2 <= r**2


def _rect_mask(xs, ys, p0, p1, halfwidth):
    c = (p0 + p1) / 2
    d = p1 - p0
    length = np.linalg.norm(d)
    u = d / (length + 1e-12)
    dx, dy = xs - c[0], ys - c[1]
    along = dx * u[0] + dy * u[1]
    perp = -dx * u[1] + dy * u[0]
    return (np.abs(along) <= length / 2) & (np.abs(perp) <= halfwidth)


def _ellipse_mask(xs, ys, center, axis_dir, a, b):
    u = axis_dir / (np.linalg.norm(axis_dir) + 1e-12)
    dx, dy = xs - center[0], ys - center[1]
    along = dx * u[0] + dy * u[1]
    perp = -dx * u[1] + dy * u[0]
    return (along / a) ** 2 + (perp / b) ** 2 <= 1.0


class _Background:
    """Seeded background painter for the three styles, values in [0, 1]."""

    def __init__(self, script: MotionScript, cfg: SceneConfig):
        rng = script.bg_rng_state
        self.cfg = cfg
        h, w = cfg.height, cfg.width
        self.top = rng.uniform(0.25, 0.8, 3)
        self.bottom = rng.uniform(0.1, 0.6, 3)
        ys = np.linspace(0.0, 1.0, h)[:, None, None]
        self.base = (1 - ys) * self.top + ys * self.bottom
        self.base = np.broadcast_to(self.base, (h, w, 3)).copy()
        # a few fixed props for visual structure
        xs, ys2 = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        for _ in range(3):
            cx, cy = rng.uniform(0.1, 0.9) * w, rng.uniform(0.1, 0.9) * h
            rw, rh = rng.uniform(0.08, 0.22) * w, rng.uniform(0.08, 0.22) * h
            color = rng.uniform(0.1, 0.9, 3)
            box = (np.abs(xs - cx) <= rw) & (np.abs(ys2 - cy) <= rh)
            self.base[box] = color
        self.xs, self.ys = xs, ys2
        self.freq = rng.uniform(0.5, 1.5, 2)
        self.speed = rng.uniform(1.0, 3.0, 2)
        self.phase = rng.uniform(0, 2 * np.pi, 3)
        self.distractor_color = rng.uniform(0.1, 0.9, 3)
        self.distractor_r = 0.10 * min(h, w)
        self.distractor_freq = rng.integers(1, 3, 2).astype(float)

    def frame(self, t: float) -> np.ndarray:
        cfg = self.cfg
        h, w = cfg.height, cfg.width
        if cfg.background == "static":
            return self.base.copy()
        if cfg.background == "drifting":
            n = cfg.n_frames
            u = 2 * np.pi * (self.freq[0] * self.xs / w + self.speed[0] * t / n)
            v = 2 * np.pi * (self.freq[1] * self.ys / h + self.speed[1] * t / n)
            tex = np.stack(
                [0.5 + 0.22 * np.sin(u + self.phase[c]) + 0.22 * np.cos(v + self.phase[c])
                 for c in range(3)],
                axis=-1,
            )
            return np.clip(0.55 * self.base + 0.45 * tex, 0.0, 1.0)
        # moving distractor over the static base
        n = cfg.n_frames
        cx = w * (0.5 + 0.38 * np.sin(2 * np.pi * self.distractor_freq[0] * t / n))
        cy = h * (0.22 + 0.12 * np.sin(2 * np.pi * self.distractor_freq[1] * t / n + 1.3))
        img = self.base.copy()
        blob = (self.xs - cx) ** 2 + (self.ys - cy) ** 2 <= self.distractor_r**2
        img[blob] = self.distractor_color
        return img


def generate_video(cfg: SceneConfig, seed: int) -> list[LabeledFrame]:
    """Render a labeled clip; deterministic for fixed (cfg, seed).

    Raises when the figure leaves the frame in more than 10% of frames
    (reduce cfg.motion_amplitude).
    """
    script = MotionScript(cfg, seed)
    bg = _Background(script, cfg)
    h, w = cfg.height, cfg.width
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))

    frames = []
    out_of_frame = 0
    for t in range(cfg.n_frames):
        pose = script.pose_at(t)
        if not pose.visibility.all():
            out_of_frame += 1
        bones = script.bones_at(t)
        img = bg.frame(t)

        if cfg.shadow:
            ank = np.stack([bones["l_lower_leg"][1], bones["r_lower_leg"][1]])
            cx = float(ank[:, 0].mean())
            cy = float(ank[:, 1].max()) + 0.04 * h
            sx = 0.30 * cfg.figure_height_frac * h
            sy = 0.055 * cfg.figure_height_frac * h
            g = np.exp(-(((xs - cx) / sx) ** 2 + ((ys - cy) / sy) ** 2))
            img = img * (1.0 - 0.45 * g[..., None])

        masks = {}
        for part in PART_NAMES:
            p0, p1 = bones[part]
            if part == "head":
                c = (p0 + p1) / 2
                masks[part] = _ellipse_mask(
                    xs, ys, c, p1 - p0, 0.75 * script.lengths["head"], 0.55 * script.lengths["head"]
                )
            elif part == "torso":
                masks[part] = _rect_mask(xs, ys, p0, p1, script.torso_halfwidth)
            else:
                masks[part] = _capsule_mask(xs, ys, p0, p1, script.limb_radius)

        for part in RENDER_ORDER:
            p0, p1 = bones[part]
            d = p1 - p0
            u = d / (np.linalg.norm(d) + 1e-12)
            along = (xs - p0[0]) * u[0] + (ys - p0[1]) * u[1]
            ramp = np.clip(along / (np.linalg.norm(d) + 1e-12), 0.0, 1.0)
            shade = script.part_colors[part][None, None, :] + ramp[..., None] * script.part_grad[part]
            m = masks[part]
            img[m] = np.clip(shade, 0.02, 0.98)[m]

        part_masks = np.stack([masks[p] for p in PART_NAMES])
        image = (2.0 * np.clip(img, 0.0, 1.0) - 1.0).astype(np.float32)
        frames.append(LabeledFrame(image=image, pose=pose, part_masks=part_masks))

    if out_of_frame > 0.10 * cfg.n_frames:
        raise ValueError(
            f"figure out of frame in {out_of_frame}/{cfg.n_frames} frames; "
            "reduce motion_amplitude"
        )
    return frames


def scene_info(cfg: SceneConfig, seed: int) -> dict:
    """Derived scene quantities (velocity cap, part lengths) without rendering."""
    script = MotionScript(cfg, seed)
    return {
        "velocity_cap": script.velocity_cap(),
        "lengths": dict(script.lengths),
        "limb_radius": script.limb_radius,
    }


def renderer_bones(cfg: SceneConfig, seed: int, t: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """The renderer's internal bone endpoints for frame t (test oracle)."""
    return MotionScript(cfg, seed).bones_at(t)


_HOLE_KERNEL = np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]])


def estimate_background(
    frames: list[np.ndarray] | np.ndarray,
    fg_masks: list[np.ndarray] | np.ndarray,
    tol: float = 1e-8,
    max_iters: int = 5000,
) -> np.ndarray:
    """Per-pixel mean over frames where the pixel shows background.

    Pixels occluded in every frame are filled by Jacobi iteration: each hole
    pixel is repeatedly replaced by the mean of its in-frame 8-neighbors
    (known pixels stay fixed, holes start at the global known mean) until
    the largest update falls below ``tol``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    masks = np.asarray(fg_masks, dtype=bool)
    if frames.ndim != 4 or masks.ndim != 3:
        raise ValueError("expected frames (N,H,W,3) and masks (N,H,W)")
    bg = ~masks
    cnt = bg.sum(axis=0).astype(np.float64)
    acc = (frames * bg[..., None]).sum(axis=0)
    known = cnt > 0
    out = np.zeros_like(acc)
    out[known] = acc[known] / cnt[known][:, None]
    if known.all():
        return out.astype(np.float32)

    holes = ~known
    fill0 = out[known].mean(axis=0) if known.any() else np.zeros(3)
    out[holes] = fill0
    n_neigh = convolve(np.ones(known.shape, dtype=np.float64), _HOLE_KERNEL, mode="constant", cval=0.0)
    for _ in range(max_iters):
        delta = 0.0
        for ch in range(out.shape[-1]):
            nb = convolve(out[..., ch], _HOLE_KERNEL, mode="constant", cval=0.0)
            new = nb[holes] / n_neigh[holes]
            delta = max(delta, float(np.abs(new - out[..., ch][holes]).max(initial=0.0)))
            out[..., ch][holes] = new
        if delta < tol:
            break
    return out.astype(np.float32)
