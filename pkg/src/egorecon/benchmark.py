"""Synthetic ground-truth scenes with dynamic cameras and crop occlusions.

Procedural walkers follow closed-form paths with heading tangent to the
path and sinusoidal limb swing.  A virtual camera (static, orbiting, or
laterally tracking) films them, and visibility comes from a crop window
that oscillates horizontally around each person's projected bounding box:
a person counts as visible only while at least half of their projected
joints fall inside the crop.  Observations simulate an upstream detector:
camera-frame root poses and 2D keypoints with Gaussian noise on visible
frames and nothing at all on occluded ones.  Anchor trajectories are the
ground-truth egocentric motion plus configurable noise and heading-rate
bias, standing in for a learned trajectory predictor.

Everything is deterministic given the config seed; visibility depends
only on geometry and never on the RNG.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .body import NUM_BODY_JOINTS, NUM_JOINTS, KinematicTree, default_tree
from .camera import Intrinsics, default_intrinsics, init_extrinsics, look_at, project_batch
from .ego import EgoTrajectory, apply_start_override, ego_to_global, global_to_ego
from .geometry import (
    Rotation,
    Transform,
    axis_angle_to_mat,
    heading_from_mat,
    heading_sequence,
    mat_to_quat,
    quat_to_axis_angle,
    quat_to_mat,
    rotz,
    skew,
    wrap_angle,
)
from .motion import GlobalMotion
from .problem import CameraTrack, PersonTrack, SceneProblem

__all__ = [
    "AnchorNoiseConfig",
    "NoiseConfig",
    "PersonObservation",
    "Scene",
    "SceneConfig",
    "camera_track",
    "generate_motion",
    "generate_scene",
    "initialize_camera",
    "make_anchors",
    "observe",
    "oscillating_window_visibility",
    "scene_motions",
]

PATTERNS = ("straight", "circle", "figure-eight", "stand")
CAMERA_PATTERNS = ("static", "orbit", "lateral-track")

WALK_SPEED = 1.2  # m/s
CIRCLE_RADIUS = 2.0  # m
STRIDE_LENGTH = 1.3  # m of travel per gait cycle
CAMERA_BACKOFF = 5.0  # m behind the subject; near the default crop this yields
# roughly 45% occlusion per person (window half-width 150 of amplitude 200)
CAMERA_RAISE = 0.6  # m above the subject root
ORBIT_PERIOD_S = 24.0


@dataclass(frozen=True)
class NoiseConfig:
    """Observation noise: keypoint pixels, root rotation, root translation."""

    keypoint_px: float = 0.0
    rot_rad: float = 0.0
    trans_m: float = 0.0

    def __post_init__(self):
        for name in ("keypoint_px", "rot_rad", "trans_m"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class AnchorNoiseConfig:
    """Anchor perturbation per component group, plus a heading-rate bias."""

    sigma_xy: float = 0.0
    sigma_z: float = 0.0
    sigma_dphi: float = 0.0
    sigma_eta: float = 0.0
    dphi_bias: float = 0.0

    def __post_init__(self):
        for name in ("sigma_xy", "sigma_z", "sigma_dphi", "sigma_eta"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class SceneConfig:
    """Everything needed to build one synthetic scene deterministically."""

    persons: int = 1
    pattern: str | tuple = "circle"
    frames: int = 300
    fps: float = 30.0
    camera: str = "static"
    window_width: int = 300
    window_height: int = 600
    period_s: float = 4.8
    amplitude_px: float = 200.0
    image_size: int = 1000
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    anchor_noise: AnchorNoiseConfig = field(default_factory=AnchorNoiseConfig)
    seed: int = 0

    def __post_init__(self):
        if self.persons < 1:
            raise ValueError(f"need at least one person, got {self.persons}")
        if self.frames < 1:
            raise ValueError(f"need at least one frame, got {self.frames}")
        if not self.fps > 0.0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        for pattern in self.patterns:
            if pattern not in PATTERNS:
                raise ValueError(f"unknown motion pattern {pattern!r}; known: {PATTERNS}")
        if self.camera not in CAMERA_PATTERNS:
            raise ValueError(f"unknown camera pattern {self.camera!r}; known: {CAMERA_PATTERNS}")
        if self.window_width < 1 or self.window_height < 1:
            raise ValueError("crop window must be at least 1x1 px")
        if not self.period_s > 0.0:
            raise ValueError("oscillation period must be positive")
        if self.amplitude_px < 0.0:
            raise ValueError("oscillation amplitude must be non-negative")
        if self.amplitude_px + self.window_width / 2.0 > self.image_size / 2.0:
            raise ValueError(
                "oscillating crop window must stay inside the virtual image: "
                f"amplitude {self.amplitude_px} + half width {self.window_width / 2.0} "
                f"exceeds half image {self.image_size / 2.0}"
            )
        if self.window_height > self.image_size:
            raise ValueError("crop window taller than the virtual image")

    @property
    def patterns(self) -> tuple:
        if isinstance(self.pattern, str):
            return (self.pattern,) * self.persons
        if len(self.pattern) != self.persons:
            raise ValueError(
                f"{len(self.pattern)} patterns for {self.persons} persons"
            )
        return tuple(self.pattern)

    @property
    def intrinsics(self) -> Intrinsics:
        return default_intrinsics(self.image_size, self.image_size)


def _gait_pose(rng, frames, travel, *, idle=False):
    """Sinusoidal limb swing phase-locked to distance traveled."""
    axes = rng.normal(size=(NUM_BODY_JOINTS, 3))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    base = rng.uniform(-0.2, 0.2, size=NUM_BODY_JOINTS)
    amp = rng.uniform(0.05, 0.25, size=NUM_BODY_JOINTS)
    offset = rng.uniform(0.0, 2.0 * np.pi, size=NUM_BODY_JOINTS)
    if idle:
        amp = amp * 0.1
        phase = np.linspace(0.0, 2.0 * np.pi * frames / 120.0, frames, endpoint=False)
    else:
        phase = 2.0 * np.pi * travel / STRIDE_LENGTH
    angle = base + amp * np.sin(phase[:, None] + offset)
    return angle[..., None] * axes


def generate_motion(
    pattern: str,
    frames: int,
    fps: float = 30.0,
    seed=0,
    *,
    start=(0.0, 0.0),
    heading0: float = 0.0,
    speed: float = WALK_SPEED,
    radius: float = CIRCLE_RADIUS,
) -> GlobalMotion:
    """Procedural walker following a closed-form path, deterministic per seed."""
    if pattern not in PATTERNS:
        raise ValueError(f"unknown motion pattern {pattern!r}; known: {PATTERNS}")
    rng = np.random.default_rng(seed)
    t = np.arange(frames) / fps
    start = np.asarray(start, dtype=float)
    if pattern == "stand":
        xy = np.tile(start, (frames, 1))
        phi = np.full(frames, heading0)
        travel = np.zeros(frames)
    elif pattern == "straight":
        direction = np.array([np.cos(heading0), np.sin(heading0)])
        travel = speed * t
        xy = start + travel[:, None] * direction
        phi = np.full(frames, heading0)
    elif pattern == "circle":
        alpha0 = heading0 - np.pi / 2.0  # tangent heading at t = 0
        alpha = alpha0 + speed * t / radius
        center = start - radius * np.array([np.cos(alpha0), np.sin(alpha0)])
        xy = center + radius * np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)
        phi = alpha + np.pi / 2.0
        travel = speed * t
    else:  # figure-eight
        scale = 2.0
        u = speed * t / scale
        local = np.stack([scale * np.sin(u), 0.5 * scale * np.sin(2.0 * u)], axis=-1)
        turn = rotz(heading0)[:2, :2]
        xy = start + local @ turn.T
        d_local = np.stack([scale * np.cos(u), scale * np.cos(2.0 * u)], axis=-1)
        d_world = d_local @ turn.T
        phi = np.arctan2(d_world[:, 1], d_world[:, 0])
        # path speed varies along the curve; lock gait to actual arc length
        steps = np.linalg.norm(np.diff(xy, axis=0), axis=-1)
        travel = np.concatenate([[0.0], np.cumsum(steps)])
    idle = pattern == "stand"
    bob = 0.015 * np.sin(2.0 * np.pi * travel / STRIDE_LENGTH) if not idle else \
        0.004 * np.sin(2.0 * np.pi * t / 4.0)
    z = 0.95 + bob
    translations = np.concatenate([xy, z[:, None]], axis=-1)
    rotations = np.stack([rotz(p) for p in phi])
    theta = _gait_pose(rng, frames, travel, idle=idle)
    beta = np.tile(rng.normal(scale=0.3, size=10), (frames, 1))
    return GlobalMotion(translations, rotations, theta, beta, fps=fps)


def camera_track(pattern, motions, intrinsics, fps: float) -> CameraTrack:
    """Ground-truth camera following the named movement pattern."""
    if pattern not in CAMERA_PATTERNS:
        raise ValueError(f"unknown camera pattern {pattern!r}; known: {CAMERA_PATTERNS}")
    frames = motions[0].frames
    centroid = np.mean([m.translations for m in motions], axis=0)  # (T, 3)
    quats = np.empty((frames, 4))
    positions = np.empty((frames, 3))
    if pattern == "static":
        target = centroid.mean(axis=0)
        eye = target + np.array([0.0, -CAMERA_BACKOFF, CAMERA_RAISE])
        pose = look_at(eye, target)
        quats[:] = mat_to_quat(pose.rotation.as_matrix())
        positions[:] = pose.translation
        return CameraTrack(quats, positions, intrinsics)
    if pattern == "orbit":
        target = centroid.mean(axis=0)
        angle = 2.0 * np.pi * np.arange(frames) / (ORBIT_PERIOD_S * fps) - np.pi / 2.0
        for f in range(frames):
            eye = target + np.array(
                [
                    CAMERA_BACKOFF * np.cos(angle[f]),
                    CAMERA_BACKOFF * np.sin(angle[f]),
                    CAMERA_RAISE,
                ]
            )
            pose = look_at(eye, target)
            quats[f] = mat_to_quat(pose.rotation.as_matrix())
            positions[f] = pose.translation
        return CameraTrack(quats, positions, intrinsics)
    # lateral-track: straight dolly rail beside the action; the camera slides
    # along x with the subjects at fixed height and depth, orientation fixed
    mean_target = centroid.mean(axis=0)
    rail_y = mean_target[1] - CAMERA_BACKOFF
    rail_z = mean_target[2] + CAMERA_RAISE
    pose = look_at(
        np.array([mean_target[0], rail_y, rail_z]), mean_target
    )
    quats[:] = mat_to_quat(pose.rotation.as_matrix())
    positions[:, 0] = centroid[:, 0]
    positions[:, 1] = rail_y
    positions[:, 2] = rail_z
    return CameraTrack(quats, positions, intrinsics)


def oscillating_window_visibility(motions, camera: CameraTrack, cfg: SceneConfig, *, tree=None):
    """Per-person visibility from the oscillating crop window, (N, T) bool.

    The crop is centered on each person's projected bounding box, shifted
    horizontally by ``amplitude * sin(2*pi*t / period)``; a person is
    visible while at least half of their projected joints land inside.
    Depends only on geometry and config, never on the RNG.
    """
    tree = tree if tree is not None else default_tree()
    cam_rot = quat_to_mat(camera.quaternions)
    cam_pos = camera.positions
    frames = len(camera)
    t = np.arange(frames)
    shift = cfg.amplitude_px * np.sin(2.0 * np.pi * t / (cfg.period_s * cfg.fps))
    half_w = cfg.window_width / 2.0
    half_h = cfg.window_height / 2.0
    out = np.zeros((len(motions), frames), dtype=bool)
    for i, motion in enumerate(motions):
        pixels, valid = project_batch(motion.joints(tree), cam_rot, cam_pos, camera.intrinsics)
        for f in range(frames):
            good = valid[f]
            if not good.any():
                continue
            px = pixels[f, good]
            lo, hi = px.min(axis=0), px.max(axis=0)
            center_x = (lo[0] + hi[0]) / 2.0 + shift[f]
            center_y = (lo[1] + hi[1]) / 2.0
            inside = (
                good
                & (np.abs(pixels[f, :, 0] - center_x) <= half_w)
                & (np.abs(pixels[f, :, 1] - center_y) <= half_h)
            )
            out[i, f] = inside.sum() * 2 >= NUM_JOINTS
    return out


@dataclass
class PersonObservation:
    """Simulated upstream output for one person.

    Arrays cover the full scene span; occluded frames hold NaN throughout
    (absent, never zero-filled).  ``keypoint_conf`` is 1 on visible frames
    and 0 elsewhere.
    """

    visibility: np.ndarray  # (T,) bool
    theta: np.ndarray  # (T, 23, 3), NaN when hidden
    beta: np.ndarray  # (T, 10), NaN when hidden
    cam_rot: np.ndarray  # (T, 3, 3) camera-frame root rotation, NaN when hidden
    cam_pos: np.ndarray  # (T, 3) camera-frame root position, NaN when hidden
    keypoints2d: np.ndarray  # (T, 24, 2) pixel detections, NaN when hidden
    keypoint_conf: np.ndarray  # (T, 24)

    @property
    def frames(self) -> int:
        return self.visibility.shape[0]


def observe(motions, camera: CameraTrack, visibility, noise: NoiseConfig | None = None,
            seed=0, *, tree=None):
    """Simulate per-person detector output on visible frames.

    Keypoints are ground-truth projections plus isotropic Gaussian pixel
    noise; camera-frame root poses are the ground truth composed with a
    small random rigid perturbation.  Occluded frames carry NaN.
    Deterministic for a given seed.
    """
    noise = noise if noise is not None else NoiseConfig()
    tree = tree if tree is not None else default_tree()
    rng = np.random.default_rng(seed)
    cam_rot = quat_to_mat(camera.quaternions)
    cam_pos = camera.positions
    visibility = np.asarray(visibility, dtype=bool)
    out = []
    for i, motion in enumerate(motions):
        frames = motion.frames
        pixels, _ = project_batch(motion.joints(tree), cam_rot, cam_pos, camera.intrinsics)
        keypoints = pixels + rng.normal(scale=noise.keypoint_px or 0.0, size=pixels.shape) \
            if noise.keypoint_px > 0.0 else pixels.copy()
        obs_rot = np.einsum("tji,tjk->tik", cam_rot, motion.rotations)
        if noise.rot_rad > 0.0:
            wobble = axis_angle_to_mat(rng.normal(scale=noise.rot_rad, size=(frames, 3)))
            obs_rot = np.einsum("tij,tjk->tik", obs_rot, wobble)
        delta = motion.translations - cam_pos
        obs_pos = np.einsum("tji,tj->ti", cam_rot, delta)
        if noise.trans_m > 0.0:
            obs_pos = obs_pos + rng.normal(scale=noise.trans_m, size=obs_pos.shape)
        vis = visibility[i]
        hidden = ~vis
        theta = motion.theta.copy()
        beta = motion.beta.copy()
        for arr in (theta, beta, obs_rot, obs_pos, keypoints):
            arr[hidden] = np.nan
        conf = np.where(vis[:, None], 1.0, 0.0) * np.ones((frames, NUM_JOINTS))
        out.append(
            PersonObservation(vis.copy(), theta, beta, obs_rot, obs_pos, keypoints, conf)
        )
    return out


def make_anchors(
    gt_ego: EgoTrajectory,
    drift: AnchorNoiseConfig | None = None,
    seed=0,
    bias_direction: float = 1.0,
) -> EgoTrajectory:
    """Noisy copy of an egocentric trajectory, standing in for a predictor.

    Adds i.i.d. noise per component group and a constant heading-rate
    bias, then zeroes the step-0 position and heading (they are unknown at
    inference time; step-0 height and orientation residual stay).
    ``bias_direction`` signs the heading-rate bias: trajectory predictors
    run per person, so their accumulated errors point in independent
    directions rather than turning every person the same way.
    """
    drift = drift if drift is not None else AnchorNoiseConfig()
    rng = np.random.default_rng(seed)
    m = len(gt_ego)
    dxy = gt_ego.dxy + rng.normal(scale=drift.sigma_xy, size=(m, 2)) \
        if drift.sigma_xy > 0.0 else gt_ego.dxy.copy()
    z = gt_ego.z + rng.normal(scale=drift.sigma_z, size=m) \
        if drift.sigma_z > 0.0 else gt_ego.z.copy()
    dphi = gt_ego.dphi + rng.normal(scale=drift.sigma_dphi, size=m) \
        if drift.sigma_dphi > 0.0 else gt_ego.dphi.copy()
    dphi = dphi + bias_direction * drift.dphi_bias
    eta = gt_ego.eta + rng.normal(scale=drift.sigma_eta, size=(m, 6)) \
        if drift.sigma_eta > 0.0 else gt_ego.eta.copy()
    dxy = dxy.copy()
    dxy[0] = 0.0
    dphi = dphi.copy()
    dphi[0] = 0.0
    return gt_ego.replace_columns(dxy=dxy, z=z, dphi=dphi, eta=eta)


@dataclass
class Scene:
    """One benchmark scene: observations, anchors, and optional ground truth."""

    fps: float
    persons: list  # list[PersonObservation]
    anchors: list  # list[EgoTrajectory]
    intrinsics: Intrinsics
    camera: CameraTrack | None = None  # working estimate, None until initialized
    egos: list | None = None  # optimized trajectories, None until optimized
    gt_motions: list | None = None
    gt_camera: CameraTrack | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.persons:
            raise ValueError("scene needs at least one person")
        frames = self.persons[0].frames
        if any(p.frames != frames for p in self.persons):
            raise ValueError("persons must cover the same frame span")
        if len(self.anchors) != len(self.persons):
            raise ValueError("one anchor trajectory per person required")
        if any(len(a) != frames for a in self.anchors):
            raise ValueError("anchor length must match the scene span")
        if self.egos is not None and len(self.egos) != len(self.persons):
            raise ValueError("one trajectory per person required")
        if self.camera is not None and len(self.camera) != frames:
            raise ValueError("camera track must match the scene span")
        if self.gt_motions is not None and len(self.gt_motions) != len(self.persons):
            raise ValueError("ground truth must cover every person")

    @property
    def frames(self) -> int:
        return self.persons[0].frames

    def to_problem(self, *, tree: KinematicTree | None = None) -> SceneProblem:
        """Build the optimization problem; requires infilled bodies and a camera."""
        if self.camera is None:
            raise ValueError("scene has no camera estimate; initialize it first")
        tree = tree if tree is not None else default_tree()
        tracks = []
        for i, (obs, anchor) in enumerate(zip(self.persons, self.anchors)):
            if not np.isfinite(obs.theta).all() or not np.isfinite(obs.beta).all():
                raise ValueError(
                    f"person {i} has unfilled occluded body frames; run infill first"
                )
            hidden = ~obs.visibility
            cam_rot = obs.cam_rot.copy()
            cam_pos = obs.cam_pos.copy()
            keypoints = obs.keypoints2d.copy()
            cam_rot[hidden] = np.eye(3)  # inert placeholders, masked by visibility
            cam_pos[hidden] = 0.0
            keypoints[hidden] = 0.0
            ego = self.egos[i] if self.egos is not None else self.anchors[i]
            tracks.append(
                PersonTrack(
                    span=(0, self.frames - 1),
                    visibility=obs.visibility.copy(),
                    theta=obs.theta.copy(),
                    beta=obs.beta.copy(),
                    ego=ego,
                    anchor=anchor,
                    cam_obs_rot=cam_rot,
                    cam_obs_pos=cam_pos,
                    keypoints2d=keypoints,
                    keypoint_conf=obs.keypoint_conf.copy(),
                )
            )
        return SceneProblem(tuple(tracks), self.camera, fps=self.fps, tree=tree)


def _trajectory_transforms(traj) -> list[Transform]:
    return [
        Transform(Rotation(traj.rotations[t], validate=False), traj.translations[t])
        for t in range(len(traj))
    ]


def _observation_transforms(obs: PersonObservation) -> list[Transform]:
    identity = Transform(Rotation(np.eye(3), validate=False), np.zeros(3))
    return [
        Transform(Rotation(obs.cam_rot[t], validate=False), obs.cam_pos[t])
        if obs.visibility[t]
        else identity
        for t in range(obs.frames)
    ]


def _first_visible(visible) -> int:
    """Index of the first visible frame.

    Rebasing anchors here deliberately: the start override is the only free
    placement parameter, and anchoring at a later frame would leave it
    carrying the accumulated heading error, a journey of many hundreds of
    bounded optimizer steps that 500 iterations cannot finish. Anchored at
    the front, every downstream step correction pushes the same way and the
    optimizer sweeps the error out in one coherent pass.
    """
    return int(np.argmax(np.asarray(visible, dtype=bool)))


def _rebase_to_pose(ego: EgoTrajectory, frame: int, target_rot, target_xy) -> EgoTrajectory:
    """Yaw-and-shift an egocentric reconstruction through a pose at one frame."""
    traj = ego_to_global(ego)
    phi_here = heading_sequence(traj.rotations)[frame]
    phi_want, _ = heading_from_mat(np.asarray(target_rot, dtype=float))
    turn = wrap_angle(float(phi_want) - float(phi_here))
    spin = rotz(turn)[:2, :2]
    xy0_old = ego.dxy[0]
    xy0_new = np.asarray(target_xy, dtype=float) - spin @ (
        traj.translations[frame, :2] - xy0_old
    )
    phi0_new = wrap_angle(float(ego.dphi[0]) + turn)
    return apply_start_override(ego, float(xy0_new[0]), float(xy0_new[1]), phi0_new)


def _camera_from_pairs(global_poses, cam_poses, visibility, intrinsics) -> CameraTrack:
    poses = init_extrinsics(global_poses, cam_poses, visibility)
    quats = np.stack([mat_to_quat(p.rotation.as_matrix()) for p in poses])
    positions = np.stack([p.translation for p in poses])
    return CameraTrack(quats, positions, intrinsics)


def _se3_inv(m):
    rot = m[:3, :3].T
    out = np.eye(4)
    out[:3, :3] = rot
    out[:3, 3] = -rot @ m[:3, 3]
    return out


def _se3_v(omega):
    # translation part of the SE(3) exponential: exp(rho, omega) has t = V @ rho
    theta = float(np.linalg.norm(omega))
    w = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * w
    return (
        np.eye(3)
        + (1.0 - np.cos(theta)) / theta**2 * w
        + (theta - np.sin(theta)) / theta**3 * (w @ w)
    )


def _se3_log(m):
    omega = quat_to_axis_angle(mat_to_quat(m[:3, :3]))
    rho = np.linalg.solve(_se3_v(omega), m[:3, 3])
    return np.concatenate([rho, omega])


def _se3_exp(xi):
    rho, omega = xi[:3], xi[3:]
    out = np.eye(4)
    out[:3, :3] = axis_angle_to_mat(omega)
    out[:3, 3] = _se3_v(omega) @ rho
    return out


def _se3_mean(mats):
    """Geodesic (Karcher) mean of rigid poses under the screw metric.

    Independently drifting anchors imply per-person camera poses that
    disagree by near-opposite rigid warps. Averaging their positions
    directly shortens the chord between rotated copies of the true camera,
    bowing the estimate toward the warp's rotation center; composing along
    the geodesic instead cancels opposed warps without that bias.
    """
    est = mats[0]
    for _ in range(16):
        logs = [_se3_log(m @ _se3_inv(est)) for m in mats]
        delta = np.mean(logs, axis=0)
        est = _se3_exp(delta) @ est
        if float(np.linalg.norm(delta)) < 1e-12:
            break
    return est


def _joint_camera(global_poses, cam_poses, visibility, intrinsics) -> CameraTrack:
    """Per-frame camera from all visible persons via the SE(3) geodesic mean."""
    frames = visibility.shape[1]
    quats = np.zeros((frames, 4))
    positions = np.zeros((frames, 3))
    last = np.eye(4)
    for t in range(frames):
        implied = [
            gp[t].as_matrix() @ _se3_inv(cp[t].as_matrix())
            for i, (gp, cp) in enumerate(zip(global_poses, cam_poses))
            if visibility[i, t]
        ]
        if implied:
            last = implied[0] if len(implied) == 1 else _se3_mean(implied)
        quats[t] = mat_to_quat(last[:3, :3])
        positions[t] = last[:3, 3]
    return CameraTrack(quats, positions, intrinsics)


def _slerp(q0, q1, u: float):
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1, d = -q1, -d
    if d > 1.0 - 1e-12:
        out = q0 + u * (q1 - q0)
    else:
        ang = np.arccos(min(d, 1.0))
        out = (np.sin((1.0 - u) * ang) * q0 + np.sin(u * ang) * q1) / np.sin(ang)
    return out / np.linalg.norm(out)


def _bridge_low_confidence(camera: CameraTrack, trusted) -> CameraTrack:
    """Rebuild camera poses at low-confidence frames by interpolation.

    A per-frame extrinsic estimate is only as good as the trajectories behind
    it: when every person contributes, independent anchor errors largely
    average out, but a frame seeing a subset inherits one anchor's full
    accumulated drift. Poses at such frames are discarded and bridged from
    the flanking trusted estimates (rotation along the geodesic, position
    linearly); leading and trailing stretches hold the nearest trusted pose.
    The camera's own smoothness makes that a better guess than the
    contaminated fits.
    """
    trusted = np.asarray(trusted, dtype=bool)
    idx = np.flatnonzero(trusted)
    if len(idx) == 0 or len(idx) == len(trusted):
        return camera
    quats = camera.quaternions.copy()
    positions = camera.positions.copy()
    quats[: idx[0]] = quats[idx[0]]
    positions[: idx[0]] = positions[idx[0]]
    quats[idx[-1] + 1 :] = quats[idx[-1]]
    positions[idx[-1] + 1 :] = positions[idx[-1]]
    for left, right in zip(idx[:-1], idx[1:]):
        for t in range(left + 1, right):
            u = (t - left) / (right - left)
            quats[t] = _slerp(quats[left], quats[right], u)
            positions[t] = (1.0 - u) * positions[left] + u * positions[right]
    return replace(camera, quaternions=quats, positions=positions)


def initialize_camera(scene: Scene, *, from_gt: bool = False) -> Scene:
    """Estimate the camera track from root observations and return the scene with it.

    With ``from_gt`` the (mutually consistent) ground-truth root poses are
    paired with the camera-frame observations directly.  Otherwise the
    anchor trajectories are used, which each live in their own frame
    because the start pose is unknown: the camera is first estimated in
    the most-visible person's frame, every other person is rebased so
    that their first visible observation agrees with that camera, the
    camera is re-estimated from all persons together, and finally every
    person (the reference included) is rebased onto that joint camera.
    The rebased trajectories are stored on the returned scene as the
    working estimates.

    The joint estimate combines persons with the SE(3) geodesic mean
    (accumulated per-person trajectory error pulls the implied camera in a
    different direction for each person, and the geodesic mean cancels
    opposed pulls without the chord-shortening bias of averaging rotated
    positions), and frames seeing only a subset of persons are bridged by
    interpolation between fully-observed frames.  A single-person scene has
    no such redundancy, so its camera estimate inherits whatever drift the
    anchors carry.
    """
    visibility = np.stack([obs.visibility for obs in scene.persons])
    cam_poses = [_observation_transforms(obs) for obs in scene.persons]
    if from_gt:
        if scene.gt_motions is None:
            raise ValueError("scene carries no ground truth")
        trajectories = [m.root_trajectory() for m in scene.gt_motions]
        camera = _camera_from_pairs(
            [_trajectory_transforms(t) for t in trajectories],
            cam_poses,
            visibility,
            scene.intrinsics,
        )
        return replace(scene, camera=camera)

    reference = int(visibility.sum(axis=1).argmax())
    base = _bridge_low_confidence(
        _camera_from_pairs(
            [_trajectory_transforms(ego_to_global(scene.anchors[reference]))],
            [cam_poses[reference]],
            visibility[reference : reference + 1],
            scene.intrinsics,
        ),
        visibility[reference],
    )
    base_mats = quat_to_mat(base.quaternions)
    egos = []
    for i, (anchor, obs) in enumerate(zip(scene.anchors, scene.persons)):
        if i == reference or not obs.visibility.any():
            egos.append(anchor)
            continue
        t0 = _first_visible(obs.visibility)
        rot = base_mats[t0] @ obs.cam_rot[t0]
        pos = base_mats[t0] @ obs.cam_pos[t0] + base.positions[t0]
        egos.append(_rebase_to_pose(anchor, t0, rot, pos[:2]))
    counts = visibility.sum(axis=0)
    camera = _bridge_low_confidence(
        _joint_camera(
            [_trajectory_transforms(ego_to_global(e)) for e in egos],
            cam_poses,
            visibility,
            scene.intrinsics,
        ),
        counts >= counts.max(),
    )
    # Rebase everyone (reference included) onto the joint camera so the
    # working trajectories and the camera share one frame from the start.
    cam_mats = quat_to_mat(camera.quaternions)
    egos = []
    for anchor, obs in zip(scene.anchors, scene.persons):
        if not obs.visibility.any():
            egos.append(anchor)
            continue
        t0 = _first_visible(obs.visibility)
        rot = cam_mats[t0] @ obs.cam_rot[t0]
        pos = cam_mats[t0] @ obs.cam_pos[t0] + camera.positions[t0]
        egos.append(_rebase_to_pose(anchor, t0, rot, pos[:2]))
    return replace(scene, camera=camera, egos=egos)


def scene_motions(scene: Scene, *, source: str = "ego", tree=None):
    """Per-person global motions reconstructed from the named trajectory source.

    ``source``: ``ego`` uses optimized trajectories (falling back to the
    anchors when none are stored), ``anchor`` always uses the anchors, and
    ``gt`` returns the stored ground truth.
    """
    if source not in ("gt", "anchor", "ego"):
        raise ValueError(f"unknown motion source {source!r}")
    if source == "gt":
        if scene.gt_motions is None:
            raise ValueError("scene carries no ground truth")
        return list(scene.gt_motions)
    if source == "anchor" or scene.egos is None:
        egos = scene.anchors
    else:
        egos = scene.egos
    out = []
    for ego, obs in zip(egos, scene.persons):
        traj = ego_to_global(ego)
        out.append(
            GlobalMotion(
                traj.translations,
                traj.rotations,
                obs.theta,
                obs.beta,
                visibility=obs.visibility,
                fps=scene.fps,
            )
        )
    return out


def _person_starts(count: int, patterns):
    """Deterministic, collision-free spawn points.

    Straight walkers line up in parallel lanes (sidewalk style) so a
    laterally tracking camera keeps everyone framed.  Other patterns
    spread along one ring of the default turning radius facing
    tangentially, so circle walkers share a single rink; the 2.4 rad
    spacing keeps neighbors apart without placing pairs in dead
    opposition, where the group centroid would stop moving.
    """
    if all(p == "straight" for p in patterns):
        lanes = 1.8 * (np.arange(count) - (count - 1) / 2.0)
        return [np.array([0.0, lane]) for lane in lanes], [0.0] * count
    if count == 1:
        return [np.zeros(2)], [0.0]
    angles = 0.4 + 2.4 * np.arange(count)
    starts = [CIRCLE_RADIUS * np.array([np.cos(a), np.sin(a)]) for a in angles]
    headings = [float(a + np.pi / 2.0) for a in angles]
    return starts, headings


def generate_scene(config: SceneConfig) -> Scene:
    """Build a complete scene: motions, camera, occlusions, observations, anchors."""
    roots = np.random.SeedSequence(config.seed).spawn(2 * config.persons + 1)
    motion_seeds = roots[: config.persons]
    anchor_seeds = roots[config.persons : 2 * config.persons]
    observe_seed = roots[2 * config.persons]
    starts, headings = _person_starts(config.persons, config.patterns)
    motions = [
        generate_motion(
            pattern,
            config.frames,
            config.fps,
            seed,
            start=starts[i],
            heading0=headings[i],
        )
        for i, (pattern, seed) in enumerate(zip(config.patterns, motion_seeds))
    ]
    gt_camera = camera_track(config.camera, motions, config.intrinsics, config.fps)
    visibility = oscillating_window_visibility(motions, gt_camera, config)
    persons = observe(motions, gt_camera, visibility, config.noise, observe_seed)
    anchors = [
        make_anchors(
            global_to_ego(m.root_trajectory()),
            config.anchor_noise,
            seed,
            bias_direction=float((-1.0) ** i),
        )
        for i, (m, seed) in enumerate(zip(motions, anchor_seeds))
    ]
    return Scene(
        fps=config.fps,
        persons=persons,
        anchors=anchors,
        intrinsics=config.intrinsics,
        gt_motions=motions,
        gt_camera=gt_camera,
        metadata={
            "patterns": list(config.patterns),
            "camera_pattern": config.camera,
            "seed": int(config.seed),
        },
    )
