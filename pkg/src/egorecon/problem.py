"""Scene optimization problem: tracks, coefficients, and parameter state.

A scene couples N person tracks with one camera track over T frames.
During optimization the free parameters are every person's egocentric
step components plus the per-frame camera rotation (quaternion) and
translation; body poses, shapes, detections and anchors stay fixed.
:class:`SceneState` holds the free parameters as flat arrays so the
optimizer can update them without rebuilding validated objects each
iteration.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .body import NUM_BODY_JOINTS, NUM_JOINTS, KinematicTree, default_tree, fk_joints
from .camera import Intrinsics
from .ego import EgoTrajectory
from .geometry import quat_normalize

THREADS_ENV_VAR = "GLAMR_OPT_THREADS"


def worker_count() -> int:
    """Worker threads for per-person energy work, from the environment.

    Results are identical for any setting; the env var only trades
    latency.  Invalid or missing values mean single-threaded.
    """
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class PersonTrack:
    """One person's per-frame data over their span ``[start, end]``.

    Only ``ego`` is optimized; everything else is fixed input: the
    visibility mask, per-frame body pose/shape, the camera-coordinate
    root observations, 2D keypoint detections with confidences, and the
    anchor trajectory that regularization pulls toward.
    """

    span: tuple[int, int]
    visibility: np.ndarray  # (m,) bool
    theta: np.ndarray  # (m, 23, 3)
    beta: np.ndarray  # (m, 10)
    ego: EgoTrajectory  # length m, optimized
    anchor: EgoTrajectory  # length m, fixed target
    cam_obs_rot: np.ndarray  # (m, 3, 3) observed camera-frame root rotation
    cam_obs_pos: np.ndarray  # (m, 3) observed camera-frame root position
    keypoints2d: np.ndarray  # (m, 24, 2) detections, pixels
    keypoint_conf: np.ndarray  # (m, 24) detector confidences (carried, not weighted)

    def __post_init__(self):
        start, end = self.span
        m = end - start + 1
        if start < 0 or m < 1:
            raise ValueError(f"invalid span {self.span}")
        shapes = {
            "visibility": (self.visibility, (m,)),
            "theta": (self.theta, (m, NUM_BODY_JOINTS, 3)),
            "beta": (self.beta, (m, 10)),
            "cam_obs_rot": (self.cam_obs_rot, (m, 3, 3)),
            "cam_obs_pos": (self.cam_obs_pos, (m, 3)),
            "keypoints2d": (self.keypoints2d, (m, NUM_JOINTS, 2)),
            "keypoint_conf": (self.keypoint_conf, (m, NUM_JOINTS)),
        }
        for name, (arr, want) in shapes.items():
            arr = np.asarray(arr)
            if arr.shape != want:
                raise ValueError(f"{name} must have shape {want}, got {arr.shape}")
        if len(self.ego) != m or len(self.anchor) != m:
            raise ValueError("ego and anchor must cover the person's span")
        vis = np.asarray(self.visibility, dtype=bool)
        object.__setattr__(self, "visibility", vis)
        object.__setattr__(self, "_cache", {})

    def __len__(self) -> int:
        return self.span[1] - self.span[0] + 1

    def local_joints(self, tree: KinematicTree) -> np.ndarray:
        """Root-relative joints per frame, ``(m, 24, 3)``; cached.

        Body pose and shape are fixed during optimization, so these
        depend only on the track.
        """
        cache = self._cache
        key = id(tree)
        if key not in cache:
            m = len(self)
            cache[key] = fk_joints(
                tree,
                np.zeros((m, 3)),
                np.broadcast_to(np.eye(3), (m, 3, 3)),
                self.theta,
                self.beta,
            )
        return cache[key]


@dataclass(frozen=True)
class CameraTrack:
    """Per-frame camera-to-world poses plus fixed shared intrinsics."""

    quaternions: np.ndarray  # (T, 4) unit, (w, x, y, z)
    positions: np.ndarray  # (T, 3)
    intrinsics: Intrinsics

    def __post_init__(self):
        q = np.asarray(self.quaternions, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        if q.ndim != 2 or q.shape[1] != 4 or p.shape != (q.shape[0], 3):
            raise ValueError("camera track arrays must be (T, 4) and (T, 3)")
        if q.shape[0] < 1:
            raise ValueError("camera track must cover at least one frame")
        object.__setattr__(self, "quaternions", quat_normalize(q))
        object.__setattr__(self, "positions", p.astype(float))

    def __len__(self) -> int:
        return self.quaternions.shape[0]


@dataclass(frozen=True)
class SceneProblem:
    """Joint optimization problem over all persons and the camera."""

    persons: tuple[PersonTrack, ...]
    camera: CameraTrack
    fps: float = 30.0
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    tree: KinematicTree = field(default_factory=default_tree)

    def __post_init__(self):
        object.__setattr__(self, "persons", tuple(self.persons))
        if not self.persons:
            raise ValueError("scene needs at least one person")
        frames = len(self.camera)
        for i, person in enumerate(self.persons):
            if person.span[1] >= frames:
                raise ValueError(
                    f"person {i} span {person.span} exceeds scene length {frames}"
                )
        up = np.asarray(self.up, dtype=float).reshape(3)
        object.__setattr__(self, "up", up / np.linalg.norm(up))

    @property
    def frames(self) -> int:
        return len(self.camera)

    def state(self) -> "SceneState":
        return SceneState(
            dxy=[p.ego.dxy.copy() for p in self.persons],
            z=[p.ego.z.copy() for p in self.persons],
            dphi=[p.ego.dphi.copy() for p in self.persons],
            eta=[p.ego.eta.copy() for p in self.persons],
            cam_quat=self.camera.quaternions.copy(),
            cam_pos=self.camera.positions.copy(),
        )

    def with_state(self, state: "SceneState") -> "SceneProblem":
        """A copy of the problem carrying the state's parameter values."""
        persons = tuple(
            replace(
                person,
                ego=EgoTrajectory(
                    dxy=state.dxy[i], z=state.z[i], dphi=state.dphi[i],
                    eta=state.eta[i], fps=person.ego.fps,
                ),
            )
            for i, person in enumerate(self.persons)
        )
        camera = CameraTrack(
            quaternions=quat_normalize(state.cam_quat),
            positions=state.cam_pos.copy(),
            intrinsics=self.camera.intrinsics,
        )
        return replace(self, persons=persons, camera=camera)


@dataclass
class SceneState:
    """Free parameters as mutable arrays: per-person ego columns + camera."""

    dxy: list  # per person (m_i, 2)
    z: list  # per person (m_i,)
    dphi: list  # per person (m_i,)
    eta: list  # per person (m_i, 6)
    cam_quat: np.ndarray  # (T, 4)
    cam_pos: np.ndarray  # (T, 3)

    def to_vector(self) -> np.ndarray:
        parts = []
        for i in range(len(self.dxy)):
            parts.extend(
                [self.dxy[i].ravel(), self.z[i], self.dphi[i], self.eta[i].ravel()]
            )
        parts.extend([self.cam_quat.ravel(), self.cam_pos.ravel()])
        return np.concatenate(parts)

    def from_vector(self, vec: np.ndarray) -> "SceneState":
        vec = np.asarray(vec, dtype=float)
        out_dxy, out_z, out_dphi, out_eta = [], [], [], []
        k = 0
        for i in range(len(self.dxy)):
            m = self.dxy[i].shape[0]
            out_dxy.append(vec[k : k + 2 * m].reshape(m, 2)); k += 2 * m
            out_z.append(vec[k : k + m].copy()); k += m
            out_dphi.append(vec[k : k + m].copy()); k += m
            out_eta.append(vec[k : k + 6 * m].reshape(m, 6)); k += 6 * m
        t = self.cam_quat.shape[0]
        cam_quat = vec[k : k + 4 * t].reshape(t, 4); k += 4 * t
        cam_pos = vec[k : k + 3 * t].reshape(t, 3); k += 3 * t
        if k != vec.size:
            raise ValueError(f"vector length {vec.size} does not match state ({k})")
        return SceneState(out_dxy, out_z, out_dphi, out_eta, cam_quat, cam_pos)

    def zeros_like(self) -> "SceneState":
        return SceneState(
            dxy=[np.zeros_like(a) for a in self.dxy],
            z=[np.zeros_like(a) for a in self.z],
            dphi=[np.zeros_like(a) for a in self.dphi],
            eta=[np.zeros_like(a) for a in self.eta],
            cam_quat=np.zeros_like(self.cam_quat),
            cam_pos=np.zeros_like(self.cam_pos),
        )

    def copy(self) -> "SceneState":
        return SceneState(
            dxy=[a.copy() for a in self.dxy],
            z=[a.copy() for a in self.z],
            dphi=[a.copy() for a in self.dphi],
            eta=[a.copy() for a in self.eta],
            cam_quat=self.cam_quat.copy(),
            cam_pos=self.cam_pos.copy(),
        )


@dataclass(frozen=True)
class EnergyCoefficients:
    """Term weights for the scene energy.

    Defaults are the published multi-person set; ``w_t`` defaults to 0
    because observed camera-frame translations are typically too noisy
    to anchor on.
    """

    lambda_2d: float = 1.0
    lambda_traj: float = 100000.0
    lambda_reg: float = 100.0
    lambda_cam: float = 10000.0
    lambda_pen: float = 100000.0
    w_t: float = 0.0
    w_psi: tuple = (3.0, 10.0, 10000.0, 5.0, 10000.0)

    def __post_init__(self):
        values = (self.lambda_2d, self.lambda_traj, self.lambda_reg,
                  self.lambda_cam, self.lambda_pen, self.w_t)
        if any(v < 0.0 for v in values):
            raise ValueError("energy coefficients must be non-negative")
        if len(self.w_psi) != 5 or any(w < 0.0 for w in self.w_psi):
            raise ValueError("w_psi must be five non-negative weights")
        object.__setattr__(self, "w_psi", tuple(float(w) for w in self.w_psi))

    def step_weights(self) -> np.ndarray:
        """Weights expanded over the 10 egocentric step components."""
        wx, wy_, wz, wphi, weta = self.w_psi
        return np.array([wx, wy_, wz, wphi] + [weta] * 6)


@dataclass(frozen=True)
class OptimizerConfig:
    """First-order optimizer settings."""

    iterations: int = 500
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip: float | None = None
    tolerance: float = 0.0  # relative energy change over 20 iterations; 0 disables
    seed: int = 0  # carried for interface stability; the optimizer is deterministic

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iteration count must be non-negative")
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("moment decays must lie in [0, 1)")
