"""Egocentric trajectory representation and global conversions.

A global root trajectory (per-frame translation and rotation) is
re-expressed as per-frame increments relative to the person's own
heading: heading-frame xy displacement, absolute height, heading
increment, and the heading-free residual rotation in 6D form.  Frame 0
stores the absolute xy position and heading instead of increments, so
the representation is invertible while every later step is invariant to
where the sequence starts and which way it faces.

Conventions:

* Translation deltas are expressed in the heading frame of the
  *previous* frame (odometry style): ``(dx, dy)_t`` rotates by
  ``phi_{t-1}`` when accumulating.
* The residual rotation ``eta_t`` removes the heading of the *same*
  frame: ``gamma_t = R_z(phi_t) @ eta_t``.
* Heading accumulation wraps to ``(-pi, pi]`` at every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Rotation,
    from_heading_mat,
    from_heading_xy,
    heading_sequence,
    mat_from_6d,
    mat_to_6d,
    rotz,
    to_heading_mat,
    to_heading_xy,
    wrap_angle,
)

DEFAULT_FPS = 30.0


@dataclass(frozen=True)
class EgoStep:
    """One frame of the egocentric representation.

    For frame 0, ``dx``/``dy`` hold the absolute xy position and
    ``dphi`` the absolute heading.
    """

    dx: float
    dy: float
    z: float
    dphi: float
    eta: np.ndarray  # 6D rotation encoding, heading-free residual

    def eta_rotation(self) -> Rotation:
        return Rotation.from_6d(self.eta)


@dataclass(frozen=True)
class EgoTrajectory:
    """A sequence of egocentric steps, stored columnwise as arrays."""

    dxy: np.ndarray  # (m, 2)
    z: np.ndarray  # (m,)
    dphi: np.ndarray  # (m,)
    eta: np.ndarray  # (m, 6)
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        dxy = np.asarray(self.dxy, dtype=float)
        z = np.asarray(self.z, dtype=float)
        dphi = np.asarray(self.dphi, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        m = dxy.shape[0]
        if m < 1:
            raise ValueError("trajectory must have at least one frame")
        if dxy.shape != (m, 2) or z.shape != (m,) or dphi.shape != (m,) or eta.shape != (m, 6):
            raise ValueError("inconsistent egocentric column shapes")
        for arr in (dxy, z, dphi, eta):
            if not np.all(np.isfinite(arr)):
                raise ValueError("egocentric steps must be finite")
        if self.fps <= 0.0:
            raise ValueError("fps must be positive")
        for name, arr in (("dxy", dxy), ("z", z), ("dphi", dphi), ("eta", eta)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.dxy.shape[0]

    def step(self, t: int) -> EgoStep:
        return EgoStep(
            dx=float(self.dxy[t, 0]),
            dy=float(self.dxy[t, 1]),
            z=float(self.z[t]),
            dphi=float(self.dphi[t]),
            eta=self.eta[t].copy(),
        )

    @property
    def steps(self) -> list[EgoStep]:
        return [self.step(t) for t in range(len(self))]

    def replace_columns(self, **columns) -> "EgoTrajectory":
        data = {
            "dxy": self.dxy,
            "z": self.z,
            "dphi": self.dphi,
            "eta": self.eta,
            "fps": self.fps,
        }
        data.update(columns)
        return EgoTrajectory(**data)


@dataclass(frozen=True)
class GlobalTrajectory:
    """World-frame root trajectory: translations and rotation matrices."""

    translations: np.ndarray  # (m, 3)
    rotations: np.ndarray  # (m, 3, 3)
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        t = np.asarray(self.translations, dtype=float)
        r = np.asarray(self.rotations, dtype=float)
        m = t.shape[0]
        if m < 1:
            raise ValueError("trajectory must have at least one frame")
        if t.shape != (m, 3) or r.shape != (m, 3, 3):
            raise ValueError("inconsistent trajectory shapes")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise ValueError("trajectory must be finite")
        t = t.copy()
        r = r.copy()
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "translations", t)
        object.__setattr__(self, "rotations", r)

    def __len__(self) -> int:
        return self.translations.shape[0]

    def rotation(self, t: int) -> Rotation:
        return Rotation.from_matrix(self.rotations[t])


def accumulate_heading(dphi) -> np.ndarray:
    """Absolute headings from increments; frame 0 holds the absolute value."""
    return wrap_angle(np.cumsum(np.asarray(dphi, dtype=float)))


def global_to_ego(traj: GlobalTrajectory, fps: float | None = None) -> EgoTrajectory:
    """Convert a world-frame trajectory to egocentric steps.

    Headings come from the root rotations (with the previous-frame
    fallback at degenerate frames); frame 0 keeps absolute xy and
    heading so the conversion is invertible.
    """
    phi = heading_sequence(traj.rotations)
    m = len(traj)
    dxy = np.empty((m, 2))
    dxy[0] = traj.translations[0, :2]
    dphi = np.empty(m)
    dphi[0] = phi[0]
    if m > 1:
        dxy[1:] = to_heading_xy(np.diff(traj.translations[:, :2], axis=0), phi[:-1])
        dphi[1:] = wrap_angle(np.diff(phi))
    eta = mat_to_6d(to_heading_mat(traj.rotations, phi))
    return EgoTrajectory(
        dxy=dxy,
        z=traj.translations[:, 2].copy(),
        dphi=dphi,
        eta=eta,
        fps=traj.fps if fps is None else fps,
    )


def ego_to_global(ego: EgoTrajectory) -> GlobalTrajectory:
    """Accumulate egocentric steps back into a world-frame trajectory."""
    phi = accumulate_heading(ego.dphi)
    m = len(ego)
    txy = np.empty((m, 2))
    txy[0] = ego.dxy[0]
    if m > 1:
        world_d = from_heading_xy(ego.dxy[1:], phi[:-1])
        txy[1:] = ego.dxy[0] + np.cumsum(world_d, axis=0)
    translations = np.concatenate([txy, ego.z[:, None]], axis=1)
    rotations = from_heading_mat(mat_from_6d(ego.eta), phi)
    return GlobalTrajectory(translations=translations, rotations=rotations, fps=ego.fps)


def apply_start_override(ego: EgoTrajectory, x0: float, y0: float, phi0: float) -> EgoTrajectory:
    """Replace the absolute start position and heading stored at step 0."""
    dxy = ego.dxy.copy()
    dxy[0] = (x0, y0)
    dphi = ego.dphi.copy()
    dphi[0] = wrap_angle(phi0)
    return ego.replace_columns(dxy=dxy, dphi=dphi)


def heading_angles(traj: GlobalTrajectory) -> np.ndarray:
    """Per-frame headings of a world trajectory, with sequence fallback."""
    return heading_sequence(traj.rotations)


def straight_line_trajectory(
    start, heading: float, speed: float, height: float, frames: int,
    fps: float = DEFAULT_FPS,
) -> GlobalTrajectory:
    """A constant-velocity walk facing its direction of travel."""
    start = np.asarray(start, dtype=float)
    direction = np.array([-np.sin(heading), np.cos(heading)])
    t = np.arange(frames)[:, None]
    txy = start[None, :] + direction[None, :] * (speed / fps) * t
    translations = np.concatenate([txy, np.full((frames, 1), height)], axis=1)
    rotations = np.broadcast_to(rotz(heading), (frames, 3, 3)).copy()
    return GlobalTrajectory(translations=translations, rotations=rotations, fps=fps)
