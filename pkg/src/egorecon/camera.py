"""Pinhole camera: projection, intrinsics, SE(3) projection, initialization.

Extrinsics are camera-to-world throughout: a camera pose maps
camera-frame points into the world.  The camera looks along its own
``+z`` with image x to the right and image y down, so a camera that is
upright in a z-up world has its ``y`` axis pointing toward ``-z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Rotation, Transform

# Camera-frame depth at or below this is "at/behind the camera".
MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.cx < self.width and 0.0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def default_intrinsics(width: int, height: int) -> Intrinsics:
    """Image-center principal point with focal length ``max(width, height)``.

    The focal heuristic gives roughly a 53 degree horizontal field of
    view on 4:3 frames; pass explicit values when calibration is known.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    f = float(max(width, height))
    return Intrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)


def project(points, pose: Transform, intrinsics: Intrinsics):
    """Project world points through a camera-to-world pose.

    Args:
        points: (..., 3) world points.
        pose: camera-to-world transform.
        intrinsics: pinhole intrinsics.

    Returns:
        ``(pixels, valid)`` where pixels is (..., 2) and valid flags
        points with camera-frame depth above :data:`MIN_DEPTH`.  Invalid
        points carry zeros, never NaN.
    """
    points = np.asarray(points, dtype=float)
    cam = pose.inverse().apply(points)
    z = cam[..., 2]
    valid = z > MIN_DEPTH
    safe_z = np.where(valid, z, 1.0)
    u = intrinsics.fx * cam[..., 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * cam[..., 1] / safe_z + intrinsics.cy
    pixels = np.stack([u, v], axis=-1)
    return np.where(valid[..., None], pixels, 0.0), valid


def project_batch(points, cam_rot, cam_pos, intrinsics: Intrinsics):
    """Vectorized projection with per-frame camera poses.

    Args:
        points: (T, N, 3) world points.
        cam_rot: (T, 3, 3) camera-to-world rotations.
        cam_pos: (T, 3) camera positions.

    Returns:
        ``(pixels (T, N, 2), valid (T, N))``.
    """
    points = np.asarray(points, dtype=float)
    rel = points - np.asarray(cam_pos, dtype=float)[:, None, :]
    cam = np.einsum("tji,tnj->tni", np.asarray(cam_rot, dtype=float), rel)
    z = cam[..., 2]
    valid = z > MIN_DEPTH
    safe_z = np.where(valid, z, 1.0)
    u = intrinsics.fx * cam[..., 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * cam[..., 1] / safe_z + intrinsics.cy
    pixels = np.stack([u, v], axis=-1)
    return np.where(valid[..., None], pixels, 0.0), valid


def project_to_se3(matrix) -> Transform:
    """Snap a 4x4 matrix to the nearest rigid transform.

    The rotation block is replaced by ``U @ V^T`` from its SVD with a
    determinant sign fix (nearest rotation in Frobenius norm); the
    translation column is copied through.
    """
    m = np.asarray(matrix, dtype=float)
    if m.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
    u, s, vt = np.linalg.svd(m[:3, :3])
    if s[-1] < 1e-9:
        raise ValueError("rotation block is rank deficient")
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return Transform(Rotation(r, validate=False), m[:3, 3])


def init_extrinsics(global_poses, cam_poses, visibility) -> list[Transform]:
    """Least-squares camera-to-world poses from paired person transforms.

    For each frame the camera satisfies ``P_global = C @ P_cam`` for
    every visible person; the estimate averages ``P_global @ P_cam^-1``
    over visible persons and snaps the mean to SE(3).  Frames with no
    visible person hold the most recent initialized pose; leading empty
    frames copy the first initialized one.

    Args:
        global_poses: per person, a length-T sequence of world-frame
            root transforms.
        cam_poses: per person, a length-T sequence of camera-frame root
            transforms.
        visibility: (N, T) boolean mask.

    Returns:
        A length-T list of camera-to-world transforms.
    """
    visibility = np.asarray(visibility, dtype=bool)
    num_persons, frames = visibility.shape
    if len(global_poses) != num_persons or len(cam_poses) != num_persons:
        raise ValueError("pose lists must match the visibility mask")
    if not visibility.any():
        raise ValueError("camera initialization needs at least one visible person")

    estimates: list[Transform | None] = [None] * frames
    for t in range(frames):
        persons = np.nonzero(visibility[:, t])[0]
        if persons.size == 0:
            continue
        acc = np.zeros((4, 4))
        for i in persons:
            acc += global_poses[i][t].as_matrix() @ cam_poses[i][t].inverse().as_matrix()
        estimates[t] = project_to_se3(acc / persons.size)

    first = next(e for e in estimates if e is not None)
    poses: list[Transform] = []
    last = first
    for e in estimates:
        if e is not None:
            last = e
        poses.append(last)
    return poses


def look_at(position, target, *, up=(0.0, 0.0, 1.0)) -> Transform:
    """Camera-to-world pose looking from ``position`` toward ``target``.

    Columns are ``[right, down, forward]`` so the image y axis points
    against the world up direction (y-down image convention).
    """
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position and target coincide")
    forward = forward / norm
    up = np.asarray(up, dtype=float)
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("viewing direction is parallel to the up vector")
    right = right / rn
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    return Transform(Rotation(rot, validate=False), position)
