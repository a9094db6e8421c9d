"""Articulated body model: forward kinematics, surface markers, capsules.

A fixed 24-joint skeleton with linear shape blending stands in for a
full statistical body model.  The template (joint names, parent
indices, offsets, a 10-component shape basis and per-bone capsule
radii) ships as a JSON data file; :func:`default_tree` loads it once.

Pose parameters follow the usual articulated-body split: root
translation ``tau``, root rotation ``gamma``, 23 local joint rotations
``theta`` in axis-angle form, and a 10-vector shape ``beta``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .geometry import Rotation, axis_angle_to_mat, wrap_angle

NUM_JOINTS = 24
NUM_BODY_JOINTS = 23  # non-root joints, one local rotation each
NUM_SHAPE_PARAMS = 10
MIN_CAPSULE_RADIUS = 0.005

# Markers sit at these fractions along each bone, pushed out by the
# capsule radius; two markers per bone.
MARKER_FRACTIONS = (0.25, 0.75)


def canonicalize_axis_angle(aa):
    """Reduce axis-angle magnitudes mod 2*pi into ``[0, 2*pi)``."""
    aa = np.asarray(aa, dtype=float)
    angle = np.linalg.norm(aa, axis=-1)
    reduced = np.remainder(angle, 2.0 * np.pi)
    safe = np.where(angle == 0.0, 1.0, angle)
    return aa * (reduced / safe)[..., None]


@dataclass(frozen=True)
class KinematicTree:
    """Skeleton template: topology, offsets, shape basis, capsule radii."""

    joint_names: tuple
    parents: np.ndarray  # (24,) int, -1 for the root
    offsets: np.ndarray  # (24, 3) template offset from parent, meters
    shape_basis: np.ndarray  # (24, 10, 3) offset deltas per unit beta
    capsule_radii: np.ndarray  # (23,) template radius of bone ending at joint j+1
    capsule_shape_rows: np.ndarray  # (23, 10) relative radius change per unit beta

    def __post_init__(self):
        if len(self.joint_names) != NUM_JOINTS:
            raise ValueError(f"expected {NUM_JOINTS} joints, got {len(self.joint_names)}")
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root")
        for j in range(1, NUM_JOINTS):
            if not 0 <= self.parents[j] < j:
                raise ValueError(f"joint {j} parent {self.parents[j]} breaks topological order")
        lengths = np.linalg.norm(self.offsets[1:], axis=1)
        if np.any(lengths <= 0.0):
            raise ValueError("template bone lengths must be strictly positive")
        # worst-case shrink over |beta_k| <= 3 must not collapse a bone
        shrink = 3.0 * np.linalg.norm(self.shape_basis[1:], axis=2).sum(axis=1)
        if np.any(lengths - shrink <= 0.0):
            raise ValueError("shape basis can collapse a bone within |beta| <= 3")

    @classmethod
    def from_dict(cls, doc: dict) -> "KinematicTree":
        version = doc.get("schema_version")
        if version != 1:
            raise ValueError(f"unsupported template schema version: {version!r}")
        tree = cls(
            joint_names=tuple(doc["joint_names"]),
            parents=np.asarray(doc["parents"], dtype=int),
            offsets=np.asarray(doc["offsets"], dtype=float),
            shape_basis=np.asarray(doc["shape_basis"], dtype=float),
            capsule_radii=np.asarray(doc["capsule_radii"], dtype=float),
            capsule_shape_rows=np.asarray(doc["capsule_shape_rows"], dtype=float),
        )
        for arr in (tree.parents, tree.offsets, tree.shape_basis,
                    tree.capsule_radii, tree.capsule_shape_rows):
            arr.setflags(write=False)
        return tree

    @classmethod
    def from_json(cls, path) -> "KinematicTree":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    @property
    def marker_directions(self) -> np.ndarray:
        """Unit displacement direction per bone, fixed in the parent frame.

        Chosen perpendicular to the template bone via the least-aligned
        coordinate axis, so markers rotate rigidly with the bone.
        """
        return _marker_directions(self)


@lru_cache(maxsize=None)
def _marker_directions_cached(tree_id, offsets_bytes):
    offsets = np.frombuffer(offsets_bytes).reshape(NUM_JOINTS, 3)
    dirs = np.empty((NUM_BODY_JOINTS, 3))
    for j in range(1, NUM_JOINTS):
        bone = offsets[j] / np.linalg.norm(offsets[j])
        axis = np.zeros(3)
        axis[np.argmin(np.abs(bone))] = 1.0
        d = np.cross(bone, axis)
        dirs[j - 1] = d / np.linalg.norm(d)
    dirs.setflags(write=False)
    return dirs


def _marker_directions(tree: KinematicTree) -> np.ndarray:
    return _marker_directions_cached(id(tree), tree.offsets.tobytes())


@lru_cache(maxsize=1)
def default_tree() -> KinematicTree:
    """The packaged template skeleton."""
    text = resources.files("egorecon").joinpath("body_template.json").read_text()
    return KinematicTree.from_dict(json.loads(text))


@dataclass(frozen=True)
class BodyPose:
    """23 local joint rotations in axis-angle form, canonicalized at ingestion."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (NUM_BODY_JOINTS, 3):
            raise ValueError(f"theta must be ({NUM_BODY_JOINTS}, 3), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        theta = canonicalize_axis_angle(theta)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def rest(cls) -> "BodyPose":
        return cls(np.zeros((NUM_BODY_JOINTS, 3)))


@dataclass(frozen=True)
class BodyShape:
    """10 shape coefficients."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape != (NUM_SHAPE_PARAMS,):
            raise ValueError(f"beta must be ({NUM_SHAPE_PARAMS},), got {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if np.any(np.abs(beta) > 5.0):
            warnings.warn("shape coefficients outside [-5, 5] are unusual", stacklevel=3)
        beta = beta.copy()
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def mean(cls) -> "BodyShape":
        return cls(np.zeros(NUM_SHAPE_PARAMS))


@dataclass(frozen=True)
class GlobalPose:
    """Full per-frame body state: (tau, gamma, theta, beta)."""

    tau: np.ndarray
    gamma: Rotation
    theta: BodyPose = field(default_factory=BodyPose.rest)
    beta: BodyShape = field(default_factory=BodyShape.mean)

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float).reshape(3)
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class Capsule:
    """A bone capsule: segment from a to b with the given radius."""

    a: np.ndarray
    b: np.ndarray
    radius: float


# ---------------------------------------------------------------------------
# Batched kinematics over leading time axes.  These are the workhorse
# entry points; the scalar operations below wrap them.


def shaped_offsets(tree: KinematicTree, beta) -> np.ndarray:
    """Template offsets blended with shape: ``(..., 24, 3)``."""
    beta = np.asarray(beta, dtype=float)
    return tree.offsets + np.einsum("...k,jkd->...jd", beta, tree.shape_basis)


def shaped_radii(tree: KinematicTree, beta) -> np.ndarray:
    """Capsule radii under shape blending, clamped to the minimum: ``(..., 23)``."""
    beta = np.asarray(beta, dtype=float)
    scale = 1.0 + np.einsum("...k,jk->...j", beta, tree.capsule_shape_rows)
    return np.maximum(tree.capsule_radii * scale, MIN_CAPSULE_RADIUS)


def fk_joints(tree: KinematicTree, tau, rot, theta, beta, *, with_rotations=False):
    """Forward kinematics, broadcast over leading axes.

    Args:
        tau: (..., 3) root translations.
        rot: (..., 3, 3) root rotation matrices.
        theta: (..., 23, 3) local axis-angle rotations.
        beta: (..., 10) shape coefficients.
        with_rotations: also return per-joint global rotations.

    Returns:
        (..., 24, 3) joint positions, and (..., 24, 3, 3) when requested.
    """
    tau = np.asarray(tau, dtype=float)
    rot = np.asarray(rot, dtype=float)
    theta = np.asarray(theta, dtype=float)
    offs = shaped_offsets(tree, beta)

    local = axis_angle_to_mat(theta)  # (..., 23, 3, 3)
    batch = np.broadcast_shapes(
        tau.shape[:-1], rot.shape[:-2], theta.shape[:-2], offs.shape[:-2]
    )
    pos = np.empty(batch + (NUM_JOINTS, 3))
    glob = np.empty(batch + (NUM_JOINTS, 3, 3))
    pos[..., 0, :] = tau
    glob[..., 0, :, :] = rot
    for j in range(1, NUM_JOINTS):
        p = tree.parents[j]
        parent_rot = glob[..., p, :, :]
        pos[..., j, :] = pos[..., p, :] + np.einsum(
            "...ij,...j->...i", parent_rot, offs[..., j, :]
        )
        glob[..., j, :, :] = parent_rot @ local[..., j - 1, :, :]
    if with_rotations:
        return pos, glob
    return pos


def fk_markers(tree: KinematicTree, tau, rot, theta, beta) -> np.ndarray:
    """Surface markers, broadcast over leading axes: ``(..., 46, 3)``.

    Two markers per bone at :data:`MARKER_FRACTIONS`, displaced from the
    bone segment by the capsule radius along a direction rigidly
    attached to the parent frame.
    """
    pos, glob = fk_joints(tree, tau, rot, theta, beta, with_rotations=True)
    radii = shaped_radii(tree, beta)
    child = pos[..., 1:, :]
    parent = pos[..., tree.parents[1:], :]
    disp = np.einsum(
        "...jik,jk->...ji", glob[..., tree.parents[1:], :, :], tree.marker_directions
    )
    out = []
    for f in MARKER_FRACTIONS:
        out.append((1.0 - f) * parent + f * child + radii[..., None] * disp)
    return np.concatenate(out, axis=-2)


def fk_capsules(tree: KinematicTree, tau, rot, theta, beta):
    """Capsule endpoint arrays and radii: ``((..., 23, 3), (..., 23, 3), (..., 23))``."""
    pos = fk_joints(tree, tau, rot, theta, beta)
    return pos[..., tree.parents[1:], :], pos[..., 1:, :], shaped_radii(tree, beta)


# ---------------------------------------------------------------------------
# Scalar operations over GlobalPose.


def joint_positions(q: GlobalPose, tree: KinematicTree) -> np.ndarray:
    """Joint positions of a single pose: ``(24, 3)`` meters."""
    return fk_joints(tree, q.tau, q.gamma.as_matrix(), q.theta.theta, q.beta.beta)


def surface_markers(q: GlobalPose, tree: KinematicTree) -> np.ndarray:
    """Surface marker positions of a single pose: ``(46, 3)`` meters."""
    return fk_markers(tree, q.tau, q.gamma.as_matrix(), q.theta.theta, q.beta.beta)


def bone_capsules(q: GlobalPose, tree: KinematicTree) -> list[Capsule]:
    """One capsule per bone, endpoints at the bone's two joints."""
    a, b, radii = fk_capsules(tree, q.tau, q.gamma.as_matrix(), q.theta.theta, q.beta.beta)
    return [Capsule(a[j], b[j], float(radii[j])) for j in range(NUM_BODY_JOINTS)]
