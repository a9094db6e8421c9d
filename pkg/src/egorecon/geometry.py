"""Rotation representations, heading extraction and SE(3) transforms.

Conventions used throughout the package:

* World frame is right-handed with z up; the global up direction is
  ``(0, 0, 1)``.
* Quaternions are stored ``(w, x, y, z)`` and kept unit-norm; ``q`` and
  ``-q`` encode the same rotation.
* The heading of a root rotation is the angle ``phi`` in ``(-pi, pi]``
  such that the person's horizontal facing vector is
  ``R_z(phi) @ (0, 1, 0)``.  An identity root rotation faces ``+y``.
* The 6D rotation encoding is the first two columns of the rotation
  matrix, concatenated column by column.

All array functions broadcast over leading axes so sequences of
rotations can be processed without Python loops; the :class:`Rotation`,
:class:`Heading` and :class:`Transform` classes wrap single elements for
ergonomic scalar use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UP = np.array([0.0, 0.0, 1.0])

# Angle below which trig expressions switch to their series expansions.
_SMALL_ANGLE = 1e-8
# Alignment with -z closer than this angle (in rad) counts as degenerate
# for heading extraction.
_HEADING_DEGENERATE = 1e-6


def wrap_angle(angle):
    """Wrap angles to ``(-pi, pi]``; the tie at ``pi`` maps to ``+pi``."""
    return np.pi - np.remainder(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


# ---------------------------------------------------------------------------
# Quaternions (w, x, y, z), vectorized over leading axes.


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < _SMALL_ANGLE):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / norm


def quat_canonical(q):
    """Flip signs so ``w >= 0``; exact zeros tie-break on the first nonzero.

    Canonical signs make serialized quaternions byte-comparable.
    """
    q = np.asarray(q, dtype=float)
    key = np.where(q[..., 0:1] != 0.0, np.sign(q[..., 0:1]), 0.0)
    for i in (1, 2, 3):
        key = np.where(key == 0.0, np.sign(q[..., i : i + 1]), key)
    key = np.where(key == 0.0, 1.0, key)
    return q * key


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_mat(q):
    """Rotation matrix of a unit quaternion, shape ``(..., 3, 3)``."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=float)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def mat_to_quat(m):
    """Unit quaternion of a rotation matrix (Shepperd's method).

    Picks the numerically largest of the four candidate pivots per
    element, so the conversion is stable for all rotations.
    """
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    flat = m.reshape((-1, 3, 3))
    n = flat.shape[0]
    q = np.empty((n, 4), dtype=float)

    t = np.einsum("nii->n", flat)
    d = np.stack([t, flat[:, 0, 0], flat[:, 1, 1], flat[:, 2, 2]], axis=1)
    case = np.argmax(d, axis=1)

    idx = case == 0
    if np.any(idx):
        s = np.sqrt(t[idx] + 1.0) * 2.0
        q[idx, 0] = 0.25 * s
        q[idx, 1] = (flat[idx, 2, 1] - flat[idx, 1, 2]) / s
        q[idx, 2] = (flat[idx, 0, 2] - flat[idx, 2, 0]) / s
        q[idx, 3] = (flat[idx, 1, 0] - flat[idx, 0, 1]) / s
    idx = case == 1
    if np.any(idx):
        s = np.sqrt(1.0 + flat[idx, 0, 0] - flat[idx, 1, 1] - flat[idx, 2, 2]) * 2.0
        q[idx, 0] = (flat[idx, 2, 1] - flat[idx, 1, 2]) / s
        q[idx, 1] = 0.25 * s
        q[idx, 2] = (flat[idx, 0, 1] + flat[idx, 1, 0]) / s
        q[idx, 3] = (flat[idx, 0, 2] + flat[idx, 2, 0]) / s
    idx = case == 2
    if np.any(idx):
        s = np.sqrt(1.0 + flat[idx, 1, 1] - flat[idx, 0, 0] - flat[idx, 2, 2]) * 2.0
        q[idx, 0] = (flat[idx, 0, 2] - flat[idx, 2, 0]) / s
        q[idx, 1] = (flat[idx, 0, 1] + flat[idx, 1, 0]) / s
        q[idx, 2] = 0.25 * s
        q[idx, 3] = (flat[idx, 1, 2] + flat[idx, 2, 1]) / s
    idx = case == 3
    if np.any(idx):
        s = np.sqrt(1.0 + flat[idx, 2, 2] - flat[idx, 0, 0] - flat[idx, 1, 1]) * 2.0
        q[idx, 0] = (flat[idx, 1, 0] - flat[idx, 0, 1]) / s
        q[idx, 1] = (flat[idx, 0, 2] + flat[idx, 2, 0]) / s
        q[idx, 2] = (flat[idx, 1, 2] + flat[idx, 2, 1]) / s
        q[idx, 3] = 0.25 * s

    return quat_canonical(quat_normalize(q)).reshape(batch + (4,))


def quat_geodesic(a, b):
    """Geodesic angle between two unit quaternions, in ``[0, pi]``."""
    rel = quat_mul(quat_conj(np.asarray(a, dtype=float)), np.asarray(b, dtype=float))
    vec = np.linalg.norm(rel[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vec, np.abs(rel[..., 0]))


# ---------------------------------------------------------------------------
# Axis-angle.


def axis_angle_to_mat(aa):
    """Rodrigues' formula, safe at zero angle, shape ``(..., 3, 3)``."""
    aa = np.asarray(aa, dtype=float)
    angle = np.linalg.norm(aa, axis=-1)
    small = angle < _SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    axis = aa / safe[..., None]
    x, y, z = (axis[..., i] for i in range(3))
    c = np.cos(angle)
    s = np.sin(angle)
    one_c = 1.0 - c
    m = np.empty(aa.shape[:-1] + (3, 3), dtype=float)
    m[..., 0, 0] = c + x * x * one_c
    m[..., 0, 1] = x * y * one_c - z * s
    m[..., 0, 2] = x * z * one_c + y * s
    m[..., 1, 0] = y * x * one_c + z * s
    m[..., 1, 1] = c + y * y * one_c
    m[..., 1, 2] = y * z * one_c - x * s
    m[..., 2, 0] = z * x * one_c - y * s
    m[..., 2, 1] = z * y * one_c + x * s
    m[..., 2, 2] = c + z * z * one_c
    identity = np.broadcast_to(np.eye(3), m.shape)
    return np.where(small[..., None, None], identity, m)


def axis_angle_to_quat(aa):
    aa = np.asarray(aa, dtype=float)
    angle = np.linalg.norm(aa, axis=-1)
    half = 0.5 * angle
    small = angle < _SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    # sin(x/2)/x -> 1/2 as x -> 0
    k = np.where(small, 0.5, np.sin(half) / safe)
    q = np.empty(aa.shape[:-1] + (4,), dtype=float)
    q[..., 0] = np.cos(half)
    q[..., 1:] = aa * k[..., None]
    return q


def quat_to_axis_angle(q):
    q = quat_canonical(np.asarray(q, dtype=float))
    vec = np.linalg.norm(q[..., 1:], axis=-1)
    angle = 2.0 * np.arctan2(vec, q[..., 0])
    small = vec < _SMALL_ANGLE
    safe = np.where(small, 1.0, vec)
    scale = np.where(small, 2.0, angle / safe)
    return q[..., 1:] * scale[..., None]


def mat_geodesic(a, b):
    """Angle of ``a^T @ b`` in ``[0, pi]``, vectorized."""
    rel = np.swapaxes(np.asarray(a, dtype=float), -1, -2) @ np.asarray(b, dtype=float)
    return mat_angle(rel)


def mat_angle(m):
    """Rotation angle of a rotation matrix, in ``[0, pi]``.

    Computed as ``atan2(|sin|, cos)`` from the skew part and the trace,
    which stays accurate near both 0 and pi where plain arccos of the
    trace loses half the significant digits.
    """
    m = np.asarray(m, dtype=float)
    cos = (np.einsum("...ii->...", m) - 1.0) * 0.5
    sin_vec = np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )
    sin = 0.5 * np.linalg.norm(sin_vec, axis=-1)
    return np.arctan2(sin, cos)


# ---------------------------------------------------------------------------
# 6D encoding (first two matrix columns).


def mat_to_6d(m):
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def mat_from_6d(d6):
    """Orthonormalize two 3-vectors into a rotation (Gram-Schmidt).

    Raises ``ValueError`` when either column is near zero or the two
    columns are (anti)parallel, because the encoding is then ambiguous.
    """
    d6 = np.asarray(d6, dtype=float)
    a = d6[..., 0:3]
    b = d6[..., 3:6]
    na = np.linalg.norm(a, axis=-1)
    if np.any(na < _SMALL_ANGLE):
        raise ValueError("6D rotation encoding has near-zero first column")
    b1 = a / na[..., None]
    u = b - np.sum(b1 * b, axis=-1, keepdims=True) * b1
    nu = np.linalg.norm(u, axis=-1)
    if np.any(nu < _SMALL_ANGLE):
        raise ValueError("6D rotation encoding has parallel or near-zero columns")
    b2 = u / nu[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


# ---------------------------------------------------------------------------
# Yaw rotations and heading frames.


def rotz(phi):
    phi = np.asarray(phi, dtype=float)
    c = np.cos(phi)
    s = np.sin(phi)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    return np.stack(
        [
            np.stack([c, -s, zero], axis=-1),
            np.stack([s, c, zero], axis=-1),
            np.stack([zero, zero, one], axis=-1),
        ],
        axis=-2,
    )


def rotate_xy(phi, v):
    """Apply the yaw ``R_z(phi)`` to 2-vectors ``v``, shape ``(..., 2)``."""
    phi = np.asarray(phi, dtype=float)
    v = np.asarray(v, dtype=float)
    c = np.cos(phi)
    s = np.sin(phi)
    x = c * v[..., 0] - s * v[..., 1]
    y = s * v[..., 0] + c * v[..., 1]
    return np.stack([x, y], axis=-1)


def alignment_to_up(rz):
    """Minimal rotation taking unit vectors ``rz`` onto world ``+z``.

    Uses the branch-free form ``I + [w]x + [w]x^2 / (1 + rz.z)`` with
    ``w = rz x z``.  Callers must handle the antiparallel case; entries
    where ``rz.z <= -1 + tol`` are returned as identity with a mask.

    Returns ``(matrices, degenerate_mask)``.
    """
    rz = np.asarray(rz, dtype=float)
    w = np.cross(rz, UP)
    cos = rz[..., 2]
    # antiparallel within _HEADING_DEGENERATE radians of pi
    degenerate = cos <= -np.cos(_HEADING_DEGENERATE)
    denom = np.where(degenerate, 1.0, 1.0 + cos)
    wx = skew(w)
    m = np.eye(3) + wx + (wx @ wx) / denom[..., None, None]
    identity = np.broadcast_to(np.eye(3), m.shape)
    return np.where(degenerate[..., None, None], identity, m), degenerate


def skew(v):
    v = np.asarray(v, dtype=float)
    zero = np.zeros_like(v[..., 0])
    return np.stack(
        [
            np.stack([zero, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], zero, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], zero], axis=-1),
        ],
        axis=-2,
    )


def heading_from_mat(m):
    """Heading angles of root rotation matrices.

    The root z axis is carried onto world ``+z`` by the minimal
    rotation; the heading is read off the resulting y axis.  Returns
    ``(phi, degenerate_mask)`` where degenerate entries (root z
    antiparallel to world z) carry ``phi = 0``.
    """
    m = np.asarray(m, dtype=float)
    align, degenerate = alignment_to_up(m[..., :, 2])
    h = np.einsum("...ij,...j->...i", align, m[..., :, 1])
    # h = R_z(phi) @ (0, 1, 0) = (-sin phi, cos phi, 0)
    phi = np.arctan2(-h[..., 0], h[..., 1])
    return np.where(degenerate, 0.0, phi), degenerate


def heading_sequence(mats):
    """Per-frame headings with the sequence fallback for degenerate frames.

    A degenerate frame reuses the previous frame's heading; a degenerate
    first frame gets ``phi = 0``.
    """
    phi, degenerate = heading_from_mat(mats)
    phi = np.atleast_1d(phi)
    degenerate = np.atleast_1d(degenerate)
    if degenerate.any():
        phi = phi.copy()
        for t in np.nonzero(degenerate)[0]:
            phi[t] = phi[t - 1] if t > 0 else 0.0
    return phi


def to_heading_xy(v, phi):
    """Express 2-vectors in the heading frame ``phi`` (rotate by ``-phi``)."""
    return rotate_xy(-np.asarray(phi, dtype=float), v)


def from_heading_xy(v, phi):
    return rotate_xy(np.asarray(phi, dtype=float), v)


def to_heading_mat(m, phi):
    """Remove heading ``phi`` from rotations: ``R_z(-phi) @ m``."""
    return rotz(-np.asarray(phi, dtype=float)) @ np.asarray(m, dtype=float)


def from_heading_mat(m, phi):
    return rotz(np.asarray(phi, dtype=float)) @ np.asarray(m, dtype=float)


# ---------------------------------------------------------------------------
# Scalar wrapper classes.


class Rotation:
    """A single 3D rotation, canonically stored as a 3x3 matrix.

    Construct via the ``from_*`` classmethods or :meth:`identity`; all
    representation conversions round-trip to well below 1e-9 geodesic.
    """

    __slots__ = ("_m",)

    def __init__(self, matrix, *, validate: bool = True):
        m = np.array(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        if validate:
            if not np.allclose(m @ m.T, np.eye(3), atol=1e-8):
                raise ValueError("matrix is not orthonormal")
            if np.linalg.det(m) < 0.0:
                raise ValueError("matrix has negative determinant")
        m.setflags(write=False)
        self._m = m

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3), validate=False)

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        return cls(m)

    @classmethod
    def from_quat(cls, q) -> "Rotation":
        return cls(quat_to_mat(quat_normalize(q)), validate=False)

    @classmethod
    def from_axis_angle(cls, aa) -> "Rotation":
        return cls(axis_angle_to_mat(aa), validate=False)

    @classmethod
    def from_6d(cls, d6) -> "Rotation":
        return cls(mat_from_6d(d6), validate=False)

    @classmethod
    def about_z(cls, phi: float) -> "Rotation":
        return cls(rotz(phi), validate=False)

    def as_matrix(self) -> np.ndarray:
        return self._m

    def as_quat(self) -> np.ndarray:
        return mat_to_quat(self._m)

    def as_axis_angle(self) -> np.ndarray:
        return quat_to_axis_angle(self.as_quat())

    def as_6d(self) -> np.ndarray:
        return mat_to_6d(self._m)

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(self._m @ other._m, validate=False)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def inverse(self) -> "Rotation":
        return Rotation(self._m.T, validate=False)

    def apply(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self._m.T

    def geodesic_to(self, other: "Rotation") -> float:
        return float(mat_geodesic(self._m, other._m))

    def __repr__(self) -> str:
        w, x, y, z = self.as_quat()
        return f"Rotation(quat=[{w:.6f}, {x:.6f}, {y:.6f}, {z:.6f}])"


@dataclass(frozen=True)
class Heading:
    """A horizontal facing direction; ``vector = R_z(phi) @ (0, 1, 0)``."""

    phi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", float(wrap_angle(self.phi)))

    @property
    def vector(self) -> np.ndarray:
        return np.array([-np.sin(self.phi), np.cos(self.phi), 0.0])


@dataclass(frozen=True)
class Transform:
    """An SE(3) element: ``x -> rotation @ x + translation``."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Transform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {m.shape}")
        return cls(Rotation(m[:3, :3]), m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Transform") -> "Transform":
        return Transform(
            self.rotation @ other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    def __matmul__(self, other: "Transform") -> "Transform":
        return self.compose(other)

    def inverse(self) -> "Transform":
        inv = self.rotation.inverse()
        return Transform(inv, -inv.apply(self.translation))

    def apply(self, points) -> np.ndarray:
        return self.rotation.apply(points) + self.translation


# ---------------------------------------------------------------------------
# Scalar heading API.


def heading_of(rot: Rotation) -> Heading:
    """Heading of a root rotation; degenerate (upside-down) roots give 0."""
    phi, _ = heading_from_mat(rot.as_matrix())
    return Heading(float(phi))


def to_heading(value, heading: Heading):
    """Express a 3-vector or :class:`Rotation` in the heading frame."""
    if isinstance(value, Rotation):
        return Rotation(to_heading_mat(value.as_matrix(), heading.phi), validate=False)
    return to_heading_xyz(value, heading.phi)


def from_heading(value, heading: Heading):
    """Inverse of :func:`to_heading`."""
    if isinstance(value, Rotation):
        return Rotation(from_heading_mat(value.as_matrix(), heading.phi), validate=False)
    v = np.asarray(value, dtype=float)
    out = v.copy()
    out[..., :2] = from_heading_xy(v[..., :2], heading.phi)
    return out


def to_heading_xyz(v, phi):
    v = np.asarray(v, dtype=float)
    out = v.copy()
    out[..., :2] = to_heading_xy(v[..., :2], phi)
    return out


def geodesic(r1: Rotation, r2: Rotation) -> float:
    """Angle of ``r1^-1 @ r2`` in ``[0, pi]``."""
    return r1.geodesic_to(r2)


def rot_to_6d(rot: Rotation) -> np.ndarray:
    return rot.as_6d()


def rot_from_6d(d6) -> Rotation:
    return Rotation.from_6d(d6)
