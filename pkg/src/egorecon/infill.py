"""Occlusion infilling for body pose sequences.

A :class:`MotionSequence` carries per-frame joint rotations, shape
coefficients, and a visibility mask.  Occluded frames are reconstructed by
sliding a fixed-length window over the sequence: the leading frames of each
window are context (already visible or previously infilled), the trailing
frames are look-ahead, and only the middle block is committed to the output.
The window then advances by the size of that block, so the scheduler walks
the sequence once and commits every occluded frame exactly once.

The infillers themselves are interchangeable callables of signature
``infiller(window, visibility) -> window``.  Two baselines ship here: a
per-joint spherical interpolator and a hold-last-pose fallback.  Learned
models can be registered under a name and used anywhere a baseline is.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .body import NUM_BODY_JOINTS, NUM_SHAPE_PARAMS
from .geometry import axis_angle_to_quat, quat_to_axis_angle

__all__ = [
    "INFILLERS",
    "LastPoseInfiller",
    "LinearInfiller",
    "MotionSequence",
    "SequenceInfiller",
    "WindowConfig",
    "autoregressive_infill",
    "interpolate_shapes",
    "last_pose_infiller",
    "linear_infiller",
    "make_infiller",
    "register_infiller",
    "synthesize_occlusions",
]


@dataclass
class MotionSequence:
    """Per-frame body motion with an occlusion mask.

    ``theta`` holds one axis-angle rotation per non-root joint, ``beta`` the
    per-frame shape coefficients, and ``visibility`` marks frames that were
    actually observed.  Values on occluded frames carry no meaning and may be
    anything finite or not; consumers must only read visible frames.
    """

    theta: np.ndarray
    beta: np.ndarray
    visibility: np.ndarray
    fps: float = 30.0
    allow_fully_occluded: bool = False

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        n = self.theta.shape[0] if self.theta.ndim else 0
        if self.theta.shape != (n, NUM_BODY_JOINTS, 3) or n < 1:
            raise ValueError(
                f"theta must be (frames, {NUM_BODY_JOINTS}, 3), got {self.theta.shape}"
            )
        if self.beta.shape != (n, NUM_SHAPE_PARAMS):
            raise ValueError(
                f"beta must be ({n}, {NUM_SHAPE_PARAMS}), got {self.beta.shape}"
            )
        if self.visibility.shape != (n,):
            raise ValueError(f"visibility must be ({n},), got {self.visibility.shape}")
        if not self.visibility.any() and not self.allow_fully_occluded:
            raise ValueError(
                "sequence has no visible frame; pass allow_fully_occluded=True if intended"
            )
        if not np.isfinite(self.theta[self.visibility]).all():
            raise ValueError("visible frames must have finite joint rotations")
        if not np.isfinite(self.beta[self.visibility]).all():
            raise ValueError("visible frames must have finite shape coefficients")
        if not self.fps > 0.0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def frames(self) -> int:
        return self.theta.shape[0]

    def with_visibility(self, visibility, **flags) -> "MotionSequence":
        return replace(self, visibility=np.asarray(visibility, dtype=bool), **flags)


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-window split: ``h_c`` context + commit block + ``h_l`` look-ahead.

    The commit block ``h_o = h - h_c - h_l`` must hold at least one frame.
    """

    h: int = 50
    h_c: int = 10
    h_l: int = 10

    def __post_init__(self):
        if self.h_c < 0 or self.h_l < 0:
            raise ValueError("context and look-ahead lengths must be non-negative")
        if self.h_o < 1:
            raise ValueError(
                f"window of {self.h} leaves no commit block after "
                f"{self.h_c} context + {self.h_l} look-ahead frames"
            )

    @property
    def h_o(self) -> int:
        return self.h - self.h_c - self.h_l


def _rest_pose(rest_pose) -> np.ndarray:
    if rest_pose is None:
        return np.zeros((NUM_BODY_JOINTS, 3))
    rest = np.asarray(rest_pose, dtype=float)
    if rest.shape != (NUM_BODY_JOINTS, 3):
        raise ValueError(f"rest pose must be ({NUM_BODY_JOINTS}, 3), got {rest.shape}")
    return rest


def _slerp_joints(q0, q1, fractions):
    """Constant-speed geodesic blend of two quaternion sets.

    ``q0``/``q1`` are (joints, 4); returns (len(fractions), joints, 4).
    ``q1`` is sign-aligned to ``q0`` first so the blend takes the short way
    around even when the inputs sit on opposite hemispheres.
    """
    dot = np.sum(q0 * q1, axis=-1)
    q1 = np.where((dot < 0.0)[..., None], -q1, q1)
    ang = np.arccos(np.clip(np.abs(dot), 0.0, 1.0))
    f = np.asarray(fractions, dtype=float)[:, None]
    sin_ang = np.sin(ang)
    near = sin_ang < 1e-9  # nearly parallel: fall back to a straight blend
    safe = np.where(near, 1.0, sin_ang)
    w0 = np.where(near, 1.0 - f, np.sin((1.0 - f) * ang) / safe)
    w1 = np.where(near, f, np.sin(f * ang) / safe)
    out = w0[..., None] * q0 + w1[..., None] * q1
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def linear_infiller(window, visibility, rest_pose=None):
    """Fill occluded frames by per-joint spherical interpolation.

    Interior gaps blend between the nearest visible pose on each side; gaps
    touching a window edge replicate the nearest visible pose.  A window with
    no visible frame at all is filled with ``rest_pose`` (zeros by default).
    """
    window = np.asarray(window, dtype=float)
    vis = np.asarray(visibility, dtype=bool)
    out = window.copy()
    idx = np.flatnonzero(vis)
    if idx.size == 0:
        out[:] = _rest_pose(rest_pose)
        return out
    out[: idx[0]] = window[idx[0]]
    out[idx[-1] + 1 :] = window[idx[-1]]
    quats = axis_angle_to_quat(window)
    for a, b in zip(idx[:-1], idx[1:]):
        if b - a <= 1:
            continue
        fractions = np.arange(1, b - a) / (b - a)
        out[a + 1 : b] = quat_to_axis_angle(_slerp_joints(quats[a], quats[b], fractions))
    return out


def last_pose_infiller(window, visibility, rest_pose=None):
    """Fill occluded frames by holding the most recent visible pose.

    Frames before the first visible one replicate it; a window with no
    visible frame is filled with ``rest_pose`` (zeros by default).
    """
    window = np.asarray(window, dtype=float)
    vis = np.asarray(visibility, dtype=bool)
    idx = np.flatnonzero(vis)
    if idx.size == 0:
        out = window.copy()
        out[:] = _rest_pose(rest_pose)
        return out
    source = np.where(vis, np.arange(len(vis)), -1)
    source = np.maximum.accumulate(source)
    source[source < 0] = idx[0]
    return window[source]


class LinearInfiller:
    """Callable wrapper around :func:`linear_infiller` with a fixed rest pose."""

    def __init__(self, rest_pose=None):
        self.rest_pose = rest_pose

    def __call__(self, window, visibility):
        return linear_infiller(window, visibility, self.rest_pose)


class LastPoseInfiller:
    """Callable wrapper around :func:`last_pose_infiller` with a fixed rest pose."""

    def __init__(self, rest_pose=None):
        self.rest_pose = rest_pose

    def __call__(self, window, visibility):
        return last_pose_infiller(window, visibility, self.rest_pose)


INFILLERS = {
    "linear": LinearInfiller,
    "lastpose": LastPoseInfiller,
}


def register_infiller(name: str, factory) -> None:
    """Register an infiller factory under a CLI-addressable name."""
    INFILLERS[name] = factory


def make_infiller(name: str, **kwargs):
    try:
        factory = INFILLERS[name]
    except KeyError:
        known = ", ".join(sorted(INFILLERS))
        raise ValueError(f"unknown infiller {name!r}; known: {known}") from None
    return factory(**kwargs)


def interpolate_shapes(beta, visibility, rest_shape=None):
    """Linearly interpolate shape coefficients across occluded frames.

    Each coefficient is interpolated independently between its nearest
    visible frames; leading and trailing gaps replicate the nearest visible
    value.  With no visible frame the result is ``rest_shape`` (zeros).
    """
    beta = np.asarray(beta, dtype=float)
    vis = np.asarray(visibility, dtype=bool)
    n = beta.shape[0]
    idx = np.flatnonzero(vis)
    if idx.size == 0:
        rest = np.zeros(beta.shape[1]) if rest_shape is None else np.asarray(rest_shape, dtype=float)
        return np.broadcast_to(rest, beta.shape).copy()
    out = np.empty_like(beta)
    grid = np.arange(n, dtype=float)
    for k in range(beta.shape[1]):
        out[:, k] = np.interp(grid, idx.astype(float), beta[idx, k])
    out[vis] = beta[vis]
    return out


def autoregressive_infill(sequence, infiller, config=None, *, commit_counts=None):
    """Reconstruct every occluded frame with a sliding-window scheduler.

    Windows start at frame 0 and advance by the commit-block size; inside
    each window the first ``h_c`` frames are context (visible or previously
    infilled), the last up-to-``h_l`` are look-ahead, and the middle block is
    committed.  Near the sequence end the look-ahead shrinks first, then the
    window simply ends early; the commit block never drops below one frame.
    Occluded frames inside the first ``h_c`` positions are committed from one
    extra leading window, since the regular walk only ever treats them as
    context.

    The infiller is consulted only for windows whose commit block still
    contains occluded frames, must return exactly one pose per window frame,
    and must leave visible frames untouched.  Originally visible frames are
    carried into the output bit for bit; shape coefficients are interpolated
    over the whole sequence independently of the pose infiller.

    Pass an int array of length ``sequence.frames`` as ``commit_counts`` to
    record how many times each frame was committed (diagnostics; visible
    frames stay at zero).
    """
    cfg = config if config is not None else WindowConfig()
    n = sequence.frames
    theta = sequence.theta.copy()
    filled = sequence.visibility.copy()

    def consult(ws, we, lo, hi):
        pending = ~filled[lo:hi]
        if not pending.any():
            return
        win = theta[ws:we]
        vis = filled[ws:we]
        out = np.asarray(infiller(win.copy(), vis.copy()), dtype=float)
        if out.shape != win.shape:
            raise ValueError(
                f"infiller returned shape {out.shape} for a {we - ws}-frame window"
            )
        if not np.array_equal(out[vis], win[vis]):
            raise ValueError("infiller altered visible frames")
        block = out[lo - ws : hi - ws]
        theta[lo:hi][pending] = block[pending]
        if commit_counts is not None:
            commit_counts[lo:hi][pending] += 1
        filled[lo:hi] = True

    head = min(cfg.h_c, n)
    if not filled[:head].all():
        consult(0, min(cfg.h, n), 0, head)
    for cs in range(cfg.h_c, n, cfg.h_o):
        ws = cs - cfg.h_c
        consult(ws, min(ws + cfg.h, n), cs, min(cs + cfg.h_o, n))

    beta = interpolate_shapes(sequence.beta, sequence.visibility)
    return MotionSequence(theta, beta, np.ones(n, dtype=bool), fps=sequence.fps)


def synthesize_occlusions(length, config=None, seed=0, min_gap=10, max_gap=40):
    """Draw a visibility mask with one contiguous occluded run.

    The run length is uniform on ``{min_gap, ..., max_gap}`` (truncated if
    the sequence is short) and its start is uniform over every position that
    keeps the first ``config.h_c`` frames visible and the run inside the
    sequence.  Deterministic for a given seed.
    """
    cfg = config if config is not None else WindowConfig()
    if min_gap < 1 or max_gap < min_gap:
        raise ValueError(f"invalid gap bounds [{min_gap}, {max_gap}]")
    if length < cfg.h_c + min_gap:
        raise ValueError(
            f"a {length}-frame sequence cannot hold a {min_gap}-frame occlusion "
            f"after {cfg.h_c} protected frames"
        )
    rng = np.random.default_rng(seed)
    gap = int(rng.integers(min_gap, min(max_gap, length - cfg.h_c) + 1))
    start = int(rng.integers(cfg.h_c, length - gap + 1))
    vis = np.ones(length, dtype=bool)
    vis[start : start + gap] = False
    return vis


class SequenceInfiller(TransformerMixin, BaseEstimator):
    """Estimator-style front end for occlusion infilling.

    ``transform`` maps a partially occluded :class:`MotionSequence` to a
    fully visible one using the named infiller and window geometry.
    """

    def __init__(self, method="linear", h=50, h_c=10, h_l=10, rest_pose=None):
        self.method = method
        self.h = h
        self.h_c = h_c
        self.h_l = h_l
        self.rest_pose = rest_pose

    def fit(self, X=None, y=None):
        self.window_ = WindowConfig(h=self.h, h_c=self.h_c, h_l=self.h_l)
        self.infiller_ = make_infiller(self.method, rest_pose=self.rest_pose)
        return self

    def transform(self, X):
        check_is_fitted(self, "infiller_")
        if not isinstance(X, MotionSequence):
            raise TypeError(f"expected a MotionSequence, got {type(X).__name__}")
        return autoregressive_infill(X, self.infiller_, self.window_)
