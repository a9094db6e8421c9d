"""Whole-sequence global motion of one person.

Couples a world-frame root trajectory with per-frame joint rotations and
shape coefficients, plus the visibility mask recording which frames were
actually observed.  This is the unit that generators emit, reconstruction
produces, and the evaluation metrics consume.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .body import (
    NUM_BODY_JOINTS,
    NUM_SHAPE_PARAMS,
    KinematicTree,
    default_tree,
    fk_joints,
    fk_markers,
)
from .ego import GlobalTrajectory
from .infill import MotionSequence

__all__ = ["GlobalMotion"]


@dataclass
class GlobalMotion:
    """World-frame motion: root pose, joint rotations, shape, visibility."""

    translations: np.ndarray  # (n, 3) root positions
    rotations: np.ndarray  # (n, 3, 3) root orientations
    theta: np.ndarray  # (n, 23, 3) local joint rotations, axis-angle
    beta: np.ndarray  # (n, 10) shape coefficients
    visibility: np.ndarray | None = None  # (n,) observed-frame mask
    fps: float = 30.0
    start: int = 0

    def __post_init__(self):
        self.translations = np.asarray(self.translations, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        n = self.translations.shape[0] if self.translations.ndim else 0
        if n < 1 or self.translations.shape != (n, 3):
            raise ValueError(f"translations must be (frames, 3), got {self.translations.shape}")
        if self.rotations.shape != (n, 3, 3):
            raise ValueError(f"rotations must be ({n}, 3, 3), got {self.rotations.shape}")
        if self.theta.shape != (n, NUM_BODY_JOINTS, 3):
            raise ValueError(f"theta must be ({n}, {NUM_BODY_JOINTS}, 3), got {self.theta.shape}")
        if self.beta.shape != (n, NUM_SHAPE_PARAMS):
            raise ValueError(f"beta must be ({n}, {NUM_SHAPE_PARAMS}), got {self.beta.shape}")
        if self.visibility is None:
            self.visibility = np.ones(n, dtype=bool)
        else:
            self.visibility = np.asarray(self.visibility, dtype=bool)
            if self.visibility.shape != (n,):
                raise ValueError(f"visibility must be ({n},), got {self.visibility.shape}")
        for name in ("translations", "rotations", "theta", "beta"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} must be finite")
        if not self.fps > 0.0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.start < 0:
            raise ValueError(f"start frame must be non-negative, got {self.start}")

    @property
    def frames(self) -> int:
        return self.translations.shape[0]

    def joints(self, tree: KinematicTree | None = None) -> np.ndarray:
        """World-frame joint positions, shape (frames, 24, 3)."""
        tree = tree if tree is not None else default_tree()
        return fk_joints(tree, self.translations, self.rotations, self.theta, self.beta)

    def markers(self, tree: KinematicTree | None = None) -> np.ndarray:
        """World-frame surface marker positions."""
        tree = tree if tree is not None else default_tree()
        return fk_markers(tree, self.translations, self.rotations, self.theta, self.beta)

    def body_sequence(self) -> MotionSequence:
        """The pose-and-shape part, as the infill machinery consumes it."""
        return MotionSequence(
            self.theta.copy(), self.beta.copy(), self.visibility.copy(), fps=self.fps
        )

    def root_trajectory(self) -> GlobalTrajectory:
        return GlobalTrajectory(self.translations, self.rotations, fps=self.fps)

    def transformed(self, rotation, translation) -> "GlobalMotion":
        """Apply one rigid transform to the whole motion."""
        rot = np.asarray(rotation, dtype=float)
        t = np.asarray(translation, dtype=float)
        return replace(
            self,
            translations=self.translations @ rot.T + t,
            rotations=np.einsum("ij,tjk->tik", rot, self.rotations),
        )

    def with_body(self, body: MotionSequence) -> "GlobalMotion":
        """Swap in reconstructed joint rotations and shapes."""
        if body.frames != self.frames:
            raise ValueError(
                f"body sequence has {body.frames} frames, motion has {self.frames}"
            )
        return replace(
            self, theta=body.theta, beta=body.beta, visibility=body.visibility
        )
