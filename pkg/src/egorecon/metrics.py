"""Evaluation metrics for reconstructed global motion.

Global position errors are measured inside consecutive time windows, with
the predicted root re-aligned to the reference at each window's first frame
so that early drift does not swamp late-sequence accuracy.  Local pose
accuracy uses similarity-aligned per-frame error, smoothness uses second
differences, and distributional realism uses a Frechet distance over
per-joint velocity statistics.  Multi-person consistency is scored on
relative root poses, which are invariant to any global rigid motion of the
scene.

Position metrics report millimeters, acceleration mm/frame², relative
errors meters and radians.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .body import KinematicTree, default_tree
from .geometry import heading_from_mat, mat_geodesic, rotz
from .motion import GlobalMotion

__all__ = [
    "AlignmentWindowConfig",
    "MetricReport",
    "MetricValue",
    "accel_error",
    "best_of_k_pa_mpjpe",
    "fid",
    "g_mpjpe",
    "g_pve",
    "motion_features",
    "pa_mpjpe",
    "relative_pose_errors",
    "scene_report",
]

MM = 1000.0


@dataclass(frozen=True)
class AlignmentWindowConfig:
    """Windowed alignment policy for global position error.

    ``mode`` selects what the per-window re-alignment may correct: ``full``
    matches the whole root orientation, ``yaw`` only the heading (gravity
    direction stays fixed).  Windows tile the sequence back to back unless a
    shorter ``stride_seconds`` makes them overlap.
    """

    window_seconds: float = 10.0
    mode: str = "full"
    stride_seconds: float | None = None

    def __post_init__(self):
        if not self.window_seconds > 0.0:
            raise ValueError(f"window length must be positive, got {self.window_seconds}")
        if self.mode not in ("full", "yaw"):
            raise ValueError(f"alignment mode must be 'full' or 'yaw', got {self.mode!r}")
        if self.stride_seconds is not None and not self.stride_seconds > 0.0:
            raise ValueError(f"stride must be positive, got {self.stride_seconds}")


def _check_comparable(pred: GlobalMotion, gt: GlobalMotion) -> None:
    if not isinstance(pred, GlobalMotion) or not isinstance(gt, GlobalMotion):
        raise TypeError("expected GlobalMotion inputs")
    if pred.frames != gt.frames:
        raise ValueError(f"length mismatch: {pred.frames} vs {gt.frames} frames")
    if pred.fps != gt.fps:
        raise ValueError(f"fps mismatch: {pred.fps} vs {gt.fps}")


def _window_alignment(pred, gt, frame, mode):
    """Rigid transform taking the predicted root onto the reference root."""
    if mode == "full":
        rot = gt.rotations[frame] @ pred.rotations[frame].T
    else:
        phi_gt, _ = heading_from_mat(gt.rotations[frame])
        phi_pred, _ = heading_from_mat(pred.rotations[frame])
        rot = rotz(float(phi_gt) - float(phi_pred))
    shift = gt.translations[frame] - rot @ pred.translations[frame]
    return rot, shift


def _windowed_error(pred, gt, cfg, pred_points, gt_points):
    width = int(cfg.window_seconds * pred.fps)
    width = max(width, 1)
    stride = width if cfg.stride_seconds is None else max(int(cfg.stride_seconds * pred.fps), 1)
    means = []
    for start in range(0, pred.frames, stride):
        stop = min(start + width, pred.frames)
        rot, shift = _window_alignment(pred, gt, start, cfg.mode)
        aligned = pred_points[start:stop] @ rot.T + shift
        means.append(np.linalg.norm(aligned - gt_points[start:stop], axis=-1).mean())
    return MM * float(np.mean(means))


def g_mpjpe(pred: GlobalMotion, gt: GlobalMotion, cfg=None, *, tree=None) -> float:
    """Window-aligned global joint position error in millimeters."""
    cfg = cfg if cfg is not None else AlignmentWindowConfig()
    _check_comparable(pred, gt)
    tree = tree if tree is not None else default_tree()
    return _windowed_error(pred, gt, cfg, pred.joints(tree), gt.joints(tree))


def g_pve(pred: GlobalMotion, gt: GlobalMotion, cfg=None, *, tree=None) -> float:
    """Window-aligned global surface marker error in millimeters."""
    cfg = cfg if cfg is not None else AlignmentWindowConfig()
    _check_comparable(pred, gt)
    tree = tree if tree is not None else default_tree()
    return _windowed_error(pred, gt, cfg, pred.markers(tree), gt.markers(tree))


def _procrustes_error(pred, gt):
    """Residual after the best similarity transform from pred onto gt, meters."""
    pc = pred - pred.mean(axis=0)
    gc = gt - gt.mean(axis=0)
    u, s, vt = np.linalg.svd(pc.T @ gc)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    signs = np.ones(len(s))
    signs[-1] = d
    rot = vt.T @ np.diag(signs) @ u.T
    denom = (pc * pc).sum()
    scale = (s * signs).sum() / denom if denom > 1e-30 else 1.0
    aligned = scale * pc @ rot.T
    return float(np.linalg.norm(aligned - gc, axis=-1).mean())


def pa_mpjpe(pred_joints, gt_joints) -> float:
    """Similarity-aligned joint position error in millimeters.

    Accepts a single frame (joints, 3) or a batch (frames, joints, 3); a
    batch reports the mean over frames.  Alignment fits rotation, uniform
    scale, and translation per frame.
    """
    pred = np.asarray(pred_joints, dtype=float)
    gt = np.asarray(gt_joints, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        return MM * _procrustes_error(pred, gt)
    return MM * float(np.mean([_procrustes_error(p, g) for p, g in zip(pred, gt)]))


def best_of_k_pa_mpjpe(samples, gt_joints, frame_set=None):
    """Minimum over candidate motions of the mean similarity-aligned error.

    ``frame_set`` restricts scoring to a boolean mask or index array over
    frames; an empty selection returns None rather than a number.
    """
    if len(samples) < 1:
        raise ValueError("need at least one candidate motion")
    gt = np.asarray(gt_joints, dtype=float)
    if frame_set is None:
        idx = np.arange(gt.shape[0])
    else:
        frame_set = np.asarray(frame_set)
        idx = np.flatnonzero(frame_set) if frame_set.dtype == bool else frame_set.astype(int)
    if idx.size == 0:
        return None
    return min(pa_mpjpe(np.asarray(s, dtype=float)[idx], gt[idx]) for s in samples)


def accel_error(pred_joints, gt_joints) -> float:
    """Mean joint acceleration difference in mm/frame²."""
    pred = np.asarray(pred_joints, dtype=float)
    gt = np.asarray(gt_joints, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 3:
        raise ValueError("need at least 3 frames for accelerations")
    ap = pred[2:] - 2.0 * pred[1:-1] + pred[:-2]
    ag = gt[2:] - 2.0 * gt[1:-1] + gt[:-2]
    return MM * float(np.linalg.norm(ap - ag, axis=-1).mean())


def motion_features(clip_joints) -> np.ndarray:
    """Per-joint mean squared velocity of one clip, (m/frame)² per joint."""
    pts = np.asarray(clip_joints, dtype=float)
    if pts.shape[0] < 2:
        raise ValueError("clips need at least 2 frames")
    vel = np.diff(pts, axis=0)
    return (vel * vel).sum(axis=-1).mean(axis=0)


def _sqrt_psd(mat):
    w, v = np.linalg.eigh(mat)
    if w.min() < -1e-6:
        raise FloatingPointError(f"matrix square root failed: eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(set_a, set_b, *, eps=1e-6) -> float:
    """Frechet distance between the velocity-feature statistics of two clip sets."""
    if len(set_a) < 2 or len(set_b) < 2:
        raise ValueError("each clip set needs at least 2 clips")
    fa = np.stack([motion_features(c) for c in set_a])
    fb = np.stack([motion_features(c) for c in set_b])
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    reg = eps * np.eye(fa.shape[1])
    cov_a = np.cov(fa, rowvar=False) + reg
    cov_b = np.cov(fb, rowvar=False) + reg
    root_a = _sqrt_psd(cov_a)
    cross = _sqrt_psd(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def relative_pose_errors(pred_motions, gt_motions):
    """Pairwise relative root errors: (meters, radians), or None if < 2 persons.

    For every unordered pair the second person's root is expressed in the
    first person's root frame, which makes the scores invariant to any
    global rigid transform applied to either scene as a whole.
    """
    if len(pred_motions) != len(gt_motions):
        raise ValueError("prediction and reference must list the same persons")
    n = len(pred_motions)
    if n < 2:
        return None
    for p, g in zip(pred_motions, gt_motions):
        _check_comparable(p, g)
    trans_err = []
    rot_err = []
    for i in range(n):
        for j in range(i + 1, n):
            rel = []
            for motions in (pred_motions, gt_motions):
                ri = motions[i].rotations
                delta = motions[j].translations - motions[i].translations
                rel_t = np.einsum("tji,tj->ti", ri, delta)
                rel_r = np.einsum("tji,tjk->tik", ri, motions[j].rotations)
                rel.append((rel_t, rel_r))
            (pt, pr), (gt_t, gt_r) = rel
            trans_err.append(np.linalg.norm(pt - gt_t, axis=-1))
            rot_err.append(mat_geodesic(pr, gt_r))
    return float(np.concatenate(trans_err).mean()), float(np.concatenate(rot_err).mean())


@dataclass(frozen=True)
class MetricValue:
    value: float
    unit: str
    frame_set: str
    n_frames: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"metric value must be finite, got {self.value}")


class MetricReport:
    """Ordered collection of named metric values with units and frame sets."""

    CSV_HEADER = "metric,value,unit,frame_set,n_frames"

    def __init__(self):
        self.entries: dict[str, MetricValue] = {}

    def add(self, name, value, unit, frame_set="all", n_frames=0):
        if value is None:
            return  # metric absent for this frame set; keep it out, not zero
        self.entries[name] = MetricValue(float(value), unit, frame_set, int(n_frames))

    def __contains__(self, name) -> bool:
        return name in self.entries

    def __getitem__(self, name) -> MetricValue:
        return self.entries[name]

    def to_json(self) -> str:
        payload = {
            name: {
                "value": v.value,
                "unit": v.unit,
                "frame_set": v.frame_set,
                "n_frames": v.n_frames,
            }
            for name, v in self.entries.items()
        }
        return json.dumps(payload, indent=2) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(self.CSV_HEADER + "\n")
        for name, v in self.entries.items():
            out.write(f"{name},{v.value!r},{v.unit},{v.frame_set},{v.n_frames}\n")
        return out.getvalue()


def scene_report(
    pred_motions,
    gt_motions,
    cfg: AlignmentWindowConfig | None = None,
    *,
    tree: KinematicTree | None = None,
) -> MetricReport:
    """Standard per-scene evaluation over all persons.

    Position and smoothness metrics average over persons; similarity-aligned
    error is additionally split by the observed-frame mask of each reference
    motion (frame sets with no frames are omitted).
    """
    cfg = cfg if cfg is not None else AlignmentWindowConfig()
    tree = tree if tree is not None else default_tree()
    if len(pred_motions) != len(gt_motions) or not pred_motions:
        raise ValueError("prediction and reference must list the same persons")
    report = MetricReport()
    n_frames = gt_motions[0].frames
    report.add(
        "g_mpjpe",
        np.mean([g_mpjpe(p, g, cfg, tree=tree) for p, g in zip(pred_motions, gt_motions)]),
        "mm",
        "all",
        n_frames,
    )
    report.add(
        "g_pve",
        np.mean([g_pve(p, g, cfg, tree=tree) for p, g in zip(pred_motions, gt_motions)]),
        "mm",
        "all",
        n_frames,
    )
    sets = {"all": None, "visible": [], "invisible": []}
    pa_by_set = {name: [] for name in sets}
    accel = []
    for p, g in zip(pred_motions, gt_motions):
        _check_comparable(p, g)
        pj, gj = p.joints(tree), g.joints(tree)
        pa_by_set["all"].append(pa_mpjpe(pj, gj))
        vis = g.visibility
        if vis.any():
            pa_by_set["visible"].append(pa_mpjpe(pj[vis], gj[vis]))
        if (~vis).any():
            pa_by_set["invisible"].append(pa_mpjpe(pj[~vis], gj[~vis]))
        if p.frames >= 3:
            accel.append(accel_error(pj, gj))
    for name, values in pa_by_set.items():
        if values:
            count = {
                "all": n_frames,
                "visible": int(sum(g.visibility.sum() for g in gt_motions)),
                "invisible": int(sum((~g.visibility).sum() for g in gt_motions)),
            }[name]
            report.add(f"pa_mpjpe_{name}", np.mean(values), "mm", name, count)
    if accel:
        report.add("accel_error", np.mean(accel), "mm/frame^2", "all", n_frames)
    rel = relative_pose_errors(pred_motions, gt_motions)
    if rel is not None:
        report.add("rel_translation", rel[0], "m", "all", n_frames)
        report.add("rel_rotation", rel[1], "rad", "all", n_frames)
    return report
