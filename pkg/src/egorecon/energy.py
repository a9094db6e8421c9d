"""Scene energy terms and their analytic gradients.

The scene energy couples five terms: 2D reprojection error against
keypoint detections, agreement with camera-frame root observations,
regularization toward anchor trajectories, camera uprightness plus
smoothness, and inter-person capsule penetration.  All terms are
differentiated by hand in reverse mode over plain numpy arrays: the
heading/translation accumulation chains become reversed cumulative
sums, the 6D orthonormalization and quaternion-to-matrix maps get
explicit adjoints, and rotation-residual terms use the closed-form
gradient of squared geodesic distance.

Per-term functions report raw (coefficient-free) values;
:func:`total_energy` applies the lambda weights.  Gradients cover every
free parameter: each person's egocentric step components and the
per-frame camera quaternion and translation.  Camera quaternion
gradients are projected onto the unit-sphere tangent, matching a
forward pass that normalizes before use.

Evaluation can fan out across persons onto worker threads (see
``GLAMR_OPT_THREADS``); partial results are always reduced in person
order, so results are bit-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .body import shaped_radii
from .camera import MIN_DEPTH
from .problem import (
    CameraTrack,
    EnergyCoefficients,
    SceneProblem,
    SceneState,
    worker_count,
)

# Below this angle the geodesic-squared gradient factor switches to its
# series expansion; sin(theta) is clamped near pi where the true
# gradient is unbounded.
_SMALL_ANGLE = 1e-6
_MIN_SIN = 1e-12
_MIN_SEG_DIST = 1e-12


@dataclass(frozen=True)
class EnergyBreakdown:
    """Raw per-term values plus the coefficient-weighted total.

    ``behind_camera`` counts (frame, joint) pairs that were gated out of
    the reprojection term because they projected behind the camera.
    """

    total: float
    e_2d: float
    e_traj: float
    e_reg: float
    e_cam: float
    e_pen: float
    behind_camera: int = 0

    def as_row(self) -> tuple:
        return (self.total, self.e_2d, self.e_traj, self.e_reg, self.e_cam, self.e_pen)


# ---------------------------------------------------------------------------
# Small differentiable building blocks.


def _rotation_angle_scale(q_mats):
    """Angle of relative rotations and the geodesic-squared gradient factor.

    Returns ``(theta, scale)`` with ``scale = theta / sin(theta)``,
    series-expanded below the small-angle cutoff and clamped near pi.
    """
    cos = (np.einsum("...ii->...", q_mats) - 1.0) * 0.5
    sin_vec = np.stack(
        [
            q_mats[..., 2, 1] - q_mats[..., 1, 2],
            q_mats[..., 0, 2] - q_mats[..., 2, 0],
            q_mats[..., 1, 0] - q_mats[..., 0, 1],
        ],
        axis=-1,
    )
    sin = 0.5 * np.linalg.norm(sin_vec, axis=-1)
    theta = np.arctan2(sin, cos)
    small = theta < _SMALL_ANGLE
    scale = np.where(
        small, 1.0 + theta * theta / 6.0, theta / np.maximum(sin, _MIN_SIN)
    )
    return theta, scale


def _gs_forward(eta):
    """Gram-Schmidt of the 6D encoding, total (never raises).

    Near-degenerate inputs are stabilized with a tiny norm floor; the
    regularization term keeps optimization iterates far from that
    regime.
    """
    a = eta[..., 0:3]
    b = eta[..., 3:6]
    na = np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), _MIN_SIN)
    b1 = a / na
    dot = np.sum(b1 * b, axis=-1, keepdims=True)
    u = b - dot * b1
    nu = np.maximum(np.linalg.norm(u, axis=-1, keepdims=True), _MIN_SIN)
    b2 = u / nu
    b3 = np.cross(b1, b2)
    h = np.stack([b1, b2, b3], axis=-1)
    return {"b": b, "na": na, "b1": b1, "dot": dot, "nu": nu, "b2": b2, "h": h}

def _gs_backward(ctx, h_bar):
    """Adjoint of :func:`_gs_forward`: gradient w.r.t. the 6D input."""
    b, na, b1 = ctx["b"], ctx["na"], ctx["b1"]
    dot, nu, b2 = ctx["dot"], ctx["nu"], ctx["b2"]
    g1 = h_bar[..., :, 0]
    g2 = h_bar[..., :, 1]
    g3 = h_bar[..., :, 2]
    # b3 = b1 x b2
    b1_bar = g1 + np.cross(b2, g3)
    b2_bar = g2 + np.cross(g3, b1)
    # b2 = u / |u|
    u_bar = (b2_bar - b2 * np.sum(b2 * b2_bar, axis=-1, keepdims=True)) / nu
    # u = b - (b1.b) b1
    b_bar = u_bar - b1 * np.sum(b1 * u_bar, axis=-1, keepdims=True)
    b1_bar = b1_bar - np.sum(u_bar * b1, axis=-1, keepdims=True) * b - dot * u_bar
    # b1 = a / |a|
    a_bar = (b1_bar - b1 * np.sum(b1 * b1_bar, axis=-1, keepdims=True)) / na
    return np.concatenate([a_bar, b_bar], axis=-1)


def _quat_to_mat_unit(q):
    """Rotation matrices of quaternions normalized inside the map."""
    qn = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = (qn[..., i] for i in range(4))
    m = np.empty(qn.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return qn, m


def _quat_grad(qn, m_bar):
    """Pull a rotation-matrix gradient back to a unit quaternion.

    ``qn`` must be unit; the result includes the normalization chain,
    i.e. it is the tangent-space projection of the polynomial-map
    gradient, which equals the exact derivative of ``R(q/|q|)`` at
    ``|q| = 1``.
    """
    w, x, y, z = (qn[..., i] for i in range(4))
    mb = m_bar
    gw = 2.0 * (
        -z * mb[..., 0, 1] + y * mb[..., 0, 2]
        + z * mb[..., 1, 0] - x * mb[..., 1, 2]
        - y * mb[..., 2, 0] + x * mb[..., 2, 1]
    )
    gx = 2.0 * (
        y * mb[..., 0, 1] + z * mb[..., 0, 2]
        + y * mb[..., 1, 0] - 2.0 * x * mb[..., 1, 1] - w * mb[..., 1, 2]
        + z * mb[..., 2, 0] + w * mb[..., 2, 1] - 2.0 * x * mb[..., 2, 2]
    )
    gy = 2.0 * (
        -2.0 * y * mb[..., 0, 0] + x * mb[..., 0, 1] + w * mb[..., 0, 2]
        + x * mb[..., 1, 0] + z * mb[..., 1, 2]
        - w * mb[..., 2, 0] + z * mb[..., 2, 1] - 2.0 * y * mb[..., 2, 2]
    )
    gz = 2.0 * (
        -2.0 * z * mb[..., 0, 0] - w * mb[..., 0, 1] + x * mb[..., 0, 2]
        + w * mb[..., 1, 0] - 2.0 * z * mb[..., 1, 1] + y * mb[..., 1, 2]
        + x * mb[..., 2, 0] + y * mb[..., 2, 1]
    )
    g = np.stack([gw, gx, gy, gz], axis=-1)
    return g - qn * np.sum(qn * g, axis=-1, keepdims=True)


def _segment_closest_params(p1, q1, p2, q2):
    """Clamped closest-point parameters between segment pairs.

    Broadcasting inputs of shape (..., 3); returns ``(s, t)`` in
    ``[0, 1]`` for the points ``p1 + s (q1 - p1)`` and
    ``p2 + t (q2 - p2)``.
    """
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    a_safe = np.maximum(a, _MIN_SIN)
    e_safe = np.maximum(e, _MIN_SIN)
    denom = a * e - b * b
    s = np.where(
        denom > _MIN_SIN,
        np.clip((b * f - c * e) / np.maximum(denom, _MIN_SIN), 0.0, 1.0),
        0.0,
    )
    t = (b * s + f) / e_safe
    t_clamped = np.clip(t, 0.0, 1.0)
    s = np.where(
        t != t_clamped, np.clip((b * t_clamped - c) / a_safe, 0.0, 1.0), s
    )
    return s, t_clamped


def segment_distance(p1, q1, p2, q2):
    """Minimum distance between segment pairs, broadcasting over (..., 3)."""
    s, t = _segment_closest_params(
        np.asarray(p1, float), np.asarray(q1, float),
        np.asarray(p2, float), np.asarray(q2, float),
    )
    c1 = np.asarray(p1, float) + s[..., None] * (np.asarray(q1, float) - np.asarray(p1, float))
    c2 = np.asarray(p2, float) + t[..., None] * (np.asarray(q2, float) - np.asarray(p2, float))
    return np.linalg.norm(c1 - c2, axis=-1)


# ---------------------------------------------------------------------------
# Forward pass.


class _PersonCtx:
    """Forward intermediates for one person, kept for the backward pass."""

    __slots__ = (
        "track", "start", "end", "m", "phi", "cos", "sin", "gs", "gamma",
        "txy", "tau", "local", "radii", "reach", "x", "xc", "res2d",
        "mask2d", "behind", "e2d_raw", "traj_scale", "traj_theta",
        "vis", "e_traj_raw", "trans_res",
    )


def _accumulate_person(track, dxy, z, dphi, eta, local):
    """Shared forward accumulation: ego columns to world pose arrays."""
    ctx = _PersonCtx()
    ctx.track = track
    ctx.start, ctx.end = track.span
    ctx.m = len(track)
    ctx.phi = np.cumsum(dphi)
    ctx.cos = np.cos(ctx.phi)
    ctx.sin = np.sin(ctx.phi)
    ctx.gs = _gs_forward(eta)
    h = ctx.gs["h"]
    rz = np.zeros((ctx.m, 3, 3))
    rz[:, 0, 0] = ctx.cos
    rz[:, 0, 1] = -ctx.sin
    rz[:, 1, 0] = ctx.sin
    rz[:, 1, 1] = ctx.cos
    rz[:, 2, 2] = 1.0
    ctx.gamma = rz @ h
    txy = np.empty((ctx.m, 2))
    txy[0] = dxy[0]
    if ctx.m > 1:
        c, s = ctx.cos[:-1], ctx.sin[:-1]
        world_d = np.stack(
            [c * dxy[1:, 0] - s * dxy[1:, 1], s * dxy[1:, 0] + c * dxy[1:, 1]],
            axis=-1,
        )
        txy[1:] = dxy[0] + np.cumsum(world_d, axis=0)
    ctx.txy = txy
    ctx.tau = np.concatenate([txy, z[:, None]], axis=1)
    ctx.local = local
    ctx.x = np.einsum("tij,tnj->tni", ctx.gamma, local) + ctx.tau[:, None, :]
    ctx.vis = track.visibility
    return ctx


def _person_forward(problem, state, i, cam_rot, cam_pos, intrinsics, coeffs):
    track = problem.persons[i]
    ctx = _accumulate_person(
        track, state.dxy[i], state.z[i], state.dphi[i], state.eta[i],
        track.local_joints(problem.tree),
    )
    sl = slice(ctx.start, ctx.end + 1)
    r_cam = cam_rot[sl]
    c_cam = cam_pos[sl]

    # reprojection term
    d = ctx.x - c_cam[:, None, :]
    xc = np.einsum("tji,tnj->tni", r_cam, d)
    ctx.xc = xc
    depth = xc[..., 2]
    valid = depth > MIN_DEPTH
    ctx.mask2d = ctx.vis[:, None] & valid
    ctx.behind = int(np.count_nonzero(ctx.vis[:, None] & ~valid))
    safe_z = np.where(valid, depth, 1.0)
    k = intrinsics
    u = k.fx * xc[..., 0] / safe_z + k.cx
    v = k.fy * xc[..., 1] / safe_z + k.cy
    pix = np.stack([u, v], axis=-1)
    res = np.where(ctx.mask2d[..., None], pix - track.keypoints2d, 0.0)
    ctx.res2d = res
    ctx.e2d_raw = float(np.sum(res * res))

    # camera-frame trajectory term
    rel = np.einsum("tji,tjk->tik", ctx.gamma, r_cam) @ track.cam_obs_rot
    theta, scale = _rotation_angle_scale(rel)
    ctx.traj_theta = theta
    ctx.traj_scale = scale
    rot_part = float(np.sum(np.where(ctx.vis, theta * theta, 0.0)))
    trans_part = 0.0
    ctx.trans_res = None
    if coeffs.w_t > 0.0:
        r_res = np.einsum("tji,tj->ti", r_cam, ctx.tau - c_cam) - track.cam_obs_pos
        r_res = np.where(ctx.vis[:, None], r_res, 0.0)
        ctx.trans_res = r_res
        trans_part = float(np.sum(r_res * r_res))
    ctx.e_traj_raw = rot_part + coeffs.w_t * trans_part

    # penetration support data
    ctx.radii = shaped_radii(problem.tree, track.beta)
    ctx.reach = float(
        np.max(np.linalg.norm(ctx.local, axis=-1)) + np.max(ctx.radii)
    )
    return ctx


def _reg_raw(track, dxy, z, dphi, eta, weights):
    """Raw anchor deviation: sum of weighted squared step differences.

    Step-0 planar placement (dx, dy, dphi) is exempt so the free start
    override is never penalized.
    """
    anchor = track.anchor
    d = np.concatenate(
        [
            dxy - anchor.dxy,
            (z - anchor.z)[:, None],
            (dphi - anchor.dphi)[:, None],
            eta - anchor.eta,
        ],
        axis=1,
    )
    # columns: dx, dy, z, dphi, eta[6]
    w = np.empty(10)
    w[0], w[1], w[2], w[3] = weights[0], weights[1], weights[2], weights[3]
    w[4:] = weights[4]
    sq = w * d * d
    return float(np.sum(sq)) - float(sq[0, 0] + sq[0, 1] + sq[0, 3])


def _pen_pairs(problem, ctxs):
    """Frame-overlapping person pairs with their active frame indices."""
    n = len(ctxs)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            a, b = ctxs[i], ctxs[j]
            lo = max(a.start, b.start)
            hi = min(a.end, b.end)
            if lo > hi:
                continue
            ia = np.arange(lo - a.start, hi - a.start + 1)
            ib = np.arange(lo - b.start, hi - b.start + 1)
            root_dist = np.linalg.norm(
                a.tau[ia] - b.tau[ib], axis=1
            )
            active = root_dist < a.reach + b.reach
            if not np.any(active):
                continue
            pairs.append((i, j, ia[active], ib[active]))
    return pairs


def _pen_forward(problem, ctxs, pairs):
    """Penetration energy pieces per active pair, kept for backward."""
    parents = problem.tree.parents[1:]
    out = []
    raw = 0.0
    for i, j, ia, ib in pairs:
        a, b = ctxs[i], ctxs[j]
        p1 = a.x[ia][:, parents, :][:, :, None, :]
        q1 = a.x[ia][:, 1:, :][:, :, None, :]
        p2 = b.x[ib][:, parents, :][:, None, :, :]
        q2 = b.x[ib][:, 1:, :][:, None, :, :]
        s, t = _segment_closest_params(p1, q1, p2, q2)
        c1 = p1 + s[..., None] * (q1 - p1)
        c2 = p2 + t[..., None] * (q2 - p2)
        diff = c1 - c2
        dist = np.linalg.norm(diff, axis=-1)
        rsum = a.radii[ia][:, :, None] + b.radii[ib][:, None, :]
        pen = np.maximum(0.0, rsum - dist)
        raw += float(np.sum(pen * pen))
        out.append((i, j, ia, ib, s, t, diff, dist, pen))
    return raw, out


def _cam_forward(cam_rot, cam_pos, up):
    """Raw camera term: uprightness mean plus pairwise smoothness."""
    t = cam_rot.shape[0]
    upright = float(np.mean(cam_rot[:, :, 1] @ up))
    if t < 2:
        return upright, None, None
    rel = np.einsum("tji,tjk->tik", cam_rot[:-1], cam_rot[1:])
    theta, scale = _rotation_angle_scale(rel)
    dpos = cam_pos[1:] - cam_pos[:-1]
    smooth = float(np.sum(theta * theta) + np.sum(dpos * dpos)) / (t - 1)
    return upright + smooth, theta, scale


# ---------------------------------------------------------------------------
# Public energy terms.  Each evaluates the problem's current parameters
# (or an explicit state) and returns the raw, coefficient-free value.


def _resolve(problem, state):
    return problem.state() if state is None else state


def e_2d(problem: SceneProblem, *, state: SceneState | None = None,
         coeffs: EnergyCoefficients | None = None) -> float:
    """Mean squared reprojection error over visible frames, 1/(N T J)."""
    breakdown = total_energy(problem, coeffs, state=state)
    return breakdown.e_2d


def e_traj(problem: SceneProblem, *, state: SceneState | None = None,
           coeffs: EnergyCoefficients | None = None) -> float:
    """Camera-frame pose disagreement over visible frames, 1/(N T)."""
    breakdown = total_energy(problem, coeffs, state=state)
    return breakdown.e_traj


def e_reg(problem: SceneProblem, *, state: SceneState | None = None,
          coeffs: EnergyCoefficients | None = None) -> float:
    """Weighted squared deviation from the anchor steps, 1/(N T)."""
    breakdown = total_energy(problem, coeffs, state=state)
    return breakdown.e_reg


def e_cam(camera: CameraTrack, up=(0.0, 0.0, 1.0)) -> float:
    """Camera uprightness plus smoothness; lower bound is -1."""
    _, rot = _quat_to_mat_unit(camera.quaternions)
    value, _, _ = _cam_forward(rot, camera.positions, np.asarray(up, float))
    return value


def e_pen(problem: SceneProblem, *, state: SceneState | None = None) -> float:
    """Inter-person capsule penetration, 1/T; zero for single persons."""
    breakdown = total_energy(problem, state=state)
    return breakdown.e_pen


def total_energy(
    problem: SceneProblem,
    coeffs: EnergyCoefficients | None = None,
    *,
    state: SceneState | None = None,
) -> EnergyBreakdown:
    """All five terms of the scene energy at the given state."""
    coeffs = coeffs or EnergyCoefficients()
    state = _resolve(problem, state)
    breakdown, _ = _evaluate(problem, coeffs, state, with_gradient=False)
    return breakdown


def gradient(
    problem: SceneProblem,
    coeffs: EnergyCoefficients | None = None,
    *,
    state: SceneState | None = None,
) -> np.ndarray:
    """Flat gradient of the weighted total over all free parameters."""
    _, grad = energy_and_gradient(problem, coeffs, state=state)
    vec = grad.to_vector()
    finite = np.isfinite(vec)
    if not finite.all():
        bad = int(np.nonzero(~finite)[0][0])
        raise FloatingPointError(f"non-finite gradient at parameter index {bad}")
    return vec


def energy_and_gradient(
    problem: SceneProblem,
    coeffs: EnergyCoefficients | None = None,
    *,
    state: SceneState | None = None,
):
    """Energy breakdown and gradient (as a :class:`SceneState`) together."""
    coeffs = coeffs or EnergyCoefficients()
    state = _resolve(problem, state)
    return _evaluate(problem, coeffs, state, with_gradient=True)


# ---------------------------------------------------------------------------
# Combined evaluation.


def _evaluate(problem, coeffs, state, *, with_gradient):
    n = len(problem.persons)
    t_scene = problem.frames
    intrinsics = problem.camera.intrinsics
    qn, cam_rot = _quat_to_mat_unit(state.cam_quat)
    cam_pos = state.cam_pos
    weights = coeffs.w_psi

    def forward(i):
        return _person_forward(problem, state, i, cam_rot, cam_pos, intrinsics, coeffs)

    workers = worker_count()
    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ctxs = list(pool.map(forward, range(n)))
    else:
        ctxs = [forward(i) for i in range(n)]

    reg_raws = [
        _reg_raw(problem.persons[i], state.dxy[i], state.z[i], state.dphi[i],
                 state.eta[i], weights)
        for i in range(n)
    ]

    pairs = _pen_pairs(problem, ctxs)
    pen_raw, pen_ctx = _pen_forward(problem, ctxs, pairs)

    cam_raw, cam_theta, cam_scale = _cam_forward(cam_rot, cam_pos, problem.up)

    num_joints = ctxs[0].local.shape[1]
    norm_2d = 1.0 / (n * t_scene * num_joints)
    norm_nt = 1.0 / (n * t_scene)
    e2d_val = sum(c.e2d_raw for c in ctxs) * norm_2d
    etraj_val = sum(c.e_traj_raw for c in ctxs) * norm_nt
    ereg_val = sum(reg_raws) * norm_nt
    epen_val = pen_raw / t_scene
    total = (
        coeffs.lambda_2d * e2d_val
        + coeffs.lambda_traj * etraj_val
        + coeffs.lambda_reg * ereg_val
        + coeffs.lambda_cam * cam_raw
        + coeffs.lambda_pen * epen_val
    )
    breakdown = EnergyBreakdown(
        total=total, e_2d=e2d_val, e_traj=etraj_val, e_reg=ereg_val,
        e_cam=cam_raw, e_pen=epen_val,
        behind_camera=sum(c.behind for c in ctxs),
    )
    if not with_gradient:
        return breakdown, None

    grad = state.zeros_like()
    cam_rot_bar = np.zeros_like(cam_rot)
    cam_pos_bar = np.zeros_like(cam_pos)

    # penetration adjoints on world joints, accumulated per person
    x_bars = [np.zeros_like(c.x) for c in ctxs]
    k_pen = coeffs.lambda_pen / t_scene
    parents = problem.tree.parents[1:]
    for i, j, ia, ib, s, t, diff, dist, pen in pen_ctx:
        active = (pen > 0.0) & (dist > _MIN_SEG_DIST)
        if not np.any(active):
            continue
        d_bar = np.where(active, -2.0 * k_pen * pen, 0.0)
        normal = diff / np.maximum(dist, _MIN_SEG_DIST)[..., None]
        c1_bar = d_bar[..., None] * normal
        c2_bar = -c1_bar
        p1_bar = (1.0 - s)[..., None] * c1_bar
        q1_bar = s[..., None] * c1_bar
        p2_bar = (1.0 - t)[..., None] * c2_bar
        q2_bar = t[..., None] * c2_bar
        fa = ia[:, None]
        fb = ib[:, None]
        np.add.at(x_bars[i], (fa, parents[None, :]), p1_bar.sum(axis=2))
        np.add.at(x_bars[i], (fa, np.arange(1, num_joints)[None, :]), q1_bar.sum(axis=2))
        np.add.at(x_bars[j], (fb, parents[None, :]), p2_bar.sum(axis=1))
        np.add.at(x_bars[j], (fb, np.arange(1, num_joints)[None, :]), q2_bar.sum(axis=1))

    def backward(i):
        return _person_backward(
            problem, state, i, ctxs[i], x_bars[i], coeffs, intrinsics,
            cam_rot, n, t_scene, num_joints,
        )

    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(backward, range(n)))
    else:
        results = [backward(i) for i in range(n)]

    for i, (dxy_g, z_g, dphi_g, eta_g, r_bar_slice, c_bar_slice) in enumerate(results):
        grad.dxy[i] += dxy_g
        grad.z[i] += z_g
        grad.dphi[i] += dphi_g
        grad.eta[i] += eta_g
        sl = slice(ctxs[i].start, ctxs[i].end + 1)
        cam_rot_bar[sl] += r_bar_slice
        cam_pos_bar[sl] += c_bar_slice

    # regularization gradient: direct on step components
    k_reg = coeffs.lambda_reg * norm_nt
    w10 = coeffs.step_weights()
    for i, track in enumerate(problem.persons):
        anchor = track.anchor
        grad.dxy[i] += 2.0 * k_reg * w10[0:2] * (state.dxy[i] - anchor.dxy)
        grad.z[i] += 2.0 * k_reg * w10[2] * (state.z[i] - anchor.z)
        grad.dphi[i] += 2.0 * k_reg * w10[3] * (state.dphi[i] - anchor.dphi)
        grad.eta[i] += 2.0 * k_reg * w10[4:] * (state.eta[i] - anchor.eta)
        grad.dxy[i][0] -= 2.0 * k_reg * w10[0:2] * (state.dxy[i][0] - anchor.dxy[0])
        grad.dphi[i][0] -= 2.0 * k_reg * w10[3] * (state.dphi[i][0] - anchor.dphi[0])

    # camera term
    t = cam_rot.shape[0]
    k_cam = coeffs.lambda_cam
    cam_rot_bar[:, :, 1] += (k_cam / t) * problem.up
    if t > 1 and cam_theta is not None:
        g = -(k_cam / (t - 1)) * cam_scale
        cam_rot_bar[:-1] += g[:, None, None] * cam_rot[1:]
        cam_rot_bar[1:] += g[:, None, None] * cam_rot[:-1]
        dpos = cam_pos[1:] - cam_pos[:-1]
        step = (2.0 * k_cam / (t - 1)) * dpos
        cam_pos_bar[1:] += step
        cam_pos_bar[:-1] -= step

    grad.cam_quat += _quat_grad(qn, cam_rot_bar)
    grad.cam_pos += cam_pos_bar
    return breakdown, grad


def _person_backward(problem, state, i, ctx, x_bar, coeffs, intrinsics,
                     cam_rot, n, t_scene, num_joints):
    """Reverse pass for one person's terms plus its camera adjoints."""
    track = ctx.track
    m = ctx.m
    dxy = state.dxy[i]
    sl = slice(ctx.start, ctx.end + 1)
    r_cam = cam_rot[sl]
    c_cam = state.cam_pos[sl]
    x_bar = x_bar.copy()
    r_cam_bar = np.zeros((m, 3, 3))
    c_cam_bar = np.zeros((m, 3))
    gamma_bar = np.zeros((m, 3, 3))
    tau_bar = np.zeros((m, 3))
    phi_bar = np.zeros(m)

    # reprojection
    k2d = coeffs.lambda_2d / (n * t_scene * num_joints)
    res = ctx.res2d
    if k2d > 0.0 and res.any():
        xc = ctx.xc
        depth = np.where(ctx.mask2d, xc[..., 2], 1.0)
        u_bar = 2.0 * k2d * res[..., 0]
        v_bar = 2.0 * k2d * res[..., 1]
        fx, fy = intrinsics.fx, intrinsics.fy
        xc_bar = np.stack(
            [
                u_bar * fx / depth,
                v_bar * fy / depth,
                -(u_bar * fx * xc[..., 0] + v_bar * fy * xc[..., 1]) / (depth * depth),
            ],
            axis=-1,
        )
        xc_bar = np.where(ctx.mask2d[..., None], xc_bar, 0.0)
        d_bar = np.einsum("tij,tnj->tni", r_cam, xc_bar)
        x_bar += d_bar
        c_cam_bar -= d_bar.sum(axis=1)
        d = ctx.x - c_cam[:, None, :]
        r_cam_bar += np.einsum("tna,tnb->tab", d, xc_bar)

    # camera-frame trajectory
    k_traj = coeffs.lambda_traj / (n * t_scene)
    if k_traj > 0.0:
        g = np.where(ctx.vis, -k_traj * ctx.traj_scale, 0.0)
        m_obs = np.einsum("tij,tjk->tik", r_cam, track.cam_obs_rot)
        gamma_bar += g[:, None, None] * m_obs
        r_cam_bar += g[:, None, None] * np.einsum(
            "tij,tkj->tik", ctx.gamma, track.cam_obs_rot
        )
        if coeffs.w_t > 0.0 and ctx.trans_res is not None:
            r_bar = 2.0 * k_traj * coeffs.w_t * ctx.trans_res
            back = np.einsum("tij,tj->ti", r_cam, r_bar)
            tau_bar += back
            c_cam_bar -= back
            r_cam_bar += np.einsum("ta,tb->tab", ctx.tau - c_cam, r_bar)

    # world joints into root pose
    tau_bar += x_bar.sum(axis=1)
    gamma_bar += np.einsum("tni,tnj->tij", x_bar, ctx.local)

    # root rotation into heading + residual rotation
    c, s = ctx.cos, ctx.sin
    h = ctx.gs["h"]
    drz_h = np.empty_like(h)
    drz_h[:, 0, :] = -s[:, None] * h[:, 0, :] - c[:, None] * h[:, 1, :]
    drz_h[:, 1, :] = c[:, None] * h[:, 0, :] - s[:, None] * h[:, 1, :]
    drz_h[:, 2, :] = 0.0
    phi_bar += np.einsum("tij,tij->t", gamma_bar, drz_h)
    rz_t = np.zeros((m, 3, 3))
    rz_t[:, 0, 0] = c
    rz_t[:, 0, 1] = s
    rz_t[:, 1, 0] = -s
    rz_t[:, 1, 1] = c
    rz_t[:, 2, 2] = 1.0
    h_bar = rz_t @ gamma_bar
    eta_g = _gs_backward(ctx.gs, h_bar)

    # translation accumulation: txy_t = txy_{t-1} + R2(phi_{t-1}) dxy_t,
    # so each txy adjoint reaches every earlier step through the suffix sum
    z_g = tau_bar[:, 2].copy()
    suffix = np.cumsum(tau_bar[::-1, :2], axis=0)[::-1]
    dxy_g = np.zeros((m, 2))
    dxy_g[0] = suffix[0]
    if m > 1:
        cp, sp = c[:-1], s[:-1]
        sx, sy = suffix[1:, 0], suffix[1:, 1]
        dxy_g[1:, 0] = cp * sx + sp * sy
        dxy_g[1:, 1] = -sp * sx + cp * sy
        dx, dy = dxy[1:, 0], dxy[1:, 1]
        phi_bar[:-1] += sx * (-sp * dx - cp * dy) + sy * (cp * dx - sp * dy)

    # headings are prefix sums of dphi
    dphi_g = np.cumsum(phi_bar[::-1])[::-1]
    return dxy_g, z_g, dphi_g, eta_g, r_cam_bar, c_cam_bar
