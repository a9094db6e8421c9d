"""Tests for synthetic scene generation."""

import dataclasses

import numpy as np
import pytest

from egorecon.benchmark import (
    AnchorNoiseConfig,
    NoiseConfig,
    SceneConfig,
    camera_track,
    generate_motion,
    generate_scene,
    initialize_camera,
    make_anchors,
    observe,
    oscillating_window_visibility,
    scene_motions,
)
from egorecon.body import default_tree
from egorecon.camera import project_batch
from egorecon.ego import ego_to_global, global_to_ego
from egorecon.geometry import mat_geodesic, quat_to_mat, rotz, wrap_angle
from egorecon.infill import MotionSequence, autoregressive_infill, linear_infiller


def test_circle_walker_heading_rate_is_exact():
    # radius 2 m at 1.2 m/s and 30 fps turns 0.02 rad per frame
    motion = generate_motion("circle", 150, 30.0, seed=7)
    ego = global_to_ego(motion.root_trajectory())
    assert np.abs(ego.dphi[1:] - 0.02).max() < 1e-12
    steps = np.linalg.norm(np.diff(motion.translations[:, :2], axis=0), axis=-1)
    chord = 2.0 * 2.0 * np.sin(0.02 / 2.0)  # chord of a 0.02 rad arc, radius 2
    assert np.abs(steps - chord).max() < 1e-12


def test_straight_walker_travels_at_constant_speed():
    motion = generate_motion("straight", 90, 30.0, seed=1, heading0=0.7)
    direction = np.array([np.cos(0.7), np.sin(0.7)])
    steps = np.diff(motion.translations[:, :2], axis=0)
    assert np.abs(steps - direction * 1.2 / 30.0).max() < 1e-12
    assert np.abs(motion.rotations - rotz(0.7)).max() < 1e-12


def test_stand_walker_stays_put_with_idle_sway():
    motion = generate_motion("stand", 120, 30.0, seed=3, start=(1.0, -2.0))
    assert np.abs(motion.translations[:, :2] - [1.0, -2.0]).max() < 1e-12
    assert np.ptp(motion.translations[:, 2]) < 0.02
    sway = np.ptp(motion.theta, axis=0).max()  # temporal variation only
    assert 0.0 < sway < 0.06
    walking = np.ptp(generate_motion("circle", 120, 30.0, 3).theta, axis=0).max()
    assert sway < 0.2 * walking


def test_figure_eight_heading_is_tangent_to_path():
    motion = generate_motion("figure-eight", 300, 30.0, seed=5, heading0=0.3)
    xy = motion.translations[:, :2]
    central = xy[2:] - xy[:-2]
    tangent = np.arctan2(central[:, 1], central[:, 0])
    phi = np.arctan2(motion.rotations[:, 1, 0], motion.rotations[:, 0, 0])
    err = wrap_angle(tangent - phi[1:-1])
    assert np.abs(err).max() < 0.01


def test_walker_gait_locks_to_travel():
    # same pattern, same seed, doubled speed: pose at distance d must match
    slow = generate_motion("straight", 200, 30.0, seed=9, speed=0.6)
    fast = generate_motion("straight", 100, 30.0, seed=9, speed=1.2)
    # frame 2k of slow covers the same distance as frame k of fast
    assert np.allclose(slow.theta[::2], fast.theta, atol=1e-12)


def test_generate_motion_deterministic_and_validates():
    a = generate_motion("circle", 60, 30.0, seed=4)
    b = generate_motion("circle", 60, 30.0, seed=4)
    assert np.array_equal(a.theta, b.theta)
    assert np.array_equal(a.translations, b.translations)
    with pytest.raises(ValueError, match="unknown motion pattern"):
        generate_motion("moonwalk", 60, 30.0, seed=4)


def test_scene_config_validation():
    with pytest.raises(ValueError, match="unknown motion pattern"):
        SceneConfig(pattern="hover")
    with pytest.raises(ValueError, match="unknown camera pattern"):
        SceneConfig(camera="drone")
    with pytest.raises(ValueError, match="at least one person"):
        SceneConfig(persons=0)
    with pytest.raises(ValueError, match="inside the virtual image"):
        SceneConfig(amplitude_px=400.0, window_width=300)
    with pytest.raises(ValueError, match="patterns for"):
        SceneConfig(persons=2, pattern=("circle",)).patterns
    cfg = SceneConfig(persons=3, pattern="stand")
    assert cfg.patterns == ("stand",) * 3
    assert cfg.intrinsics.width == 1000


def test_visibility_matches_brute_force_oracle():
    cfg = SceneConfig(persons=2, pattern=("circle", "figure-eight"), frames=150,
                      camera="lateral-track", seed=13)
    scene = generate_scene(cfg)
    vis = oscillating_window_visibility(scene.gt_motions, scene.gt_camera, cfg)
    tree = default_tree()
    cam_rot = quat_to_mat(scene.gt_camera.quaternions)
    for i, motion in enumerate(scene.gt_motions):
        pixels, valid = project_batch(
            motion.joints(tree), cam_rot, scene.gt_camera.positions, cfg.intrinsics
        )
        for f in range(cfg.frames):
            idx = [j for j in range(24) if valid[f, j]]
            if not idx:
                assert not vis[i, f]
                continue
            xs = [pixels[f, j, 0] for j in idx]
            ys = [pixels[f, j, 1] for j in idx]
            wx = (min(xs) + max(xs)) / 2.0 + 200.0 * np.sin(2.0 * np.pi * f / 144.0)
            wy = (min(ys) + max(ys)) / 2.0
            inside = sum(
                1
                for j in idx
                if abs(pixels[f, j, 0] - wx) <= 150.0 and abs(pixels[f, j, 1] - wy) <= 300.0
            )
            assert vis[i, f] == (inside >= 12)
        assert np.array_equal(vis[i], scene.persons[i].visibility)


def test_visibility_periodic_for_static_geometry():
    cfg = SceneConfig(persons=1, pattern="stand", frames=400, camera="static", seed=0)
    scene = generate_scene(cfg)
    v = scene.persons[0].visibility
    period = int(round(cfg.period_s * cfg.fps))
    assert period == 144
    assert np.array_equal(v[: 400 - period], v[period:])
    assert v[:10].all()  # crop starts centered on the person
    assert not v.all()  # the sweep does occlude


def test_visibility_zero_amplitude_keeps_person_in_window():
    cfg = SceneConfig(persons=1, pattern="stand", frames=144, camera="static",
                      amplitude_px=0.0, seed=2)
    scene = generate_scene(cfg)
    assert scene.persons[0].visibility.all()


def test_visibility_is_pure_geometry():
    cfg = SceneConfig(persons=1, pattern="circle", frames=120, camera="static", seed=21)
    scene = generate_scene(cfg)
    once = oscillating_window_visibility(scene.gt_motions, scene.gt_camera, cfg)
    twice = oscillating_window_visibility(scene.gt_motions, scene.gt_camera, cfg)
    assert np.array_equal(once, twice)
    assert np.array_equal(once[0], scene.persons[0].visibility)


def test_default_crop_occludes_roughly_half():
    cfg = SceneConfig(persons=2, pattern="circle", frames=600, camera="lateral-track", seed=3)
    scene = generate_scene(cfg)
    for person in scene.persons:
        occluded = 1.0 - person.visibility.mean()
        assert 0.35 <= occluded <= 0.55


def test_observe_noiseless_is_exact():
    cfg = SceneConfig(persons=1, pattern="circle", frames=120, camera="static", seed=5)
    scene = generate_scene(cfg)
    obs = scene.persons[0]
    motion = scene.gt_motions[0]
    cam_rot = quat_to_mat(scene.gt_camera.quaternions)
    pixels, _ = project_batch(
        motion.joints(), cam_rot, scene.gt_camera.positions, cfg.intrinsics
    )
    vis = obs.visibility
    assert np.array_equal(obs.keypoints2d[vis], pixels[vis])
    expect_rot = np.einsum("tji,tjk->tik", cam_rot, motion.rotations)
    assert np.abs(obs.cam_rot[vis] - expect_rot[vis]).max() < 1e-12
    delta = motion.translations - scene.gt_camera.positions
    expect_pos = np.einsum("tji,tj->ti", cam_rot, delta)
    assert np.abs(obs.cam_pos[vis] - expect_pos[vis]).max() < 1e-12
    assert np.array_equal(obs.theta[vis], motion.theta[vis])
    assert np.array_equal(obs.beta[vis], motion.beta[vis])


def test_observe_hides_occluded_frames_entirely():
    cfg = SceneConfig(persons=1, pattern="circle", frames=200, camera="static", seed=5,
                      noise=NoiseConfig(keypoint_px=2.0, rot_rad=0.01, trans_m=0.01))
    scene = generate_scene(cfg)
    obs = scene.persons[0]
    hidden = ~obs.visibility
    assert hidden.any()
    for arr in (obs.theta, obs.beta, obs.cam_rot, obs.cam_pos, obs.keypoints2d):
        assert np.isnan(arr[hidden]).all()
        assert np.isfinite(arr[obs.visibility]).all()
    assert (obs.keypoint_conf[hidden] == 0.0).all()
    assert (obs.keypoint_conf[obs.visibility] == 1.0).all()


def test_observe_noise_magnitude_matches_sigma():
    # mean 2D residual of isotropic pixel noise is sigma * sqrt(pi / 2)
    sigma = 2.0
    cfg = SceneConfig(persons=1, pattern="circle", frames=1200, camera="static", seed=17,
                      noise=NoiseConfig(keypoint_px=sigma))
    scene = generate_scene(cfg)
    obs = scene.persons[0]
    motion = scene.gt_motions[0]
    cam_rot = quat_to_mat(scene.gt_camera.quaternions)
    pixels, _ = project_batch(
        motion.joints(), cam_rot, scene.gt_camera.positions, cfg.intrinsics
    )
    residual = np.linalg.norm(obs.keypoints2d - pixels, axis=-1)[obs.visibility]
    assert residual.size >= 10_000
    expected = sigma * np.sqrt(np.pi / 2.0)
    assert abs(residual.mean() - expected) < 0.05 * expected


def test_observe_deterministic_per_seed():
    cfg = SceneConfig(persons=2, pattern="circle", frames=120, camera="static", seed=6,
                      noise=NoiseConfig(keypoint_px=2.0))
    a = generate_scene(cfg)
    b = generate_scene(cfg)
    for pa, pb in zip(a.persons, b.persons):
        assert np.array_equal(pa.keypoints2d, pb.keypoints2d, equal_nan=True)
        assert np.array_equal(pa.cam_pos, pb.cam_pos, equal_nan=True)
    c = generate_scene(dataclasses.replace(cfg, seed=7))
    vis = a.persons[0].visibility & c.persons[0].visibility
    assert not np.array_equal(a.persons[0].keypoints2d[vis], c.persons[0].keypoints2d[vis])


def test_make_anchors_zero_noise_zeroes_only_step0_planar_motion():
    motion = generate_motion("circle", 90, 30.0, seed=2)
    gt_ego = global_to_ego(motion.root_trajectory())
    anchor = make_anchors(gt_ego, AnchorNoiseConfig(), seed=0)
    assert anchor.dxy[0, 0] == 0.0 and anchor.dxy[0, 1] == 0.0
    assert anchor.dphi[0] == 0.0
    assert np.array_equal(anchor.dxy[1:], gt_ego.dxy[1:])
    assert np.array_equal(anchor.dphi[1:], gt_ego.dphi[1:])
    assert np.array_equal(anchor.z, gt_ego.z)  # height is observable at step 0
    assert np.array_equal(anchor.eta, gt_ego.eta)


def test_make_anchors_bias_accumulates_heading_drift():
    motion = generate_motion("straight", 120, 30.0, seed=2)
    gt_ego = global_to_ego(motion.root_trajectory())
    anchor = make_anchors(gt_ego, AnchorNoiseConfig(dphi_bias=0.002), seed=0)
    assert np.abs(anchor.dphi[1:] - gt_ego.dphi[1:] - 0.002).max() < 1e-15
    drifted = ego_to_global(anchor)
    straight = ego_to_global(make_anchors(gt_ego, AnchorNoiseConfig(), seed=0))
    gap = np.linalg.norm(drifted.translations - straight.translations, axis=-1)
    assert gap[-1] > 0.05  # the bias bends the path visibly over 4 seconds


def test_make_anchors_noise_deterministic():
    motion = generate_motion("circle", 60, 30.0, seed=8)
    gt_ego = global_to_ego(motion.root_trajectory())
    drift = AnchorNoiseConfig(sigma_xy=0.01, sigma_z=0.01, sigma_dphi=0.001, sigma_eta=0.01)
    a = make_anchors(gt_ego, drift, seed=5)
    b = make_anchors(gt_ego, drift, seed=5)
    assert np.array_equal(a.dxy, b.dxy) and np.array_equal(a.eta, b.eta)
    c = make_anchors(gt_ego, drift, seed=6)
    assert not np.array_equal(a.dxy, c.dxy)


def test_initialize_camera_exact_on_noiseless_static_scene():
    cfg = SceneConfig(persons=2, pattern="circle", frames=240, camera="static", seed=3)
    scene = generate_scene(cfg)
    with_camera = initialize_camera(scene, from_gt=True)
    gt_rot = quat_to_mat(scene.gt_camera.quaternions)
    est_rot = quat_to_mat(with_camera.camera.quaternions)
    worst = max(mat_geodesic(est_rot[t], gt_rot[t]) for t in range(cfg.frames))
    assert worst < 1e-9
    assert np.abs(with_camera.camera.positions - scene.gt_camera.positions).max() < 1e-9
    assert scene.camera is None  # original scene untouched


def test_initialize_camera_from_anchors_runs():
    cfg = SceneConfig(persons=2, pattern="circle", frames=120, camera="static", seed=9,
                      anchor_noise=AnchorNoiseConfig(sigma_xy=0.005, dphi_bias=0.001))
    scene = generate_scene(cfg)
    with_camera = initialize_camera(scene)
    assert np.isfinite(with_camera.camera.positions).all()
    assert np.isfinite(with_camera.camera.quaternions).all()


def test_initialize_camera_without_gt_refuses_gt_source():
    cfg = SceneConfig(persons=1, pattern="stand", frames=40, camera="static", seed=0)
    scene = dataclasses.replace(generate_scene(cfg), gt_motions=None, gt_camera=None)
    with pytest.raises(ValueError, match="no ground truth"):
        initialize_camera(scene, from_gt=True)


def _infill_scene(scene):
    persons = []
    for obs in scene.persons:
        filled = autoregressive_infill(
            MotionSequence(obs.theta, obs.beta, obs.visibility), linear_infiller
        )
        persons.append(dataclasses.replace(obs, theta=filled.theta, beta=filled.beta))
    return dataclasses.replace(scene, persons=persons)


def test_to_problem_requires_infilled_bodies():
    cfg = SceneConfig(persons=1, pattern="circle", frames=120, camera="static", seed=4)
    scene = initialize_camera(generate_scene(cfg))
    with pytest.raises(ValueError, match="infill"):
        scene.to_problem()
    with pytest.raises(ValueError, match="no camera"):
        generate_scene(cfg).to_problem()


def test_to_problem_builds_clean_state():
    cfg = SceneConfig(persons=2, pattern=("circle", "straight"), frames=150,
                      camera="lateral-track", seed=4,
                      noise=NoiseConfig(keypoint_px=2.0))
    scene = _infill_scene(initialize_camera(generate_scene(cfg)))
    problem = scene.to_problem()
    assert problem.frames == 150
    assert len(problem.persons) == 2
    state = problem.state()
    assert np.isfinite(state.to_vector()).all()
    for track in problem.persons:
        assert np.isfinite(track.cam_obs_rot).all()  # placeholders, not NaN
        assert np.isfinite(track.keypoints2d).all()
        assert track.span == (0, 149)


def test_scene_motions_sources():
    cfg = SceneConfig(persons=1, pattern="circle", frames=90, camera="static", seed=12)
    scene = _infill_scene(generate_scene(cfg))
    gt = scene_motions(scene, source="gt")
    assert gt[0] is scene.gt_motions[0]
    from_anchor = scene_motions(scene, source="anchor")
    assert from_anchor[0].frames == 90
    # zeroed step 0 pins the anchor path to the origin at frame 0
    assert np.abs(from_anchor[0].translations[0, :2]).max() < 1e-12
    fallback = scene_motions(scene, source="ego")
    assert np.array_equal(fallback[0].translations, from_anchor[0].translations)
    with pytest.raises(ValueError, match="unknown motion source"):
        scene_motions(scene, source="psychic")


def test_scene_validation():
    cfg = SceneConfig(persons=2, pattern="stand", frames=30, camera="static", seed=0)
    scene = generate_scene(cfg)
    with pytest.raises(ValueError, match="one anchor"):
        dataclasses.replace(scene, anchors=scene.anchors[:1])
    with pytest.raises(ValueError, match="ground truth must cover"):
        dataclasses.replace(scene, gt_motions=scene.gt_motions[:1])


def test_generate_scene_metadata_and_layout():
    cfg = SceneConfig(persons=3, pattern="circle", frames=60, camera="orbit", seed=1)
    scene = generate_scene(cfg)
    assert scene.metadata["camera_pattern"] == "orbit"
    assert scene.metadata["patterns"] == ["circle"] * 3
    assert scene.metadata["seed"] == 1
    starts = np.stack([m.translations[0, :2] for m in scene.gt_motions])
    gaps = np.linalg.norm(starts[:, None] - starts[None, :], axis=-1)
    assert gaps[np.triu_indices(3, 1)].min() > 1.0  # persons spawn apart


def test_camera_track_patterns():
    motions = [generate_motion("circle", 100, 30.0, seed=0)]
    intr = SceneConfig().intrinsics
    static = camera_track("static", motions, intr, 30.0)
    assert np.ptp(static.positions, axis=0).max() == 0.0
    orbit = camera_track("orbit", motions, intr, 30.0)
    assert np.ptp(orbit.positions[:, :2], axis=0).min() > 1.0
    track = camera_track("lateral-track", motions, intr, 30.0)
    offsets = track.positions - np.array([m.translations for m in motions]).mean(axis=0)
    assert np.ptp(offsets[:, 1]) < 1e-9  # constant backoff
    with pytest.raises(ValueError, match="unknown camera pattern"):
        camera_track("selfie", motions, intr, 30.0)
