import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation as ScipyRotation

from egorecon.geometry import (
    Heading,
    Rotation,
    Transform,
    axis_angle_to_mat,
    axis_angle_to_quat,
    from_heading,
    geodesic,
    heading_from_mat,
    heading_of,
    heading_sequence,
    mat_from_6d,
    mat_geodesic,
    mat_to_6d,
    mat_to_quat,
    quat_canonical,
    quat_geodesic,
    quat_mul,
    quat_to_axis_angle,
    quat_to_mat,
    rotz,
    to_heading,
    wrap_angle,
)


def random_rotations(n, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


unit_quats = st.builds(
    lambda seed: random_rotations(1, seed)[0], st.integers(0, 2**32 - 1)
)


class TestWrapAngle:
    def test_half_open_interval(self):
        a = wrap_angle(np.linspace(-10.0, 10.0, 10001))
        assert np.all(a > -np.pi)
        assert np.all(a <= np.pi)

    def test_pi_maps_to_positive_pi(self):
        assert wrap_angle(np.pi) == pytest.approx(np.pi)
        assert wrap_angle(-np.pi) == pytest.approx(np.pi)
        assert wrap_angle(3.0 * np.pi) == pytest.approx(np.pi)

    def test_identity_inside_interval(self):
        a = np.array([-3.0, -0.5, 0.0, 0.5, 3.0])
        np.testing.assert_allclose(wrap_angle(a), a, atol=1e-15)

    @given(st.floats(-100.0, 100.0))
    def test_congruent_mod_2pi(self, a):
        w = float(wrap_angle(a))
        assert abs((w - a) / (2.0 * np.pi) - round((w - a) / (2.0 * np.pi))) < 1e-9


class TestQuaternions:
    def test_mul_matches_scipy(self):
        qa = random_rotations(50, 1)
        qb = random_rotations(50, 2)
        ours = quat_mul(qa, qb)
        # scipy uses (x, y, z, w) order
        theirs = (
            ScipyRotation.from_quat(qa[:, [1, 2, 3, 0]])
            * ScipyRotation.from_quat(qb[:, [1, 2, 3, 0]])
        ).as_quat()[:, [3, 0, 1, 2]]
        dot = np.abs(np.sum(ours * theirs, axis=1))
        np.testing.assert_allclose(dot, 1.0, atol=1e-12)

    def test_to_mat_matches_scipy(self):
        q = random_rotations(50, 3)
        ours = quat_to_mat(q)
        theirs = ScipyRotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
        np.testing.assert_allclose(ours, theirs, atol=1e-12)

    def test_mat_round_trip(self):
        q = quat_canonical(random_rotations(200, 4))
        back = mat_to_quat(quat_to_mat(q))
        np.testing.assert_allclose(back, q, atol=1e-9)

    def test_mat_to_quat_near_pi_rotations(self):
        # Shepperd pivoting must stay stable when w is near zero.
        for axis in np.eye(3):
            m = axis_angle_to_mat(axis * (np.pi - 1e-7))
            q = mat_to_quat(m)
            np.testing.assert_allclose(quat_to_mat(q), m, atol=1e-9)

    def test_canonical_nonnegative_w(self):
        q = random_rotations(100, 5)
        c = quat_canonical(q)
        assert np.all(c[:, 0] >= 0.0)
        dot = np.abs(np.sum(c * q, axis=1))
        np.testing.assert_allclose(dot, 1.0, atol=1e-12)

    def test_canonical_w_zero_tiebreak(self):
        np.testing.assert_allclose(
            quat_canonical([0.0, -1.0, 0.0, 0.0]), [0.0, 1.0, 0.0, 0.0]
        )
        np.testing.assert_allclose(
            quat_canonical([0.0, 0.0, 0.0, -1.0]), [0.0, 0.0, 0.0, 1.0]
        )

    def test_geodesic_against_dot_formula(self):
        qa = random_rotations(100, 6)
        qb = random_rotations(100, 7)
        ours = quat_geodesic(qa, qb)
        dot = np.clip(np.abs(np.sum(qa * qb, axis=1)), -1.0, 1.0)
        expected = 2.0 * np.arccos(dot)
        np.testing.assert_allclose(ours, expected, atol=1e-9)

    def test_geodesic_range_and_symmetry(self):
        qa = random_rotations(100, 8)
        qb = random_rotations(100, 9)
        d = quat_geodesic(qa, qb)
        assert np.all(d >= 0.0)
        assert np.all(d <= np.pi + 1e-12)
        np.testing.assert_allclose(d, quat_geodesic(qb, qa), atol=1e-12)
        np.testing.assert_allclose(quat_geodesic(qa, qa), 0.0, atol=1e-9)

    def test_geodesic_sign_invariance(self):
        qa = random_rotations(20, 10)
        qb = random_rotations(20, 11)
        np.testing.assert_allclose(
            quat_geodesic(qa, qb), quat_geodesic(-qa, qb), atol=1e-12
        )


class TestAxisAngle:
    def test_matches_scipy(self):
        rng = np.random.default_rng(12)
        aa = rng.normal(size=(50, 3))
        np.testing.assert_allclose(
            axis_angle_to_mat(aa), ScipyRotation.from_rotvec(aa).as_matrix(), atol=1e-12
        )

    def test_quat_matches_scipy(self):
        rng = np.random.default_rng(13)
        aa = rng.normal(size=(50, 3))
        ours = axis_angle_to_quat(aa)
        theirs = ScipyRotation.from_rotvec(aa).as_quat()[:, [3, 0, 1, 2]]
        dot = np.abs(np.sum(ours * theirs, axis=1))
        np.testing.assert_allclose(dot, 1.0, atol=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(14)
        aa = rng.normal(size=(100, 3))
        angle = np.linalg.norm(aa, axis=1)
        aa = aa / angle[:, None] * (angle % np.pi)[:, None]  # principal branch
        back = quat_to_axis_angle(axis_angle_to_quat(aa))
        np.testing.assert_allclose(back, aa, atol=1e-9)

    def test_zero_angle(self):
        np.testing.assert_allclose(axis_angle_to_mat(np.zeros(3)), np.eye(3))
        np.testing.assert_allclose(
            axis_angle_to_quat(np.zeros(3)), [1.0, 0.0, 0.0, 0.0]
        )
        np.testing.assert_allclose(quat_to_axis_angle([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def test_tiny_angle_stability(self):
        aa = np.array([1e-10, -2e-10, 5e-11])
        m = axis_angle_to_mat(aa)
        assert np.all(np.isfinite(m))
        np.testing.assert_allclose(m, np.eye(3), atol=1e-9)


class TestMatGeodesic:
    def test_matches_scipy_magnitude(self):
        qa = random_rotations(50, 15)
        qb = random_rotations(50, 16)
        ma, mb = quat_to_mat(qa), quat_to_mat(qb)
        rel = ScipyRotation.from_matrix(
            np.swapaxes(ma, -1, -2) @ mb
        ).magnitude()
        np.testing.assert_allclose(mat_geodesic(ma, mb), rel, atol=1e-7)

    def test_triangle_inequality(self):
        qa, qb, qc = (random_rotations(50, s) for s in (17, 18, 19))
        ma, mb, mc = (quat_to_mat(q) for q in (qa, qb, qc))
        lhs = mat_geodesic(ma, mc)
        rhs = mat_geodesic(ma, mb) + mat_geodesic(mb, mc)
        assert np.all(lhs <= rhs + 1e-9)


class TestSixD:
    def test_identity_encoding(self):
        np.testing.assert_allclose(
            mat_to_6d(np.eye(3)), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        )

    def test_worked_example(self):
        # Non-orthogonal input (2,0,0, 1,1,0) orthonormalizes to identity.
        m = mat_from_6d([2.0, 0.0, 0.0, 1.0, 1.0, 0.0])
        np.testing.assert_allclose(m, np.eye(3), atol=1e-12)

    def test_round_trip(self):
        m = quat_to_mat(random_rotations(200, 20))
        np.testing.assert_allclose(mat_from_6d(mat_to_6d(m)), m, atol=1e-9)

    def test_recovery_is_left_invariant_to_column_scaling(self):
        m = quat_to_mat(random_rotations(50, 21))
        d6 = mat_to_6d(m)
        scaled = np.concatenate([d6[:, :3] * 3.0, d6[:, 3:] * 0.25], axis=1)
        np.testing.assert_allclose(mat_from_6d(scaled), m, atol=1e-9)

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError):
            mat_from_6d([0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        with pytest.raises(ValueError):
            mat_from_6d([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            mat_from_6d([1.0, 0.0, 0.0, -1.0, 0.0, 0.0])

    def test_result_is_rotation(self):
        rng = np.random.default_rng(22)
        d6 = rng.normal(size=(100, 6))
        m = mat_from_6d(d6)
        np.testing.assert_allclose(
            m @ np.swapaxes(m, -1, -2), np.broadcast_to(np.eye(3), m.shape), atol=1e-9
        )
        np.testing.assert_allclose(np.linalg.det(m), 1.0, atol=1e-9)


class TestHeading:
    def test_identity_faces_plus_y(self):
        phi, degenerate = heading_from_mat(np.eye(3))
        assert phi == pytest.approx(0.0)
        assert not degenerate

    def test_pure_yaw(self):
        for angle in (-3.0, -1.0, 0.5, np.pi / 2, 3.0):
            phi, _ = heading_from_mat(rotz(angle))
            assert float(phi) == pytest.approx(angle, abs=1e-12)

    def test_lying_face_up_has_zero_heading(self):
        # Rotation by pi/2 about x: z axis -> -y, y axis -> +z.  The
        # minimal alignment brings z back up without introducing yaw.
        m = axis_angle_to_mat(np.array([np.pi / 2, 0.0, 0.0]))
        phi, degenerate = heading_from_mat(m)
        assert float(phi) == pytest.approx(0.0, abs=1e-12)
        assert not degenerate

    def test_yaw_shift_property(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            # stay away from the degenerate antiparallel configuration
            tilt = ScipyRotation.from_rotvec(
                rng.normal(size=3) * rng.uniform(0.0, 1.2)
            ).as_matrix()
            base_phi, _ = heading_from_mat(tilt)
            alpha = rng.uniform(-np.pi, np.pi)
            shifted_phi, _ = heading_from_mat(rotz(alpha) @ tilt)
            assert float(shifted_phi) == pytest.approx(
                float(wrap_angle(alpha + base_phi)), abs=1e-9
            )

    def test_degenerate_flag(self):
        upside_down = axis_angle_to_mat(np.array([np.pi, 0.0, 0.0]))
        phi, degenerate = heading_from_mat(upside_down)
        assert degenerate
        assert float(phi) == 0.0

    def test_sequence_fallback_uses_previous_frame(self):
        seq = np.stack(
            [
                rotz(0.7),
                axis_angle_to_mat(np.array([np.pi, 0.0, 0.0])),
                rotz(-0.2),
            ]
        )
        phi = heading_sequence(seq)
        np.testing.assert_allclose(phi, [0.7, 0.7, -0.2], atol=1e-12)

    def test_sequence_fallback_at_first_frame(self):
        seq = axis_angle_to_mat(np.array([[np.pi, 0.0, 0.0]]))
        np.testing.assert_allclose(heading_sequence(seq), [0.0])

    def test_scalar_api(self):
        h = heading_of(Rotation.about_z(1.25))
        assert h.phi == pytest.approx(1.25)

    def test_heading_vector_convention(self):
        h = Heading(np.pi / 2)
        np.testing.assert_allclose(h.vector, [-1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(Heading(0.0).vector, [0.0, 1.0, 0.0])


class TestHeadingFrame:
    def test_worked_example(self):
        # (1, 0, 0) expressed in the phi = pi/2 heading frame is (0, -1, 0).
        v = to_heading(np.array([1.0, 0.0, 0.0]), Heading(np.pi / 2))
        np.testing.assert_allclose(v, [0.0, -1.0, 0.0], atol=1e-12)

    def test_round_trip_vectors(self):
        rng = np.random.default_rng(24)
        v = rng.normal(size=(100, 3))
        phi = rng.uniform(-np.pi, np.pi)
        h = Heading(phi)
        np.testing.assert_allclose(from_heading(to_heading(v, h), h), v, atol=1e-12)

    def test_preserves_z(self):
        v = np.array([1.0, 2.0, 3.0])
        out = to_heading(v, Heading(0.77))
        assert out[2] == pytest.approx(3.0)

    def test_rotation_in_heading_frame_has_zero_heading(self):
        rng = np.random.default_rng(25)
        for _ in range(20):
            tilt = ScipyRotation.from_rotvec(
                rng.normal(size=3) * rng.uniform(0.0, 1.2)
            ).as_matrix()
            r = Rotation.from_matrix(rotz(rng.uniform(-3.0, 3.0)) @ tilt)
            local = to_heading(r, heading_of(r))
            assert heading_of(local).phi == pytest.approx(0.0, abs=1e-9)


class TestRotationClass:
    def test_representation_round_trips(self):
        for q in random_rotations(50, 26):
            r = Rotation.from_quat(q)
            assert (
                Rotation.from_axis_angle(r.as_axis_angle()).geodesic_to(r) < 1e-9
            )
            assert Rotation.from_6d(r.as_6d()).geodesic_to(r) < 1e-9
            assert Rotation.from_quat(r.as_quat()).geodesic_to(r) < 1e-9

    def test_compose_matches_matrix_product(self):
        a = Rotation.from_axis_angle([0.1, 0.2, 0.3])
        b = Rotation.from_axis_angle([-0.4, 0.5, 0.6])
        np.testing.assert_allclose(
            (a @ b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12
        )

    def test_inverse(self):
        r = Rotation.from_axis_angle([0.3, -0.7, 0.2])
        assert (r @ r.inverse()).geodesic_to(Rotation.identity()) < 1e-12

    def test_apply(self):
        r = Rotation.about_z(np.pi / 2)
        np.testing.assert_allclose(r.apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_apply_batch(self):
        r = Rotation.about_z(np.pi / 2)
        v = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        np.testing.assert_allclose(
            r.apply(v), [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]], atol=1e-12
        )

    def test_validation_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Rotation(np.eye(3) * 2.0)
        with pytest.raises(ValueError):
            Rotation(np.diag([1.0, 1.0, -1.0]))

    def test_matrix_is_read_only(self):
        r = Rotation.identity()
        with pytest.raises(ValueError):
            r.as_matrix()[0, 0] = 5.0


class TestTransform:
    def test_compose_and_inverse(self):
        rng = np.random.default_rng(27)
        a = Transform(Rotation.from_axis_angle(rng.normal(size=3)), rng.normal(size=3))
        b = Transform(Rotation.from_axis_angle(rng.normal(size=3)), rng.normal(size=3))
        p = rng.normal(size=3)
        np.testing.assert_allclose((a @ b).apply(p), a.apply(b.apply(p)), atol=1e-12)
        round_trip = a.inverse().apply(a.apply(p))
        np.testing.assert_allclose(round_trip, p, atol=1e-12)

    def test_matrix_round_trip(self):
        t = Transform(Rotation.from_axis_angle([0.1, 0.2, 0.3]), [4.0, 5.0, 6.0])
        np.testing.assert_allclose(
            Transform.from_matrix(t.as_matrix()).as_matrix(), t.as_matrix(), atol=1e-12
        )

    def test_identity(self):
        p = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(Transform.identity().apply(p), p)


class TestGeodesicProperties:
    @settings(max_examples=50, deadline=None)
    @given(unit_quats, unit_quats)
    def test_left_invariance(self, qa, qb):
        ra, rb = Rotation.from_quat(qa), Rotation.from_quat(qb)
        base = geodesic(ra, rb)
        g = Rotation.from_axis_angle([0.3, 0.1, -0.2])
        assert geodesic(g @ ra, g @ rb) == pytest.approx(base, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(unit_quats)
    def test_small_perturbation_angle(self, q):
        r = Rotation.from_quat(q)
        delta = Rotation.from_axis_angle([1e-4, 0.0, 0.0])
        assert geodesic(r, r @ delta) == pytest.approx(1e-4, rel=1e-6)
