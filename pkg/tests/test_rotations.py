import numpy as np
import pytest

from loosepose import rotations as rot


def quat_dot_angle_deg(qa, qb):
    """Independent oracle: angle between rotations via 2*acos(|qa.qb|)."""
    d = np.abs(np.sum(qa * qb, axis=-1))
    return np.degrees(2.0 * np.arccos(np.clip(d, -1.0, 1.0)))


def gram_schmidt_oracle(r6):
    """Column-by-column Gram-Schmidt written independently of the library."""
    a1, a2 = np.asarray(r6[:3], dtype=float), np.asarray(r6[3:], dtype=float)
    b1 = a1 / np.linalg.norm(a1)
    a2p = a2 - np.dot(b1, a2) * b1
    b2 = a2p / np.linalg.norm(a2p)
    b3 = np.cross(b1, b2)
    return np.stack((b1, b2, b3), axis=-1)


class TestQuaternionBasics:
    def test_normalized_after_construction(self):
        rng = np.random.default_rng(0)
        q = rot.random_quat(rng, (100,))
        assert np.allclose(np.linalg.norm(q, axis=-1), 1.0, atol=1e-6)

    def test_matrix_view_orthonormal(self):
        rng = np.random.default_rng(1)
        m = rot.quat_to_matrix(rot.random_quat(rng, (50,)))
        eye = np.einsum("bij,bkj->bik", m, m)
        assert np.allclose(eye, np.eye(3), atol=1e-5)
        assert np.allclose(np.linalg.det(m), 1.0, atol=1e-5)

    def test_round_trip_preserves_action(self):
        rng = np.random.default_rng(2)
        q = rot.random_quat(rng, (200,))
        q2 = rot.matrix_to_quat(rot.quat_to_matrix(q))
        # sign may flip; the rotation angle between them must vanish
        assert rot.angular_offset_deg(q, q2).max() < 1e-6

    def test_axis_angle_round_trip(self):
        rng = np.random.default_rng(3)
        q = rot.random_quat(rng, (200,))
        q2 = rot.axis_angle_to_quat(rot.quat_to_axis_angle(q))
        assert rot.angular_offset_deg(q, q2).max() < 1e-6

    def test_axis_angle_small_angles(self):
        aa = np.array([[1e-9, 0, 0], [0, 5e-5, 0], [0, 0, 0]])
        q = rot.axis_angle_to_quat(aa)
        back = rot.quat_to_axis_angle(q)
        assert np.allclose(back, aa, atol=1e-12)


class TestConvert:
    def test_identity_matrix_view(self):
        assert np.allclose(rot.convert(rot.identity_quat(), "matrix"), np.eye(3))

    def test_identity_six_d_view(self):
        assert np.allclose(rot.convert(rot.identity_quat(), "six_d"), [1, 0, 0, 0, 1, 0])

    def test_six_d_gram_schmidt_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            q = rot.random_quat(rng)
            r6 = rot.quat_to_six_d(q)
            assert np.abs(rot.six_d_to_matrix(r6) - gram_schmidt_oracle(r6)).max() < 1e-12
            assert np.abs(rot.six_d_to_matrix(r6) - rot.quat_to_matrix(q)).max() < 1e-6

    def test_six_d_scale_invariance(self):
        rng = np.random.default_rng(5)
        q = rot.random_quat(rng, (20,))
        r6 = rot.quat_to_six_d(q)
        scaled = r6.copy()
        scaled[..., :3] *= 3.7
        scaled[..., 3:] *= 0.25
        assert np.abs(rot.six_d_to_matrix(scaled) - rot.six_d_to_matrix(r6)).max() < 1e-9

    def test_unknown_view_rejected(self):
        with pytest.raises(ValueError):
            rot.convert(rot.identity_quat(), "euler")


class TestAngularOffset:
    def test_zero_for_equal(self):
        rng = np.random.default_rng(6)
        q = rot.random_quat(rng, (10,))
        assert np.allclose(rot.angular_offset_deg(q, q), 0.0, atol=1e-6)

    def test_ninety_about_x(self):
        qx = rot.axis_angle_to_quat(np.array([np.pi / 2, 0, 0]))
        assert abs(rot.angular_offset_deg(rot.identity_quat(), qx) - 90.0) < 1e-9

    def test_matches_quat_dot_oracle(self):
        rng = np.random.default_rng(7)
        qa = rot.random_quat(rng, (10000,))
        qb = rot.random_quat(rng, (10000,))
        ours = rot.angular_offset_deg(qa, qb)
        assert np.abs(ours - quat_dot_angle_deg(qa, qb)).max() < 1e-4

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        qa, qb = rot.random_quat(rng, (500,)), rot.random_quat(rng, (500,))
        assert np.abs(rot.angular_offset_deg(qa, qb) - rot.angular_offset_deg(qb, qa)).max() < 1e-9

    def test_triangle_inequality_on_sampled_triples(self):
        rng = np.random.default_rng(9)
        qa, qb, qc = (rot.random_quat(rng, (500,)) for _ in range(3))
        ab = rot.angular_offset_deg(qa, qb)
        bc = rot.angular_offset_deg(qb, qc)
        ac = rot.angular_offset_deg(qa, qc)
        assert (ac <= ab + bc + 1e-4).all()


class TestSlerp:
    def test_endpoints_exact(self):
        rng = np.random.default_rng(10)
        qa, qb = rot.random_quat(rng, (20,)), rot.random_quat(rng, (20,))
        assert rot.angular_offset_deg(rot.slerp(qa, qb, 0.0), qa).max() < 1e-7
        assert rot.angular_offset_deg(rot.slerp(qa, qb, 1.0), qb).max() < 1e-7

    def test_midpoint_equidistant(self):
        rng = np.random.default_rng(11)
        qa, qb = rot.random_quat(rng, (50,)), rot.random_quat(rng, (50,))
        mid = rot.slerp(qa, qb, 0.5)
        da = rot.angular_offset_deg(mid, qa)
        db = rot.angular_offset_deg(mid, qb)
        assert np.abs(da - db).max() < 1e-6

    def test_output_is_unit(self):
        rng = np.random.default_rng(12)
        qa, qb = rot.random_quat(rng, (50,)), rot.random_quat(rng, (50,))
        out = rot.slerp(qa, qb, 0.3)
        assert np.allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-9)
