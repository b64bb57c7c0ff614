import numpy as np
import pytest

from loosepose import rotations as rot
from loosepose.skeleton import (
    PARENT_INDEX,
    PoseSequence,
    ShapeError,
    Skeleton,
    forward_kinematics,
)


def chain_walk_oracle(skeleton, local_quat, root_translation):
    """Brute-force FK: walk the root->joint path per joint, multiplying
    rotation matrices one by one and accumulating rotated offsets."""
    mats = rot.quat_to_matrix(local_quat)
    n = skeleton.joint_count
    positions = np.zeros((n, 3))
    rotations = np.zeros((n, 3, 3))
    for j in range(n):
        path = []
        k = j
        while k != -1:
            path.append(k)
            k = skeleton.parent_index[k]
        path.reverse()
        m = np.eye(3)
        p = np.array(root_translation, dtype=float)
        for idx, joint in enumerate(path):
            if idx > 0:
                p = p + m @ skeleton.rest_offset[joint]
            m = m @ mats[joint]
        positions[j] = p
        rotations[j] = m
    return rotations, positions


@pytest.fixture(scope="module")
def skeleton():
    return Skeleton()


class TestSkeletonStructure:
    def test_tree_properties(self, skeleton):
        assert skeleton.joint_count == 24
        assert skeleton.parent_index[0] == -1
        for j in range(1, 24):
            assert 0 <= skeleton.parent_index[j] < j

    def test_upper_body_mask(self, skeleton):
        assert skeleton.upper_body_mask.sum() == 14
        assert skeleton.upper_body_mask[0]          # pelvis included
        assert not skeleton.upper_body_mask[4]      # knees are lower body

    def test_rest_offsets_give_plausible_height(self, skeleton):
        pos = skeleton.rest_position()
        height = pos[:, 1].max() - pos[:, 1].min()
        assert 1.3 < height < 1.8

    def test_invalid_parents_rejected(self):
        bad = list(PARENT_INDEX)
        bad[3] = 5
        with pytest.raises(ShapeError):
            Skeleton(parent_index=tuple(bad))


class TestForwardKinematics:
    def test_identity_pose_accumulates_offsets(self, skeleton):
        quat = rot.identity_quat((24,))
        gq, gp = forward_kinematics(skeleton, quat, np.zeros(3))
        # identity pose: every joint sits at the cumulative offset sum
        expected = skeleton.rest_position()
        assert np.abs(gp - expected).max() < 1e-12
        assert rot.angular_offset_deg(gq, rot.identity_quat((24,))).max() < 1e-9

    def test_root_rotation_rotates_rigidly(self, skeleton):
        quat = rot.identity_quat((24,))
        quat[0] = rot.axis_angle_to_quat(np.array([0.0, 0.0, np.pi / 2]))
        _, gp = forward_kinematics(skeleton, quat, np.zeros(3))
        rest = skeleton.rest_position()
        rot90 = rot.quat_to_matrix(quat[0])
        assert np.abs(gp - rest @ rot90.T).max() < 1e-9

    def test_matches_chain_walk_oracle(self, skeleton):
        rng = np.random.default_rng(42)
        for trial in range(20):
            quat = rot.random_quat(rng, (24,))
            trans = rng.standard_normal(3)
            gq, gp = forward_kinematics(skeleton, quat, trans)
            om, op = chain_walk_oracle(skeleton, quat, trans)
            assert np.abs(gp - op).max() < 1e-6
            assert np.abs(rot.quat_to_matrix(gq) - om).max() < 1e-6

    def test_equivariance_under_global_rotation(self, skeleton):
        rng = np.random.default_rng(7)
        quat = rot.random_quat(rng, (24,))
        trans = rng.standard_normal(3)
        g = rot.random_quat(rng)
        _, gp = forward_kinematics(skeleton, quat, trans)

        rotated = quat.copy()
        rotated[0] = rot.quat_multiply(g, quat[0])
        _, gp2 = forward_kinematics(skeleton, rotated, rot.quat_rotate(g, trans))
        assert np.abs(gp2 - rot.quat_rotate(g, gp)).max() < 1e-6

    def test_joint_count_mismatch(self, skeleton):
        with pytest.raises(ShapeError):
            forward_kinematics(skeleton, rot.identity_quat((23,)), np.zeros(3))

    def test_batched_frames(self, skeleton):
        rng = np.random.default_rng(8)
        quat = rot.random_quat(rng, (5, 24))
        trans = rng.standard_normal((5, 3))
        gq, gp = forward_kinematics(skeleton, quat, trans)
        for f in range(5):
            q1, p1 = forward_kinematics(skeleton, quat[f], trans[f])
            assert np.abs(gp[f] - p1).max() < 1e-12
            assert np.abs(gq[f] - q1).max() < 1e-12


class TestPoseSequence:
    def test_rejects_zero_fps(self):
        with pytest.raises(ValueError):
            PoseSequence(fps=0.0, root_translation=np.zeros((2, 3)), joint_rotation=rot.identity_quat((2, 24)))

    def test_normalizes_rotations(self):
        q = rot.identity_quat((3, 24)) * 2.0
        seq = PoseSequence(fps=30.0, root_translation=np.zeros((3, 3)), joint_rotation=q)
        assert np.allclose(np.linalg.norm(seq.joint_rotation, axis=-1), 1.0)

    def test_rejects_misaligned_translation(self):
        with pytest.raises(ShapeError):
            PoseSequence(fps=30.0, root_translation=np.zeros((2, 3)), joint_rotation=rot.identity_quat((3, 24)))
