import numpy as np
import pytest

from loosepose import rotations as rot
from loosepose.imusim import SensorTrack
from loosepose.metrics import (
    UPPER_EVAL_JOINTS,
    WHOLE_EVAL_JOINTS,
    EvalReport,
    dropout_protocol,
    evaluate,
    jitter,
    mpjpe,
    mpjre,
    mpjve,
    root_angle_error_deg,
)
from loosepose.skeleton import JOINT_NAMES, ShapeError


def random_pose_pair(rng, frames=30):
    return rot.random_quat(rng, (frames, 24)), rot.random_quat(rng, (frames, 24))


class TestMPJRE:
    def test_zero_for_equal(self):
        rng = np.random.default_rng(0)
        q, _ = random_pose_pair(rng)
        mean, std = mpjre(q, q)
        assert mean < 1e-6 and std < 1e-6

    def test_fixed_offset(self):
        rng = np.random.default_rng(1)
        q, _ = random_pose_pair(rng)
        ten = rot.axis_angle_to_quat(np.array([np.radians(10.0), 0, 0]))
        shifted = rot.quat_multiply(q, np.broadcast_to(ten, q.shape))
        mean, std = mpjre(q, shifted)
        assert abs(mean - 10.0) < 1e-6
        assert std < 1e-6

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        pred, gt = random_pose_pair(rng, frames=10)
        mean, _ = mpjre(pred, gt, UPPER_EVAL_JOINTS)
        total, count = 0.0, 0
        for f in range(10):
            for j in UPPER_EVAL_JOINTS:
                total += float(rot.angular_offset_deg(pred[f, j], gt[f, j]))
                count += 1
        assert abs(mean - total / count) < 1e-6

    def test_invariant_to_shared_global_rotation(self):
        rng = np.random.default_rng(3)
        pred, gt = random_pose_pair(rng, frames=8)
        g = rot.random_quat(rng)
        pred_rot = rot.quat_multiply(np.broadcast_to(g, pred.shape), pred)
        gt_rot = rot.quat_multiply(np.broadcast_to(g, gt.shape), gt)
        a, _ = mpjre(pred, gt)
        b, _ = mpjre(pred_rot, gt_rot)
        assert abs(a - b) < 1e-6

    def test_eval_joint_sets(self):
        assert len(UPPER_EVAL_JOINTS) == 11
        assert len(WHOLE_EVAL_JOINTS) == 24

    def test_misalignment_rejected(self):
        rng = np.random.default_rng(4)
        q, _ = random_pose_pair(rng, frames=6)
        with pytest.raises(ShapeError):
            mpjre(q, q[:5])


class TestMPJPE:
    def test_zero_for_equal(self):
        rng = np.random.default_rng(5)
        p = rng.standard_normal((20, 24, 3))
        mean, std = mpjpe(p, p)
        assert mean == 0.0 and std == 0.0

    def test_alignment_removes_global_offset(self):
        rng = np.random.default_rng(6)
        p = rng.standard_normal((20, 24, 3))
        shifted = p + np.array([0.01, 0.0, 0.0])  # +1 cm on every joint incl. root
        mean, _ = mpjpe(p, shifted)
        assert mean < 1e-9

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        pred = rng.standard_normal((6, 24, 3))
        gt = rng.standard_normal((6, 24, 3))
        mean, _ = mpjpe(pred, gt)
        total, count = 0.0, 0
        for f in range(6):
            pr = pred[f] - pred[f, 0]
            gr = gt[f] - gt[f, 0]
            for j in range(24):
                total += np.linalg.norm(pr[j] - gr[j]) * 100.0
                count += 1
        assert abs(mean - total / count) < 1e-6


class TestMPJVE:
    def test_equal_sequences(self):
        rng = np.random.default_rng(8)
        p = rng.standard_normal((10, 24, 3))
        assert mpjve(p, p, 30.0) == 0.0

    def test_static_gt_moving_pred(self):
        # 1 cm per frame at 30 fps = 30 cm/s
        frames = 20
        pred = np.zeros((frames, 24, 3))
        pred[:, :, 0] = 0.01 * np.arange(frames)[:, None]
        gt = np.zeros((frames, 24, 3))
        assert abs(mpjve(pred, gt, 30.0) - 30.0) < 1e-9

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        pred = rng.standard_normal((8, 24, 3))
        gt = rng.standard_normal((8, 24, 3))
        ours = mpjve(pred, gt, 25.0)
        total, count = 0.0, 0
        for f in range(7):
            for j in range(24):
                dv = (pred[f + 1, j] - pred[f, j]) - (gt[f + 1, j] - gt[f, j])
                total += np.linalg.norm(dv) * 25.0 * 100.0
                count += 1
        assert abs(ours - total / count) < 1e-6

    def test_short_sequence_rejected(self):
        with pytest.raises(ShapeError):
            mpjve(np.zeros((1, 24, 3)), np.zeros((1, 24, 3)), 30.0)


class TestJitter:
    def test_constant_velocity_zero(self):
        frames = 30
        p = np.zeros((frames, 24, 3))
        p[:, :, 1] = 0.03 * np.arange(frames)[:, None]
        assert jitter(p, 30.0) < 1e-9

    def test_cubic_matches_analytic_jerk(self):
        # p = t^3 -> jerk 6 m/s^3 -> 0.06 in 10^2 m/s^3 units
        fps = 30.0
        t = np.arange(40) / fps
        p = np.zeros((40, 24, 3))
        p[:, :, 0] = (t**3)[:, None]
        assert abs(jitter(p, fps) - 0.06) < 1e-3

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(10)
        p = rng.standard_normal((9, 24, 3))
        fps = 30.0
        ours = jitter(p, fps)
        total, count = 0.0, 0
        for f in range(9 - 3):
            for j in range(24):
                jerk = (p[f + 3, j] - 3 * p[f + 2, j] + 3 * p[f + 1, j] - p[f, j]) * fps**3
                total += np.linalg.norm(jerk) / 100.0
                count += 1
        assert abs(ours - total / count) < 1e-9

    def test_short_sequence_rejected(self):
        with pytest.raises(ShapeError):
            jitter(np.zeros((3, 24, 3)), 30.0)


class TestDropoutProtocol:
    def _track(self, rng, k=6):
        return SensorTrack(
            fps=30.0,
            sensor_ids=tuple(f"s{i}" for i in range(k)),
            acceleration=rng.standard_normal((12, k, 3)),
            orientation=rot.random_quat(rng, (12, k)),
            tightness_tag="loose_sim",
        )

    def test_k_zero_identity(self):
        rng = np.random.default_rng(11)
        track = self._track(rng)
        degraded, chosen = dropout_protocol(track, 0)
        assert chosen == ()
        assert np.array_equal(degraded.acceleration, track.acceleration)

    def test_k_all_zeroes_everything(self):
        rng = np.random.default_rng(12)
        track = self._track(rng)
        degraded, chosen = dropout_protocol(track, 6)
        assert len(chosen) == 6
        assert (degraded.acceleration == 0).all()
        assert (degraded.orientation == 0).all()

    def test_seeded_choice_deterministic_and_nested(self):
        rng = np.random.default_rng(13)
        track = self._track(rng)
        _, once = dropout_protocol(track, 1, seed=5)
        _, again = dropout_protocol(track, 1, seed=5)
        assert once == again
        _, two = dropout_protocol(track, 2, seed=5)
        assert set(once) <= set(two)

    def test_freeze_policy(self):
        rng = np.random.default_rng(14)
        track = self._track(rng)
        degraded, chosen = dropout_protocol(track, 2, policy="freeze", seed=1)
        ids = [track.sensor_ids.index(c) for c in chosen]
        for s in ids:
            assert (degraded.acceleration[:, s] == track.acceleration[0, s]).all()

    def test_k_out_of_range(self):
        rng = np.random.default_rng(15)
        with pytest.raises(ValueError):
            dropout_protocol(self._track(rng), 7)


class TestEvalReport:
    def test_full_report(self):
        rng = np.random.default_rng(16)
        pred_q, gt_q = random_pose_pair(rng, frames=20)
        pred_p = rng.standard_normal((20, 24, 3))
        gt_p = rng.standard_normal((20, 24, 3))
        report = evaluate(pred_q, gt_q, pred_p, gt_p, 30.0, joint_names=JOINT_NAMES)
        assert report.mpjre_deg[0] > 0
        assert len(report.per_joint_mpjre_deg) == 24
        assert report.protocol["rotation_frame"] == "global"
        parsed = __import__("json").loads(report.to_json())
        assert "mpjpe_cm" in parsed
        rows = dict(report.csv_rows())
        assert "jitter_1e2_m_s3" in rows

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            EvalReport(
                mpjre_deg=(float("nan"), 0.0), mpjpe_cm=(0.0, 0.0), mpjve_cm_s=0.0,
                jitter_1e2_m_s3=0.0, gt_jitter_1e2_m_s3=0.0, root_angle_error_deg=0.0,
            )

    def test_root_angle_error(self):
        rng = np.random.default_rng(17)
        q, _ = random_pose_pair(rng, frames=5)
        ninety = rot.axis_angle_to_quat(np.array([0, np.pi / 2, 0]))
        shifted = q.copy()
        shifted[:, 0] = rot.quat_multiply(np.broadcast_to(ninety, (5, 4)), q[:, 0])
        assert abs(root_angle_error_deg(shifted, q) - 90.0) < 1e-6
