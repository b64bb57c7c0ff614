"""Evaluation suite: rotation, position, velocity and smoothness errors.

Conventions, recorded in every report: rotation error is measured on
global joint rotations (a flag switches to local); position error is
root-aligned (both skeletons translated so the root coincides per frame)
and reported in centimeters; velocity error is the mean norm of the
first-difference velocity mismatch in cm/s; jitter is the mean third-
difference (jerk) magnitude in units of 10^2 m/s^3, reported for the
prediction and for ground truth side by side.

The missing-sensor protocol degrades a sensor track by zeroing (or
freezing) whole sensors chosen from a seeded permutation, so the damaged
sets are nested as the missing count grows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rotations as rot
from .imusim import SensorTrack
from .skeleton import ShapeError

# Joint rows used by the two evaluation protocols: the whole-body protocol
# averages all 24 joints; the upper protocol averages 11 upper-body joints
# (spine chain, neck, head, shoulders, elbows, wrists).
WHOLE_EVAL_JOINTS = tuple(range(24))
UPPER_EVAL_JOINTS = (3, 6, 9, 12, 15, 16, 17, 18, 19, 20, 21)


def mpjre(pred_quat: np.ndarray, gt_quat: np.ndarray, joint_set=WHOLE_EVAL_JOINTS):
    """Mean per-joint rotation error in degrees, (mean, std) over samples.

    Inputs are (frames, 24, 4) global-rotation quaternions unless the
    caller already restricted the joint axis.
    """
    if pred_quat.shape != gt_quat.shape:
        raise ShapeError("prediction and ground truth must be aligned")
    angles = rot.angular_offset_deg(pred_quat[:, list(joint_set), :], gt_quat[:, list(joint_set), :])
    return float(angles.mean()), float(angles.std())


def mpjpe(pred_pos: np.ndarray, gt_pos: np.ndarray, joint_set=WHOLE_EVAL_JOINTS, root_index: int = 0):
    """Root-aligned mean per-joint position error in centimeters."""
    if pred_pos.shape != gt_pos.shape:
        raise ShapeError("prediction and ground truth must be aligned")
    pred = pred_pos - pred_pos[:, root_index : root_index + 1, :]
    gt = gt_pos - gt_pos[:, root_index : root_index + 1, :]
    err = np.linalg.norm(pred[:, list(joint_set), :] - gt[:, list(joint_set), :], axis=-1) * 100.0
    return float(err.mean()), float(err.std())


def mpjve(pred_pos: np.ndarray, gt_pos: np.ndarray, fps: float, joint_set=WHOLE_EVAL_JOINTS) -> float:
    """Mean per-joint velocity error in cm/s (first differences)."""
    if pred_pos.shape != gt_pos.shape:
        raise ShapeError("prediction and ground truth must be aligned")
    if pred_pos.shape[0] < 2:
        raise ShapeError("velocity error needs at least 2 frames")
    dv = (np.diff(pred_pos, axis=0) - np.diff(gt_pos, axis=0)) * fps
    err = np.linalg.norm(dv[:, list(joint_set), :], axis=-1) * 100.0
    return float(err.mean())


def jitter(pos: np.ndarray, fps: float, joint_set=WHOLE_EVAL_JOINTS) -> float:
    """Mean jerk magnitude in 10^2 m/s^3 (third differences)."""
    if pos.shape[0] < 4:
        raise ShapeError("jitter needs at least 4 frames")
    jerk = np.diff(pos, n=3, axis=0) * fps**3
    return float(np.linalg.norm(jerk[:, list(joint_set), :], axis=-1).mean() / 100.0)


def root_angle_error_deg(pred_quat: np.ndarray, gt_quat: np.ndarray, root_index: int = 0) -> float:
    return float(rot.angular_offset_deg(pred_quat[:, root_index, :], gt_quat[:, root_index, :]).mean())


def dropout_protocol(track: SensorTrack, k_missing: int, policy: str = "zero", seed: int = 0):
    """Remove k sensors from a track; returns (degraded track, dropped ids).

    Sensors are taken from the front of a seeded permutation, so the
    missing sets are nested across increasing k for a fixed seed. The
    ``zero`` policy nulls the channels; ``freeze`` holds the first frame.
    """
    if not (0 <= k_missing <= track.sensor_count):
        raise ValueError(f"k_missing must be in [0, {track.sensor_count}]")
    if policy not in ("zero", "freeze"):
        raise ValueError(f"unknown dropout policy {policy!r}")
    order = np.random.default_rng(seed).permutation(track.sensor_count)
    chosen = sorted(int(i) for i in order[:k_missing])

    acc = track.acceleration.copy()
    ori = track.orientation.copy()
    for s in chosen:
        if policy == "zero":
            acc[:, s, :] = 0.0
            ori[:, s, :] = 0.0
        else:
            acc[:, s, :] = acc[0, s, :]
            ori[:, s, :] = ori[0, s, :]

    degraded = SensorTrack.__new__(SensorTrack)
    degraded.fps = track.fps
    degraded.sensor_ids = track.sensor_ids
    degraded.acceleration = acc
    degraded.orientation = ori
    degraded.tightness_tag = track.tightness_tag
    degraded.meta = dict(track.meta, dropout={"k": k_missing, "policy": policy, "seed": seed,
                                              "sensors": [track.sensor_ids[i] for i in chosen]})
    return degraded, tuple(track.sensor_ids[i] for i in chosen)


@dataclass
class EvalReport:
    mpjre_deg: tuple
    mpjpe_cm: tuple
    mpjve_cm_s: float
    jitter_1e2_m_s3: float
    gt_jitter_1e2_m_s3: float
    root_angle_error_deg: float
    per_joint_mpjre_deg: dict = field(default_factory=dict)
    per_joint_mpjpe_cm: dict = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)

    def __post_init__(self):
        values = [*self.mpjre_deg, *self.mpjpe_cm, self.mpjve_cm_s,
                  self.jitter_1e2_m_s3, self.gt_jitter_1e2_m_s3, self.root_angle_error_deg]
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise ValueError("metric values must be finite and non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def csv_rows(self):
        rows = [
            ("mpjre_deg_mean", self.mpjre_deg[0]),
            ("mpjre_deg_std", self.mpjre_deg[1]),
            ("mpjpe_cm_mean", self.mpjpe_cm[0]),
            ("mpjpe_cm_std", self.mpjpe_cm[1]),
            ("mpjve_cm_s", self.mpjve_cm_s),
            ("jitter_1e2_m_s3", self.jitter_1e2_m_s3),
            ("gt_jitter_1e2_m_s3", self.gt_jitter_1e2_m_s3),
            ("root_angle_error_deg", self.root_angle_error_deg),
        ]
        return rows

    def write(self, json_path: str | None = None, csv_path: str | None = None):
        if json_path:
            with open(json_path, "w") as f:
                f.write(self.to_json())
        if csv_path:
            with open(csv_path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["metric", "value"])
                writer.writerows(self.csv_rows())


def evaluate(
    pred_quat: np.ndarray,
    gt_quat: np.ndarray,
    pred_pos: np.ndarray,
    gt_pos: np.ndarray,
    fps: float,
    joint_set=WHOLE_EVAL_JOINTS,
    joint_names=None,
    protocol: dict | None = None,
) -> EvalReport:
    """Full report from aligned global rotations and joint positions."""
    per_joint_re, per_joint_pe = {}, {}
    if joint_names is not None:
        aligned_p = pred_pos - pred_pos[:, :1, :]
        aligned_g = gt_pos - gt_pos[:, :1, :]
        for j in joint_set:
            ang = rot.angular_offset_deg(pred_quat[:, j, :], gt_quat[:, j, :])
            per_joint_re[joint_names[j]] = float(ang.mean())
            per_joint_pe[joint_names[j]] = float(
                np.linalg.norm(aligned_p[:, j] - aligned_g[:, j], axis=-1).mean() * 100.0
            )
    return EvalReport(
        mpjre_deg=mpjre(pred_quat, gt_quat, joint_set),
        mpjpe_cm=mpjpe(pred_pos, gt_pos, joint_set),
        mpjve_cm_s=mpjve(pred_pos, gt_pos, fps, joint_set),
        jitter_1e2_m_s3=jitter(pred_pos, fps, joint_set),
        gt_jitter_1e2_m_s3=jitter(gt_pos, fps, joint_set),
        root_angle_error_deg=root_angle_error_deg(pred_quat, gt_quat),
        per_joint_mpjre_deg=per_joint_re,
        per_joint_mpjpe_cm=per_joint_pe,
        protocol=dict(protocol or {}, rotation_frame="global", position_alignment="root"),
    )
