"""24-joint kinematic tree, pose sequences, and forward kinematics.

The joint list and parenting follow the standard 24-joint body-model
convention (pelvis root, x pointing to the subject's left, y up, z
forward). Body shape is fixed: rest joint positions approximate a neutral
adult of about 1.70 m and are the single source of bone lengths for the
whole library.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rotations as rot

JOINT_NAMES = (
    "pelvis",
    "l_hip",
    "r_hip",
    "spine1",
    "l_knee",
    "r_knee",
    "spine2",
    "l_ankle",
    "r_ankle",
    "spine3",
    "l_foot",
    "r_foot",
    "neck",
    "l_collar",
    "r_collar",
    "head",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hand",
    "r_hand",
)

PARENT_INDEX = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
)

# Rest joint centers in meters, pelvis at the origin (x left, y up, z forward).
_REST_POSITION = np.array(
    [
        [0.000, 0.000, 0.000],   # pelvis
        [0.070, -0.090, -0.010],  # l_hip
        [-0.070, -0.090, -0.010],  # r_hip
        [0.000, 0.110, -0.010],  # spine1
        [0.100, -0.470, -0.010],  # l_knee
        [-0.100, -0.470, -0.010],  # r_knee
        [0.000, 0.250, -0.020],  # spine2
        [0.090, -0.880, -0.030],  # l_ankle
        [-0.090, -0.880, -0.030],  # r_ankle
        [0.000, 0.310, -0.010],  # spine3
        [0.110, -0.940, 0.090],  # l_foot
        [-0.110, -0.940, 0.090],  # r_foot
        [0.000, 0.540, -0.020],  # neck
        [0.045, 0.490, -0.020],  # l_collar
        [-0.045, 0.490, -0.020],  # r_collar
        [0.000, 0.620, 0.010],   # head
        [0.170, 0.520, -0.020],  # l_shoulder
        [-0.170, 0.520, -0.020],  # r_shoulder
        [0.430, 0.520, -0.030],  # l_elbow
        [-0.430, 0.520, -0.030],  # r_elbow
        [0.680, 0.520, -0.030],  # l_wrist
        [-0.680, 0.520, -0.030],  # r_wrist
        [0.765, 0.520, -0.030],  # l_hand
        [-0.765, 0.520, -0.030],  # r_hand
    ],
    dtype=np.float64,
)

# The 14 joints estimated by the upper-body model: pelvis, the spine chain,
# neck, head, collars, shoulders, elbows and wrists (head and wrists being
# the leaf joints of the upper-body subtree).
UPPER_BODY_JOINTS = (0, 3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21)


class ShapeError(ValueError):
    """Array shape does not match the declared joint/frame layout."""


@dataclass(frozen=True)
class Skeleton:
    """Fixed kinematic tree: parenting, rest offsets, joint naming."""

    parent_index: tuple = PARENT_INDEX
    rest_offset: np.ndarray = field(default=None)
    joint_names: tuple = JOINT_NAMES
    upper_body_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rest_offset is None:
            offsets = _REST_POSITION.copy()
            for j in range(1, len(self.parent_index)):
                offsets[j] = _REST_POSITION[j] - _REST_POSITION[self.parent_index[j]]
            offsets[0] = 0.0
            object.__setattr__(self, "rest_offset", offsets)
        if self.upper_body_mask is None:
            mask = np.zeros(len(self.parent_index), dtype=bool)
            mask[list(UPPER_BODY_JOINTS)] = True
            object.__setattr__(self, "upper_body_mask", mask)
        self._validate()

    def _validate(self):
        n = len(self.parent_index)
        if n != 24:
            raise ShapeError(f"skeleton must have 24 joints, got {n}")
        if self.parent_index[0] != -1:
            raise ShapeError("joint 0 must be the root (parent -1)")
        for j in range(1, n):
            p = self.parent_index[j]
            if not (0 <= p < j):
                raise ShapeError(f"parent of joint {j} must precede it, got {p}")
        if self.rest_offset.shape != (n, 3):
            raise ShapeError("rest_offset must be (24, 3)")
        if int(self.upper_body_mask.sum()) != 14:
            raise ShapeError("upper_body_mask must select exactly 14 joints")

    @property
    def joint_count(self) -> int:
        return len(self.parent_index)

    def rest_position(self) -> np.ndarray:
        """Global joint centers of the rest pose, root at origin."""
        return _REST_POSITION.copy()


@dataclass
class PoseSequence:
    """Per-frame local joint rotations plus root translation.

    joint_rotation: (frames, 24, 4) unit quaternions, parent-relative.
    root_translation: (frames, 3) meters.
    """

    fps: float
    root_translation: np.ndarray
    joint_rotation: np.ndarray

    def __post_init__(self):
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        self.joint_rotation = np.asarray(self.joint_rotation, dtype=np.float64)
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.joint_rotation.ndim != 3 or self.joint_rotation.shape[1:] != (24, 4):
            raise ShapeError(f"joint_rotation must be (frames, 24, 4), got {self.joint_rotation.shape}")
        if self.root_translation.shape != (self.joint_rotation.shape[0], 3):
            raise ShapeError("root_translation must be (frames, 3) aligned with joint_rotation")
        if self.frames < 1:
            raise ShapeError("a pose sequence needs at least one frame")
        self.joint_rotation = rot.quat_normalize(self.joint_rotation)

    @property
    def frames(self) -> int:
        return self.joint_rotation.shape[0]

    def slice(self, start: int, stop: int) -> "PoseSequence":
        return PoseSequence(
            fps=self.fps,
            root_translation=self.root_translation[start:stop].copy(),
            joint_rotation=self.joint_rotation[start:stop].copy(),
        )


def forward_kinematics(skeleton: Skeleton, local_quat: np.ndarray, root_translation: np.ndarray):
    """Propagate local rotations down the tree.

    local_quat: (..., 24, 4); root_translation: (..., 3). Returns
    (global_quat (..., 24, 4), global_position (..., 24, 3)) where

        R_g[j] = R_g[parent(j)] * R_l[j]
        p[j]   = p[parent(j)] + R_g[parent(j)] @ rest_offset[j]

    and the root takes the supplied translation directly.
    """
    local_quat = np.asarray(local_quat, dtype=np.float64)
    root_translation = np.asarray(root_translation, dtype=np.float64)
    n = skeleton.joint_count
    if local_quat.shape[-2:] != (n, 4):
        raise ShapeError(f"expected (..., {n}, 4) local rotations, got {local_quat.shape}")
    if root_translation.shape != local_quat.shape[:-2] + (3,):
        raise ShapeError("root_translation batch shape must match local_quat")

    global_quat = np.empty_like(local_quat)
    global_pos = np.empty(local_quat.shape[:-1] + (3,), dtype=np.float64)
    global_quat[..., 0, :] = local_quat[..., 0, :]
    global_pos[..., 0, :] = root_translation
    for j in range(1, n):
        p = skeleton.parent_index[j]
        global_quat[..., j, :] = rot.quat_multiply(global_quat[..., p, :], local_quat[..., j, :])
        global_pos[..., j, :] = global_pos[..., p, :] + rot.quat_rotate(
            global_quat[..., p, :], skeleton.rest_offset[j]
        )
    return global_quat, global_pos


def fk_sequence(skeleton: Skeleton, pose: PoseSequence):
    """Forward kinematics over a whole PoseSequence."""
    return forward_kinematics(skeleton, pose.joint_rotation, pose.root_translation)
