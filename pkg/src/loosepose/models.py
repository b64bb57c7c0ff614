"""Model families, channel layouts, and signal encoding.

Three diffusion model families share the same denoiser architecture and
differ only in channel layout:

conditional (upper/whole, optionally garment-aware)
    x0     = [ pose 6D (6J) | tight sensors (9K) | joint positions (3J) ]
    cond   = [ loose sensors (9K) | gamma, height_cm, bmi (3, aware only) ]
    streams: pose, tight, positions, cond

secondary (loose-wear generator)
    x0     = [ loose orientations 6D (6K) | loose accelerations (3K) ]
    cond   = [ tight sensors (9K) | pose quaternions (96) ]
    streams: loose-ori, loose-acc, tight, pose

unconditional (inpainting, root sensor masked)
    x0     = [ pose (6J) | tight (9K) | loose (9K) | positions (3J) ]
    cond   = [ x_masked (9K) | mask (9K) ]
    streams: pose, tight+loose, positions, cond

Sensor channels are 9 per sensor: the 6D orientation followed by the
acceleration divided by ``accel_scale``. Joint positions are root-relative
meters. The upper-body variant carries 14 joints and 4 sensors, the
whole-body variant 24 joints and 6 sensors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import rotations as rot
from .denoiser import Denoiser, DenoiserConfig
from .imusim import FOUR_SENSOR_UPPER_SET, SIX_SENSOR_SET, SensorTrack
from .skeleton import UPPER_BODY_JOINTS, PoseSequence, Skeleton, forward_kinematics

POSE_QUAT_WIDTH = 24 * 4

# Extremity joints referenced by the position loss terms.
ARM_JOINTS = (18, 19, 20, 21, 22, 23)
LEG_JOINTS = (4, 5, 7, 8, 10, 11)

PROFILES = {
    "tiny": dict(encoder_blocks=1, decoder_blocks=1, model_width=16, attention_heads=2),
    "full": dict(encoder_blocks=4, decoder_blocks=4, model_width=256, attention_heads=4),
}


class ModelConfigError(ValueError):
    pass


def _placements_for(body: str):
    return FOUR_SENSOR_UPPER_SET if body == "upper" else SIX_SENSOR_SET


@dataclass(frozen=True)
class ModelSpec:
    family: str = "conditional"          # conditional | secondary | unconditional
    body: str = "whole"                  # upper | whole
    garment_aware: bool = False
    profile: str = "tiny"
    window_frames: int = 60
    accel_scale: float = 10.0
    consistency_noise: float = 0.3
    sensor_ids: tuple = ()
    dropout: float = 0.0

    def __post_init__(self):
        if self.family not in ("conditional", "secondary", "unconditional"):
            raise ModelConfigError(f"unknown model family {self.family!r}")
        if self.body not in ("upper", "whole"):
            raise ModelConfigError(f"unknown body variant {self.body!r}")
        if self.profile not in PROFILES:
            raise ModelConfigError(f"unknown profile {self.profile!r}")
        if not self.sensor_ids:
            object.__setattr__(
                self, "sensor_ids", tuple(p.sensor_id for p in _placements_for(self.body))
            )

    # -- joint/sensor bookkeeping -------------------------------------------------

    @property
    def joint_indices(self) -> tuple:
        return UPPER_BODY_JOINTS if self.body == "upper" else tuple(range(24))

    @property
    def joint_count(self) -> int:
        return len(self.joint_indices)

    @property
    def sensor_count(self) -> int:
        return len(self.sensor_ids)

    @property
    def extremity_rows(self) -> tuple:
        """Rows (within this spec's joint list) of the extremity joints."""
        extremities = set(ARM_JOINTS) if self.body == "upper" else set(ARM_JOINTS) | set(LEG_JOINTS)
        return tuple(i for i, j in enumerate(self.joint_indices) if j in extremities)

    @property
    def root_row(self) -> int:
        return self.joint_indices.index(0)

    @property
    def masked_sensor(self) -> str:
        """Sensor hidden by the inpainting protocol (the root-worn one)."""
        return "pelvis" if "pelvis" in self.sensor_ids else "waist"

    # -- channel layout -----------------------------------------------------------

    @property
    def layout(self) -> dict:
        j, k = self.joint_count, self.sensor_count
        if self.family == "secondary":
            return {"loose_ori": (0, 6 * k), "loose_acc": (6 * k, 9 * k)}
        if self.family == "unconditional":
            return {
                "pose": (0, 6 * j),
                "tight": (6 * j, 6 * j + 9 * k),
                "loose": (6 * j + 9 * k, 6 * j + 18 * k),
                "joint_pos": (6 * j + 18 * k, 6 * j + 18 * k + 3 * j),
            }
        return {
            "pose": (0, 6 * j),
            "tight": (6 * j, 6 * j + 9 * k),
            "joint_pos": (6 * j + 9 * k, 9 * j + 9 * k),
        }

    @property
    def output_width(self) -> int:
        return max(stop for _, stop in self.layout.values())

    @property
    def condition_width(self) -> int:
        k = self.sensor_count
        if self.family == "secondary":
            return 9 * k + POSE_QUAT_WIDTH
        if self.family == "unconditional":
            return 18 * k
        return 9 * k + (3 if self.garment_aware else 0)

    @property
    def part_widths(self) -> tuple:
        j, k = self.joint_count, self.sensor_count
        if self.family == "secondary":
            return (6 * k, 3 * k, 9 * k, POSE_QUAT_WIDTH)
        if self.family == "unconditional":
            return (6 * j, 18 * k, 3 * j, 18 * k)
        return (6 * j, 9 * k, 3 * j, self.condition_width)

    def denoiser_config(self) -> DenoiserConfig:
        dims = PROFILES[self.profile]
        return DenoiserConfig(
            window_frames=self.window_frames,
            input_part_widths=self.part_widths,
            condition_width=self.condition_width,
            output_width=self.output_width,
            dropout=self.dropout,
            **dims,
        )

    def split_parts(self, z: torch.Tensor, condition: torch.Tensor) -> list:
        """Slice the noisy stack + condition into the four conv streams."""
        w = self.part_widths
        if self.family == "secondary":
            return [
                z[..., : w[0]],
                z[..., w[0] :],
                condition[..., : w[2]],
                condition[..., w[2] :],
            ]
        return [
            z[..., : w[0]],
            z[..., w[0] : w[0] + w[1]],
            z[..., w[0] + w[1] :],
            condition,
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sensor_ids"] = list(self.sensor_ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["sensor_ids"] = tuple(d.get("sensor_ids", ()))
        return cls(**d)


@dataclass
class PoseModelOutput:
    """Decoded model output: rotations, tight sensors, joint positions.

    pose: (..., J, 6) 6D rotation channels; tight_imu: (..., K, 9) with
    real-unit accelerations; joint_pos: (..., J, 3) root-relative meters;
    loose_imu present only for the inpainting family.
    """

    pose: np.ndarray
    tight_imu: np.ndarray
    joint_pos: np.ndarray
    loose_imu: np.ndarray | None = None

    def __post_init__(self):
        n = self.pose.shape[:-2]
        if self.tight_imu.shape[:-2] != n or self.joint_pos.shape[:-2] != n:
            raise ModelConfigError("output fields must share the frame layout")

    def pose_quats(self, spec: ModelSpec) -> np.ndarray:
        """Local joint quaternions over all 24 joints (identity off-set)."""
        frames = self.pose.shape[:-2]
        quats = np.broadcast_to(rot.identity_quat(), frames + (24, 4)).copy()
        quats[..., list(spec.joint_indices), :] = rot.six_d_to_quat(self.pose)
        return quats


class DiffusionModel:
    """A denoiser bound to its model spec: part splitting + decoding."""

    def __init__(self, spec: ModelSpec, denoiser: Denoiser | None = None):
        self.spec = spec
        self.denoiser = denoiser if denoiser is not None else Denoiser(spec.denoiser_config())

    def denoise(self, z: torch.Tensor, t, condition: torch.Tensor) -> torch.Tensor:
        return self.denoiser(self.spec.split_parts(z, condition), t)

    def denoise_fn(self):
        return lambda z, t, condition: self.denoise(z, t, condition)

    def sample(self, condition: torch.Tensor, schedule, steps, seed: int, step_callback=None) -> torch.Tensor:
        """Draw one x0 estimate for a (batch of) condition window(s)."""
        from .diffusion import p_sample_loop

        was_training = self.denoiser.training
        self.denoiser.eval()
        shape = tuple(condition.shape[:-1]) + (self.spec.output_width,)
        try:
            with torch.no_grad():
                return p_sample_loop(
                    self.denoise_fn(), condition, schedule, steps, seed, shape, step_callback=step_callback
                )
        finally:
            if was_training:
                self.denoiser.train()

    def decode(self, x0: np.ndarray) -> PoseModelOutput:
        """Split a channel stack back into named, de-normalized groups."""
        spec = self.spec
        lay = spec.layout
        if spec.family == "secondary":
            raise ModelConfigError("secondary outputs decode to sensor tracks, use decode_track")
        j, k = spec.joint_count, spec.sensor_count
        pose = x0[..., lay["pose"][0] : lay["pose"][1]].reshape(x0.shape[:-1] + (j, 6))
        tight = x0[..., lay["tight"][0] : lay["tight"][1]].reshape(x0.shape[:-1] + (k, 9)).copy()
        tight[..., 6:] *= spec.accel_scale
        pos = x0[..., lay["joint_pos"][0] : lay["joint_pos"][1]].reshape(x0.shape[:-1] + (j, 3))
        loose = None
        if "loose" in lay:
            loose = x0[..., lay["loose"][0] : lay["loose"][1]].reshape(x0.shape[:-1] + (k, 9)).copy()
            loose[..., 6:] *= spec.accel_scale
        return PoseModelOutput(pose=np.asarray(pose), tight_imu=tight, joint_pos=np.asarray(pos), loose_imu=loose)


# -- signal encoding ---------------------------------------------------------------


def encode_track(track: SensorTrack, accel_scale: float, type_major: bool = False) -> np.ndarray:
    """Sensor channels (F, 9K): per-sensor [6D, acc/scale], or type-major
    [all 6D | all acc] when requested (the secondary x0 layout)."""
    six_d = rot.quat_to_six_d(track.orientation)
    acc = track.acceleration / accel_scale
    f, k = acc.shape[:2]
    if type_major:
        return np.concatenate((six_d.reshape(f, 6 * k), acc.reshape(f, 3 * k)), axis=-1)
    return np.concatenate((six_d, acc), axis=-1).reshape(f, 9 * k)


def decode_track(
    channels: np.ndarray,
    fps: float,
    sensor_ids,
    accel_scale: float,
    type_major: bool = False,
    tightness_tag: str = "loose_generated",
) -> SensorTrack:
    f = channels.shape[0]
    k = len(sensor_ids)
    if type_major:
        six_d = channels[:, : 6 * k].reshape(f, k, 6)
        acc = channels[:, 6 * k :].reshape(f, k, 3)
    else:
        per = channels.reshape(f, k, 9)
        six_d, acc = per[..., :6], per[..., 6:]
    return SensorTrack(
        fps=fps,
        sensor_ids=tuple(sensor_ids),
        acceleration=acc * accel_scale,
        orientation=rot.six_d_to_quat(six_d),
        tightness_tag=tightness_tag,
    )


def encode_pose_6d(pose: PoseSequence, joint_indices) -> np.ndarray:
    q = pose.joint_rotation[:, list(joint_indices), :]
    return rot.quat_to_six_d(q).reshape(pose.frames, -1)


def encode_pose_quat(pose: PoseSequence) -> np.ndarray:
    return pose.joint_rotation.reshape(pose.frames, -1)


def encode_positions(pose: PoseSequence, joint_indices, skeleton: Skeleton | None = None) -> np.ndarray:
    """Root-relative joint positions (F, 3J)."""
    skeleton = skeleton or Skeleton()
    _, gp = forward_kinematics(skeleton, pose.joint_rotation, pose.root_translation)
    rel = gp - gp[:, :1, :]
    return rel[:, list(joint_indices), :].reshape(pose.frames, -1)


def build_target_stack(spec: ModelSpec, pose: PoseSequence, tight: SensorTrack, loose: SensorTrack | None = None) -> np.ndarray:
    """Assemble the clean x0 channel stack for training/evaluation."""
    if spec.family == "secondary":
        if loose is None:
            raise ModelConfigError("secondary targets need the loose track")
        return encode_track(loose, spec.accel_scale, type_major=True)
    parts = [
        encode_pose_6d(pose, spec.joint_indices),
        encode_track(tight, spec.accel_scale),
    ]
    if spec.family == "unconditional":
        if loose is None:
            raise ModelConfigError("unconditional targets need the loose track")
        parts.append(encode_track(loose, spec.accel_scale))
    parts.append(encode_positions(pose, spec.joint_indices))
    return np.concatenate(parts, axis=-1)


def build_condition(
    spec: ModelSpec,
    loose: SensorTrack | None = None,
    tight: SensorTrack | None = None,
    pose: PoseSequence | None = None,
    garment: tuple | None = None,
) -> np.ndarray:
    """Assemble the conditioning stack for the given family."""
    if spec.family == "secondary":
        if tight is None or pose is None:
            raise ModelConfigError("secondary condition needs tight track + pose")
        return np.concatenate(
            (encode_track(tight, spec.accel_scale), encode_pose_quat(pose)), axis=-1
        )
    if spec.family == "unconditional":
        if loose is None:
            raise ModelConfigError("unconditional condition needs the loose track")
        channels = encode_track(loose, spec.accel_scale)
        mask = root_sensor_mask(spec, channels.shape[0])
        return np.concatenate(((1.0 - mask) * channels, mask), axis=-1)
    if loose is None:
        raise ModelConfigError("conditional models condition on the loose track")
    cond = encode_track(loose, spec.accel_scale)
    if spec.garment_aware:
        if garment is None:
            raise ModelConfigError("garment-aware condition needs (gamma, height_cm, bmi)")
        from .imusim import validate_garment_params

        validate_garment_params(*garment)
        triple = np.broadcast_to(np.asarray(garment, dtype=np.float64), (cond.shape[0], 3))
        cond = np.concatenate((cond, triple), axis=-1)
    return cond


def root_sensor_mask(spec: ModelSpec, frames: int) -> np.ndarray:
    """Binary mask (F, 9K) flagging the root-worn sensor's channels."""
    mask = np.zeros((frames, spec.sensor_count, 9), dtype=np.float64)
    mask[:, spec.sensor_ids.index(spec.masked_sensor), :] = 1.0
    return mask.reshape(frames, -1)
