"""Training objectives for the three model families.

Every term is a plain L1 mean over its own channel subset, so the total
loss is exactly the dot product of the weight vector with the per-term
breakdown. The default coefficients are (2, 1, 2, 1, 1, 3) for root
rotation, remaining rotations, extremity positions, remaining positions,
tight-sensor reconstruction, and consistency regularization; the
consistency term compares predictions under the clean condition against
predictions under the same condition perturbed by Gaussian noise scaled
by 0.3, at the same diffusion step and latent.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .models import ModelSpec, PoseModelOutput
from .skeleton import PARENT_INDEX, Skeleton


class LossConfigError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    root_rotation: float = 2.0
    joint_rotation: float = 1.0
    extremity_position: float = 2.0
    joint_position: float = 1.0
    tight_reconstruction: float = 1.0
    consistency: float = 3.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise LossConfigError(f"{f.name} must be non-negative")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def secondary_loss(c_l_true: torch.Tensor, c_l_pred: torch.Tensor) -> torch.Tensor:
    """Reconstruction objective of the loose-wear generator: mean |err|."""
    return _l1(c_l_true, c_l_pred)


def split_stack(spec: ModelSpec, stack: torch.Tensor) -> PoseModelOutput:
    """View a raw x0 channel stack as structured (normalized) groups."""
    lay = spec.layout
    j, k = spec.joint_count, spec.sensor_count
    out = PoseModelOutput(
        pose=stack[..., lay["pose"][0] : lay["pose"][1]].reshape(stack.shape[:-1] + (j, 6)),
        tight_imu=stack[..., lay["tight"][0] : lay["tight"][1]].reshape(stack.shape[:-1] + (k, 9)),
        joint_pos=stack[..., lay["joint_pos"][0] : lay["joint_pos"][1]].reshape(stack.shape[:-1] + (j, 3)),
    )
    if "loose" in lay:
        out.loose_imu = stack[..., lay["loose"][0] : lay["loose"][1]].reshape(stack.shape[:-1] + (k, 9))
    return out


def pose_loss(
    output: PoseModelOutput,
    target: PoseModelOutput,
    tight_target: torch.Tensor,
    weights: LossWeights,
    consistency_pair=None,
    spec: ModelSpec | None = None,
):
    """Composite objective of the conditional pose models.

    Returns (total, breakdown). ``consistency_pair`` is the model's full
    output stack under the clean and the noise-perturbed condition;
    required whenever the consistency weight is positive.
    """
    if spec is None:
        raise LossConfigError("pose_loss needs the model spec for joint bookkeeping")
    if weights.consistency > 0 and consistency_pair is None:
        raise LossConfigError("consistency weight is positive but no consistency_pair given")

    root = spec.root_row
    other_rows = [i for i in range(spec.joint_count) if i != root]
    extremity = list(spec.extremity_rows)
    interior = [i for i in range(spec.joint_count) if i not in spec.extremity_rows]

    breakdown = {
        "root_rotation": _l1(output.pose[..., root, :], target.pose[..., root, :]),
        "joint_rotation": _l1(output.pose[..., other_rows, :], target.pose[..., other_rows, :]),
        "extremity_position": _l1(output.joint_pos[..., extremity, :], target.joint_pos[..., extremity, :]),
        "joint_position": _l1(output.joint_pos[..., interior, :], target.joint_pos[..., interior, :]),
        "tight_reconstruction": _l1(output.tight_imu, tight_target),
    }
    if consistency_pair is not None:
        breakdown["consistency"] = _l1(consistency_pair[0], consistency_pair[1])
    else:
        breakdown["consistency"] = torch.zeros(())

    w = weights.as_dict()
    total = sum(w[name] * term for name, term in breakdown.items())
    return total, breakdown


def unconditional_loss(
    output: PoseModelOutput,
    target: PoseModelOutput,
    tight_target: torch.Tensor,
    mask: torch.Tensor,
    weights: LossWeights,
    consistency_pair=None,
    spec: ModelSpec | None = None,
    loose_weight: float = 1.0,
):
    """Inpainting objective: whole-body terms plus masked loose recovery."""
    if output.loose_imu is None or target.loose_imu is None:
        raise LossConfigError("unconditional loss needs loose channels in both stacks")
    total, breakdown = pose_loss(output, target, tight_target, weights, consistency_pair, spec)
    m = mask.reshape(output.loose_imu.shape)
    masked = m.sum()
    if masked == 0:
        loose_term = torch.zeros(())
    else:
        loose_term = ((output.loose_imu - target.loose_imu).abs() * m).sum() / masked
    breakdown["loose_reconstruction"] = loose_term
    return total + loose_weight * loose_term, breakdown


def add_condition_noise(condition: torch.Tensor, scale: float, generator: torch.Generator) -> torch.Tensor:
    if scale == 0.0:
        return condition
    noise = torch.randn(condition.shape, generator=generator, dtype=condition.dtype)
    return condition + scale * noise


def consistency_condition(condition: torch.Tensor, seed: int, scale: float = 0.3) -> torch.Tensor:
    """Perturbed copy of the condition used by the consistency term."""
    gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    return add_condition_noise(condition, scale, gen)


def inpaint_mask_apply(x0, mask):
    """Zero the channels flagged by the binary mask: (1 - mask) * x0."""
    binary = (mask == 0) | (mask == 1)
    ok = binary.all() if not torch.is_tensor(binary) else bool(binary.all())
    if not ok:
        raise ValidationError("mask must be binary (elements in {0, 1})")
    return (1 - mask) * x0


# -- pose-only ablation --------------------------------------------------------------


def six_d_to_matrix_torch(r6: torch.Tensor) -> torch.Tensor:
    a1, a2 = r6[..., :3], r6[..., 3:]
    b1 = F.normalize(a1, dim=-1)
    b2 = F.normalize(a2 - (b1 * a2).sum(-1, keepdim=True) * b1, dim=-1)
    b3 = torch.linalg.cross(b1, b2)
    return torch.stack((b1, b2, b3), dim=-1)


def fk_positions_torch(pose_6d: torch.Tensor, joint_indices) -> torch.Tensor:
    """Differentiable root-relative joint positions from 6D pose channels.

    Joints outside ``joint_indices`` are held at identity; the returned
    tensor covers those indices only, shape (..., J, 3).
    """
    skeleton = Skeleton()
    offsets = torch.tensor(skeleton.rest_offset, dtype=pose_6d.dtype)
    rows = {j: i for i, j in enumerate(joint_indices)}
    sub = six_d_to_matrix_torch(pose_6d)
    eye = torch.eye(3, dtype=pose_6d.dtype).expand(pose_6d.shape[:-2] + (3, 3))

    glob_r, glob_p = [], []
    for j in range(24):
        local = sub[..., rows[j], :, :] if j in rows else eye
        if j == 0:
            glob_r.append(local)
            glob_p.append(torch.zeros(pose_6d.shape[:-2] + (3,), dtype=pose_6d.dtype))
            continue
        p = PARENT_INDEX[j]
        glob_r.append(glob_r[p] @ local)
        glob_p.append(glob_p[p] + (glob_r[p] @ offsets[j]))
    pos = torch.stack(glob_p, dim=-2)
    return pos[..., list(joint_indices), :]


def _strided_difference(x: torch.Tensor, order: int, gap: int) -> torch.Tensor:
    for _ in range(order):
        x = x[..., gap:, :, :] - x[..., :-gap, :, :]
    return x


def pose_only_ablation_loss(
    output_pose: torch.Tensor,
    target_pose: torch.Tensor,
    joint_indices=tuple(range(24)),
    gaps=(1, 3, 5),
    diff_weights=(1.0, 1.0, 1.0),
    position_velocity_weight: float = 1.0,
):
    """Smoothness-regularized objective for models that output pose only.

    Adds L1 penalties on strided finite differences of the pose channels
    (orders 1/2/3 = velocity/acceleration/jerk, strides ``gaps``) and on
    first differences of the forward-kinematics joint positions at the
    same strides. An order-k stride-g difference needs k*g+1 frames;
    combinations that do not fit the window are skipped, so at the
    11-frame minimum everything except the order-3/stride-5 term is
    active. Zeroing all difference weights reduces this to plain pose L1.
    """
    frames = output_pose.shape[-3]
    if frames < 11:
        raise ValidationError(f"pose-only ablation loss needs >= 11 frames, got {frames}")
    if output_pose.shape != target_pose.shape:
        raise ValidationError("output and target pose shapes must match")

    breakdown = {"pose": _l1(output_pose, target_pose)}
    total = breakdown["pose"]

    need_positions = position_velocity_weight > 0
    if need_positions:
        pos_out = fk_positions_torch(output_pose, joint_indices)
        pos_tgt = fk_positions_torch(target_pose, joint_indices)

    for order, w in zip((1, 2, 3), diff_weights):
        for gap in gaps:
            if order * gap + 1 > frames or w == 0.0:
                continue
            term = _l1(
                _strided_difference(output_pose, order, gap),
                _strided_difference(target_pose, order, gap),
            )
            breakdown[f"pose_d{order}_g{gap}"] = term
            total = total + w * term
    if need_positions:
        for gap in gaps:
            if gap + 1 > frames:
                continue
            term = _l1(
                _strided_difference(pos_out, 1, gap),
                _strided_difference(pos_tgt, 1, gap),
            )
            breakdown[f"position_d1_g{gap}"] = term
            total = total + position_velocity_weight * term
    return total, breakdown
