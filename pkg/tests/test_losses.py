import math

import numpy as np
import pytest
import torch

from loosepose.losses import (
    LossConfigError,
    LossWeights,
    ValidationError,
    consistency_condition,
    fk_positions_torch,
    inpaint_mask_apply,
    pose_loss,
    pose_only_ablation_loss,
    secondary_loss,
    split_stack,
    unconditional_loss,
)
from loosepose.models import ModelSpec, root_sensor_mask


def random_stack(spec, frames=6, batch=2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(batch, frames, spec.output_width, generator=gen)


def per_term_loop_oracle(spec, out, tgt):
    """Per-term L1 means computed with explicit python loops."""
    lay = spec.layout
    j = spec.joint_count
    o = out.numpy().reshape(-1, spec.output_width)
    g = tgt.numpy().reshape(-1, spec.output_width)

    def mean_abs(channel_idx):
        total, count = 0.0, 0
        for row_o, row_g in zip(o, g):
            for c in channel_idx:
                total += abs(row_o[c] - row_g[c])
                count += 1
        return total / count

    pose0 = lay["pose"][0]
    pos0 = lay["joint_pos"][0]
    root = spec.root_row
    rows = range(j)
    ext = set(spec.extremity_rows)
    return {
        "root_rotation": mean_abs([pose0 + root * 6 + c for c in range(6)]),
        "joint_rotation": mean_abs([pose0 + r * 6 + c for r in rows if r != root for c in range(6)]),
        "extremity_position": mean_abs([pos0 + r * 3 + c for r in ext for c in range(3)]),
        "joint_position": mean_abs([pos0 + r * 3 + c for r in rows if r not in ext for c in range(3)]),
        "tight_reconstruction": mean_abs(list(range(lay["tight"][0], lay["tight"][1]))),
    }


class TestLossWeights:
    def test_paper_coefficients_are_default(self):
        w = LossWeights()
        assert (w.root_rotation, w.joint_rotation, w.extremity_position,
                w.joint_position, w.tight_reconstruction, w.consistency) == (2, 1, 2, 1, 1, 3)

    def test_unit_terms_sum_to_ten(self):
        # weights applied to unit per-term losses: 2+1+2+1+1+3
        assert sum(LossWeights().as_dict().values()) == 10.0

    def test_negative_rejected(self):
        with pytest.raises(LossConfigError):
            LossWeights(consistency=-1.0)


class TestSecondaryLoss:
    def test_zero_when_equal(self):
        x = torch.randn(3, 4)
        assert secondary_loss(x, x).item() == 0.0

    def test_constant_offset(self):
        x = torch.randn(5, 7)
        assert abs(secondary_loss(x, x + 1.0).item() - 1.0) < 1e-7

    def test_matches_loop_oracle(self):
        gen = torch.Generator().manual_seed(2)
        a = torch.randn(4, 6, generator=gen)
        b = torch.randn(4, 6, generator=gen)
        oracle = sum(abs(a.flatten()[i].item() - b.flatten()[i].item()) for i in range(24)) / 24
        assert abs(secondary_loss(a, b).item() - oracle) < 1e-7


class TestPoseLoss:
    @pytest.mark.parametrize("body", ["upper", "whole"])
    def test_zero_when_equal(self, body):
        spec = ModelSpec(family="conditional", body=body, window_frames=6)
        x = random_stack(spec)
        out = split_stack(spec, x)
        total, breakdown = pose_loss(out, out, out.tight_imu, LossWeights(), (x, x), spec)
        assert total.item() == 0.0
        assert all(v == 0 for v in breakdown.values())

    def test_root_only_offset(self):
        spec = ModelSpec(family="conditional", body="whole", window_frames=4)
        tgt = random_stack(spec, frames=4, batch=1, seed=5)
        pred = tgt.clone()
        delta = 0.37
        lay = spec.layout
        root0 = lay["pose"][0] + spec.root_row * 6
        pred[..., root0 : root0 + 6] += delta
        total, breakdown = pose_loss(
            split_stack(spec, pred), split_stack(spec, tgt),
            split_stack(spec, tgt).tight_imu, LossWeights(), (pred, pred), spec,
        )
        assert abs(breakdown["root_rotation"].item() - delta) < 1e-6
        assert abs(total.item() - 2 * delta) < 1e-6

    @pytest.mark.parametrize("body", ["upper", "whole"])
    def test_matches_per_term_oracle(self, body):
        spec = ModelSpec(family="conditional", body=body, window_frames=5)
        pred = random_stack(spec, frames=5, seed=7)
        tgt = random_stack(spec, frames=5, seed=8)
        out, target = split_stack(spec, pred), split_stack(spec, tgt)
        total, breakdown = pose_loss(out, target, target.tight_imu, LossWeights(), (pred, tgt), spec)
        oracle = per_term_loop_oracle(spec, pred, tgt)
        for name, value in oracle.items():
            assert abs(breakdown[name].item() - value) < 1e-5, name

    def test_total_is_dot_product_of_breakdown(self):
        spec = ModelSpec(family="conditional", body="whole", window_frames=5)
        pred, tgt = random_stack(spec, 5, seed=1), random_stack(spec, 5, seed=2)
        w = LossWeights()
        total, breakdown = pose_loss(
            split_stack(spec, pred), split_stack(spec, tgt),
            split_stack(spec, tgt).tight_imu, w, (pred, tgt), spec,
        )
        dot = sum(w.as_dict()[k] * breakdown[k].item() for k in breakdown)
        assert abs(total.item() - dot) < 1e-6

    def test_consistency_zero_when_pair_equal(self):
        spec = ModelSpec(family="conditional", body="whole", window_frames=4)
        pred, tgt = random_stack(spec, 4, seed=3), random_stack(spec, 4, seed=4)
        _, breakdown = pose_loss(
            split_stack(spec, pred), split_stack(spec, tgt),
            split_stack(spec, tgt).tight_imu, LossWeights(), (pred, pred), spec,
        )
        assert breakdown["consistency"].item() == 0.0

    def test_missing_consistency_pair_rejected(self):
        spec = ModelSpec(family="conditional", body="whole", window_frames=4)
        x = random_stack(spec, 4)
        out = split_stack(spec, x)
        with pytest.raises(LossConfigError):
            pose_loss(out, out, out.tight_imu, LossWeights(), None, spec)

    def test_output_shapes_enforced(self):
        upper = ModelSpec(family="conditional", body="upper")
        whole = ModelSpec(family="conditional", body="whole")
        assert upper.joint_count == 14 and whole.joint_count == 24
        assert upper.condition_width == 36 and whole.condition_width == 54
        aware = ModelSpec(family="conditional", body="upper", garment_aware=True)
        assert aware.condition_width == 39


class TestConsistencyCondition:
    def test_zero_scale_identity(self):
        cond = torch.randn(4, 9)
        assert torch.equal(consistency_condition(cond, 0, scale=0.0), cond)

    def test_noise_std_is_configured_scale(self):
        n = 100_000
        cond = torch.zeros(n)
        noisy = consistency_condition(cond, seed=3, scale=0.3)
        se = 0.3 * math.sqrt(2.0 / (n - 1))
        assert abs(noisy.std(unbiased=True).item() - 0.3) < 3 * se

    def test_same_seed_same_noise(self):
        cond = torch.randn(8, 8)
        assert torch.equal(consistency_condition(cond, 9), consistency_condition(cond, 9))


class TestInpaintMask:
    def test_zero_mask_identity(self):
        x = torch.randn(5, 6)
        assert torch.equal(inpaint_mask_apply(x, torch.zeros_like(x)), x)

    def test_full_mask_zeroes(self):
        x = torch.randn(5, 6)
        assert (inpaint_mask_apply(x, torch.ones_like(x)) == 0).all()

    def test_root_channel_mask(self):
        spec = ModelSpec(family="unconditional", body="whole", window_frames=4)
        frames = 4
        mask = torch.from_numpy(root_sensor_mask(spec, frames)).float()
        x = torch.randn(frames, mask.shape[1])
        masked = inpaint_mask_apply(x, mask)
        root = spec.sensor_ids.index(spec.masked_sensor)
        cols = list(range(root * 9, root * 9 + 9))
        other = [c for c in range(mask.shape[1]) if c not in cols]
        assert (masked[:, cols] == 0).all()
        assert torch.equal(masked[:, other], x[:, other])

    def test_non_binary_mask_rejected(self):
        x = torch.randn(3, 3)
        with pytest.raises(ValidationError):
            inpaint_mask_apply(x, torch.full_like(x, 0.5))


class TestUnconditionalLoss:
    def test_zero_when_equal(self):
        spec = ModelSpec(family="unconditional", body="whole", window_frames=4)
        x = random_stack(spec, 4)
        out = split_stack(spec, x)
        mask = torch.from_numpy(root_sensor_mask(spec, 4)).float().expand(2, 4, -1)
        total, breakdown = unconditional_loss(out, out, out.tight_imu, mask, LossWeights(), (x, x), spec)
        assert total.item() == 0.0
        assert breakdown["loose_reconstruction"].item() == 0.0

    def test_loose_term_only_counts_masked_channels(self):
        spec = ModelSpec(family="unconditional", body="whole", window_frames=4)
        tgt = random_stack(spec, 4, batch=1, seed=6)
        pred = tgt.clone()
        lay = spec.layout
        root = spec.sensor_ids.index(spec.masked_sensor)
        start = lay["loose"][0] + root * 9
        pred[..., start : start + 9] += 0.5          # masked channels
        pred[..., lay["loose"][0] : lay["loose"][0] + 1] += 100.0  # unmasked loose channel
        mask = torch.from_numpy(root_sensor_mask(spec, 4)).float().expand(1, 4, -1)
        _, breakdown = unconditional_loss(
            split_stack(spec, pred), split_stack(spec, tgt),
            split_stack(spec, tgt).tight_imu, mask, LossWeights(), (pred, pred), spec,
        )
        assert abs(breakdown["loose_reconstruction"].item() - 0.5) < 1e-6


class TestPoseOnlyAblation:
    def test_constant_sequence_all_difference_terms_zero(self):
        pose = torch.randn(1, 1, 24, 6).expand(1, 16, 24, 6).clone()
        total, breakdown = pose_only_ablation_loss(pose, pose + 0.0)
        assert total.item() == 0.0

    def test_linear_sequence_kills_higher_orders(self):
        t = torch.arange(16, dtype=torch.float32).view(1, 16, 1, 1)
        tgt = torch.zeros(1, 16, 24, 6)
        pred = 0.01 * t.expand(1, 16, 24, 6)
        _, breakdown = pose_only_ablation_loss(pred, tgt, position_velocity_weight=0.0)
        for name, term in breakdown.items():
            if name.startswith("pose_d1"):
                assert term.item() > 0
            if name.startswith(("pose_d2", "pose_d3")):
                assert term.item() < 1e-6

    def test_matches_loop_oracle(self):
        gen = torch.Generator().manual_seed(4)
        pred = torch.randn(1, 16, 24, 6, generator=gen)
        tgt = torch.randn(1, 16, 24, 6, generator=gen)
        _, breakdown = pose_only_ablation_loss(pred, tgt, position_velocity_weight=0.0)
        p, g = pred[0].numpy(), tgt[0].numpy()
        for order in (1, 2, 3):
            for gap in (1, 3, 5):
                if order * gap + 1 > 16:
                    continue
                dp, dg = p.copy(), g.copy()
                for _ in range(order):
                    dp = dp[gap:] - dp[:-gap]
                    dg = dg[gap:] - dg[:-gap]
                oracle = np.abs(dp - dg).mean()
                assert abs(breakdown[f"pose_d{order}_g{gap}"].item() - oracle) < 1e-6

    def test_reduces_to_plain_l1_when_weights_zeroed(self):
        gen = torch.Generator().manual_seed(5)
        pred = torch.randn(1, 12, 24, 6, generator=gen)
        tgt = torch.randn(1, 12, 24, 6, generator=gen)
        total, _ = pose_only_ablation_loss(
            pred, tgt, diff_weights=(0.0, 0.0, 0.0), position_velocity_weight=0.0
        )
        assert abs(total.item() - (pred - tgt).abs().mean().item()) < 1e-7

    def test_rejects_short_sequences(self):
        pose = torch.zeros(1, 10, 24, 6)
        with pytest.raises(ValidationError):
            pose_only_ablation_loss(pose, pose)

    def test_position_terms_come_from_fk(self):
        # zero difference weights but positive position weight: only the
        # FK velocity terms remain beyond plain pose L1
        gen = torch.Generator().manual_seed(6)
        pred = torch.randn(1, 12, 24, 6, generator=gen)
        tgt = pred.clone()
        total, breakdown = pose_only_ablation_loss(pred, tgt)
        assert total.item() == 0.0

    def test_fk_positions_match_numpy_fk(self):
        from loosepose import rotations as rot
        from loosepose.skeleton import Skeleton, forward_kinematics

        rng = np.random.default_rng(8)
        quats = rot.random_quat(rng, (3, 24))
        six_d = rot.quat_to_six_d(quats)
        torch_pos = fk_positions_torch(torch.from_numpy(six_d), tuple(range(24))).numpy()
        _, np_pos = forward_kinematics(Skeleton(), quats, np.zeros((3, 3)))
        np_rel = np_pos - np_pos[:, :1]
        assert np.abs(torch_pos - np_rel).max() < 1e-6
