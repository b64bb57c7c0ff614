"""DDPM training loop shared by all model families.

One loop covers the secondary generator, the conditional pose estimators
and the inpainting model: sample a window batch and a uniform step t,
corrupt the clean target stack, denoise, apply the family's objective,
and take a clipped Adam step. Identical (spec, data, config, seed) runs
produce identical loss curves on a single device. A NaN loss aborts
immediately and dumps the offending batch next to the checkpoint.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .container import atomic_write_bytes, config_hash
from .denoiser import load_checkpoint, save_checkpoint
from .diffusion import NoiseSchedule, make_schedule, q_sample
from .losses import (
    LossWeights,
    add_condition_noise,
    pose_loss,
    secondary_loss,
    split_stack,
    unconditional_loss,
)
from .models import DiffusionModel, ModelSpec


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    steps: int = 2000
    grad_clip: float = 1.0
    lr_decay: str = "cosine"           # "cosine" to 1% of base, or "constant"
    checkpoint_every: int = 0          # 0 = final checkpoint only
    log_every: int = 50
    sensor_dropout_prob: float = 0.0   # chance a sample loses one random sensor
    loose_weight: float = 1.0          # masked-reconstruction weight (inpainting)

    def lr_at(self, step: int) -> float:
        if self.lr_decay == "constant" or self.steps <= 1:
            return self.learning_rate
        frac = step / max(self.steps - 1, 1)
        return self.learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * frac)))


class WindowSet:
    """Fixed-length training windows sliced lazily out of full sequences."""

    def __init__(self, window_frames: int):
        self.window_frames = window_frames
        self._sequences = []   # (condition (F, Wc) f32, target (F, Wt) f32)
        self._index = []       # (sequence_id, start_frame)

    def add_sequence(self, condition: np.ndarray, target: np.ndarray, stride: int | None = None):
        if condition.shape[0] != target.shape[0]:
            raise ValueError("condition and target must be frame-aligned")
        n = self.window_frames
        if condition.shape[0] < n:
            return
        stride = stride or n
        sid = len(self._sequences)
        self._sequences.append(
            (np.ascontiguousarray(condition, dtype=np.float32), np.ascontiguousarray(target, dtype=np.float32))
        )
        for start in range(0, condition.shape[0] - n + 1, stride):
            self._index.append((sid, start))

    def __len__(self) -> int:
        return len(self._index)

    def get_batch(self, indices) -> tuple:
        n = self.window_frames
        conds, targets = [], []
        for i in indices:
            sid, start = self._index[int(i)]
            c, t = self._sequences[sid]
            conds.append(c[start : start + n])
            targets.append(t[start : start + n])
        return (
            torch.from_numpy(np.stack(conds)),
            torch.from_numpy(np.stack(targets)),
        )

    @property
    def condition_width(self) -> int:
        return self._sequences[0][0].shape[1]

    @property
    def target_width(self) -> int:
        return self._sequences[0][1].shape[1]


def _apply_sensor_dropout(cond: torch.Tensor, spec: ModelSpec, prob: float, gen: torch.Generator) -> torch.Tensor:
    """Zero one random sensor's 9 channels on a random subset of samples."""
    if prob <= 0.0 or spec.family != "conditional":
        return cond
    b = cond.shape[0]
    hit = torch.rand(b, generator=gen) < prob
    if not hit.any():
        return cond
    cond = cond.clone()
    which = torch.randint(spec.sensor_count, (b,), generator=gen)
    for i in torch.nonzero(hit).flatten().tolist():
        s = int(which[i]) * 9
        cond[i, :, s : s + 9] = 0.0
    return cond


def _family_loss(spec, weights, x0_hat, x0, cond, x0_hat_noisy, opt_cfg):
    if spec.family == "secondary":
        total = secondary_loss(x0, x0_hat)
        return total, {"reconstruction": total}
    out = split_stack(spec, x0_hat)
    tgt = split_stack(spec, x0)
    pair = (x0_hat, x0_hat_noisy) if x0_hat_noisy is not None else None
    if spec.family == "unconditional":
        mask = cond[..., 9 * spec.sensor_count :]
        return unconditional_loss(
            out, tgt, tgt.tight_imu, mask, weights, pair, spec, loose_weight=opt_cfg.loose_weight
        )
    return pose_loss(out, tgt, tgt.tight_imu, weights, pair, spec)


def _dump_diagnostics(path, step, cond, x0, t, breakdown):
    payload = {
        "step": int(step),
        "t": t.tolist(),
        "terms": {k: float(v.detach() if torch.is_tensor(v) else v) for k, v in breakdown.items()},
        "condition_stats": [float(cond.min()), float(cond.max())],
        "target_stats": [float(x0.min()), float(x0.max())],
    }
    np.savez(path + ".npz", condition=cond.numpy(), target=x0.numpy(), t=t.numpy())
    atomic_write_bytes(path + ".json", json.dumps(payload, indent=2).encode())


def train(
    spec: ModelSpec,
    windows: WindowSet,
    optimizer_config: OptimizerConfig,
    schedule: NoiseSchedule | None = None,
    seed: int = 0,
    checkpoint_path: str = "model.ckpt",
    loss_curve_path: str | None = None,
    weights: LossWeights | None = None,
    resume_from: str | None = None,
):
    """Run the loop; returns (checkpoint_path, loss curve rows).

    Curve rows are dicts with ``step``, ``total`` and one column per loss
    term; they are also written as CSV when ``loss_curve_path`` is given.
    """
    if len(windows) == 0:
        raise ValueError("empty window set")
    if windows.window_frames != spec.window_frames:
        raise ValueError("window set length must match the model spec")
    schedule = schedule or make_schedule(1000, "cosine")
    weights = weights or LossWeights()
    run_hash = config_hash(
        {"spec": spec.to_dict(), "opt": asdict(optimizer_config), "schedule": [schedule.T, schedule.kind], "seed": seed}
    )

    torch.manual_seed(seed)
    model = DiffusionModel(spec)
    start_step = 0
    opt = torch.optim.Adam(model.denoiser.parameters(), lr=optimizer_config.learning_rate)
    if resume_from:
        loaded, meta, extra = load_checkpoint(resume_from)
        model = DiffusionModel(ModelSpec.from_dict(meta["spec"]), loaded)
        model.denoiser.train()
        opt = torch.optim.Adam(model.denoiser.parameters(), lr=optimizer_config.learning_rate)
        start_step = int(meta.get("step", 0))
        _restore_optimizer(opt, extra)

    gen = torch.Generator().manual_seed(seed)
    model.denoiser.train()

    metadata = {
        "spec": spec.to_dict(),
        "schedule": {"T": schedule.T, "kind": schedule.kind},
        "seed": seed,
        "config_hash": run_hash,
        "loss_weights": weights.as_dict(),
    }

    curve = []
    t_start = time.time()
    for step in range(start_step, optimizer_config.steps):
        for group in opt.param_groups:
            group["lr"] = optimizer_config.lr_at(step)
        idx = torch.randint(len(windows), (optimizer_config.batch_size,), generator=gen)
        cond, x0 = windows.get_batch(idx)
        cond = _apply_sensor_dropout(cond, spec, optimizer_config.sensor_dropout_prob, gen)

        t = torch.randint(1, schedule.T + 1, (cond.shape[0],), generator=gen)
        noise = torch.randn(x0.shape, generator=gen)
        z = q_sample(x0, t, noise, schedule)

        x0_hat = model.denoise(z, t, cond)
        x0_hat_noisy = None
        if spec.family != "secondary" and weights.consistency > 0:
            sensors = 9 * spec.sensor_count
            noisy_cond = cond.clone()
            noisy_cond[..., :sensors] = add_condition_noise(
                cond[..., :sensors], spec.consistency_noise, gen
            )
            x0_hat_noisy = model.denoise(z, t, noisy_cond)

        total, breakdown = _family_loss(spec, weights, x0_hat, x0, cond, x0_hat_noisy, optimizer_config)
        if not torch.isfinite(total):
            dump = checkpoint_path + f".diverged-step{step}"
            _dump_diagnostics(dump, step, cond, x0, t, breakdown)
            raise TrainingDivergedError(f"non-finite loss at step {step}; batch dumped to {dump}.npz")

        opt.zero_grad()
        total.backward()
        if optimizer_config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.denoiser.parameters(), optimizer_config.grad_clip)
        opt.step()

        row = {"step": step, "total": float(total.detach())}
        row.update({k: float(v.detach() if torch.is_tensor(v) else v) for k, v in breakdown.items()})
        curve.append(row)

        if optimizer_config.checkpoint_every and (step + 1) % optimizer_config.checkpoint_every == 0:
            metadata["step"] = step + 1
            save_checkpoint(checkpoint_path, model.denoiser, metadata, _optimizer_tensors(opt))

    metadata["step"] = optimizer_config.steps
    metadata["wall_seconds"] = time.time() - t_start
    model.denoiser.eval()
    save_checkpoint(checkpoint_path, model.denoiser, metadata, _optimizer_tensors(opt))

    if loss_curve_path:
        write_loss_curve(loss_curve_path, curve)
    return checkpoint_path, curve


def write_loss_curve(path: str, curve):
    if not curve:
        return
    columns = list(curve[0].keys())
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(curve)


def _optimizer_tensors(opt) -> dict:
    out = {}
    for i, (p, state) in enumerate(opt.state.items()):
        out[f"opt.{i}.exp_avg"] = state["exp_avg"]
        out[f"opt.{i}.exp_avg_sq"] = state["exp_avg_sq"]
        out[f"opt.{i}.step"] = state["step"].reshape(1)
    return out


def _restore_optimizer(opt, extra: dict):
    if not extra:
        return
    params = [p for g in opt.param_groups for p in g["params"]]
    for i, p in enumerate(params):
        key = f"opt.{i}.exp_avg"
        if key not in extra:
            continue
        opt.state[p] = {
            "step": extra[f"opt.{i}.step"].reshape(()),
            "exp_avg": extra[key].reshape(p.shape),
            "exp_avg_sq": extra[f"opt.{i}.exp_avg_sq"].reshape(p.shape),
        }


def load_model(checkpoint_path: str):
    """Rebuild (DiffusionModel, schedule, metadata) from a checkpoint."""
    denoiser, metadata, _ = load_checkpoint(checkpoint_path)
    spec = ModelSpec.from_dict(metadata["spec"])
    schedule = make_schedule(metadata["schedule"]["T"], metadata["schedule"]["kind"])
    return DiffusionModel(spec, denoiser), schedule, metadata
