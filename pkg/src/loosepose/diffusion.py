"""DDPM core: noise schedule, forward corruption, reverse sampling.

Throughout this package ``alpha_t`` is the cumulative signal coefficient:
the forward process is a single Gaussian jump

    q(z_t | x_0) = N(z_t; sqrt(alpha_t) x_0, (1 - alpha_t) I)

with alpha_0 = 1 (no corruption) and alpha_T ~ 0 (pure noise). The reverse
loop is parameterized by the denoiser's clean-signal estimate x0_hat: at
each transition t -> s the next latent is drawn from the forward-process
posterior q(z_s | z_t, x0) with x0_hat substituted for x0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class StepError(ValueError):
    """Diffusion step index outside [0, T]."""


class ScheduleConfigError(ValueError):
    """Invalid schedule construction or sampling step list."""


# Keeps alpha strictly positive so posterior ratios stay finite.
_ALPHA_FLOOR = 1e-8


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients alpha_t for t = 0..T."""

    T: int
    kind: str
    alpha: np.ndarray
    sqrt_alpha: np.ndarray
    sqrt_one_minus_alpha: np.ndarray

    def alpha_at(self, t):
        return self.alpha[np.asarray(t)]

    def torch_coeffs(self, dtype=torch.float32):
        return (
            torch.from_numpy(self.sqrt_alpha).to(dtype),
            torch.from_numpy(self.sqrt_one_minus_alpha).to(dtype),
        )


def make_schedule(T: int, kind: str = "cosine") -> NoiseSchedule:
    """Build a schedule with T corruption steps (arrays have length T+1)."""
    if T < 2:
        raise ScheduleConfigError(f"schedule needs T >= 2, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    if kind == "cosine":
        s = 0.008
        f = np.cos((t / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
        alpha = f / f[0]
    elif kind == "linear":
        beta = np.linspace(1e-4, 0.02, T, dtype=np.float64)
        alpha = np.concatenate(([1.0], np.cumprod(1.0 - beta)))
    else:
        raise ScheduleConfigError(f"unknown schedule kind {kind!r}")
    alpha = np.clip(alpha, _ALPHA_FLOOR, 1.0)
    alpha[0] = 1.0
    # Clipping never breaks monotonicity, but guard against formula edits.
    if np.any(np.diff(alpha) > 0.0):
        raise ScheduleConfigError("alpha must be non-increasing")
    return NoiseSchedule(
        T=T,
        kind=kind,
        alpha=alpha,
        sqrt_alpha=np.sqrt(alpha),
        sqrt_one_minus_alpha=np.sqrt(1.0 - alpha),
    )


@dataclass
class DiffusionBatch:
    """One corrupted training batch; z_t is reconstructable from the rest."""

    x0: torch.Tensor
    z_t: torch.Tensor
    t: torch.Tensor
    noise: torch.Tensor


def _gather(coeff: torch.Tensor, t: torch.Tensor, ndim: int) -> torch.Tensor:
    out = coeff[t]
    while out.dim() < ndim:
        out = out.unsqueeze(-1)
    return out


def q_sample(x0: torch.Tensor, t, noise: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Corrupt x0 to step t: sqrt(alpha_t) x0 + sqrt(1 - alpha_t) noise."""
    if isinstance(t, int):
        t = torch.tensor([t])
    t = torch.as_tensor(t, dtype=torch.long)
    if t.min() < 0 or t.max() > schedule.T:
        raise StepError(f"t must lie in [0, {schedule.T}]")
    if noise.shape != x0.shape:
        raise ValueError("noise must match x0 shape")
    sqrt_a, sqrt_1ma = schedule.torch_coeffs(x0.dtype)
    if t.numel() == 1:
        return sqrt_a[t].item() * x0 + sqrt_1ma[t].item() * noise
    return _gather(sqrt_a, t, x0.dim()) * x0 + _gather(sqrt_1ma, t, x0.dim()) * noise


def make_diffusion_batch(x0: torch.Tensor, t, schedule: NoiseSchedule, generator: torch.Generator) -> DiffusionBatch:
    noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    t = torch.as_tensor(t, dtype=torch.long)
    return DiffusionBatch(x0=x0, z_t=q_sample(x0, t, noise, schedule), t=t, noise=noise)


def default_step_list(schedule: NoiseSchedule, num_steps: int) -> list:
    """Evenly strided descending step list from T down to 0."""
    if num_steps < 1:
        raise ScheduleConfigError("need at least one sampling step")
    steps = np.unique(np.linspace(0, schedule.T, num_steps + 1).round().astype(int))
    return list(steps[::-1])


def p_sample_loop(
    denoiser_fn,
    condition,
    schedule: NoiseSchedule,
    steps,
    seed: int,
    shape,
    dtype=torch.float32,
    step_callback=None,
) -> torch.Tensor:
    """Reverse-process sampling; returns the final clean-signal estimate.

    denoiser_fn maps (z_t, t, condition) -> x0_hat with z_t of ``shape``.
    ``steps`` must be strictly descending within [T..0]. Noise is injected
    on every transition except the final one; the run is deterministic for
    a fixed seed. ``step_callback(t, x0_hat)``, when given, observes every
    (possibly externally clamped) estimate; its return value, if not None,
    replaces x0_hat — this is the hook streaming inference uses to pin
    committed history.
    """
    steps = [int(s) for s in steps]
    if len(steps) < 1:
        raise ScheduleConfigError("empty sampling step list")
    if any(b >= a for a, b in zip(steps, steps[1:])):
        raise ScheduleConfigError(f"sampling steps must be strictly descending, got {steps}")
    if steps[0] > schedule.T or steps[-1] < 0:
        raise ScheduleConfigError("sampling steps must lie within [0, T]")

    gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    z = torch.randn(tuple(shape), generator=gen, dtype=dtype)
    alpha = schedule.alpha

    x0_hat = None
    for i, t in enumerate(steps):
        x0_hat = denoiser_fn(z, t, condition)
        if step_callback is not None:
            replaced = step_callback(t, x0_hat)
            if replaced is not None:
                x0_hat = replaced
        if i == len(steps) - 1:
            break
        s = steps[i + 1]
        a_t, a_s = alpha[t], alpha[s]
        ratio = a_t / a_s
        denom = 1.0 - a_t
        coef_x0 = float(np.sqrt(a_s) * (1.0 - ratio) / denom)
        coef_z = float(np.sqrt(ratio) * (1.0 - a_s) / denom)
        var = float((1.0 - a_s) * (1.0 - ratio) / denom)
        z = coef_x0 * x0_hat + coef_z * z
        if i + 1 < len(steps) - 1 and var > 0.0:
            z = z + np.sqrt(var) * torch.randn(z.shape, generator=gen, dtype=dtype)
    return x0_hat
