"""Frame-by-frame streaming inference with past-prediction fixing.

Each incoming sensor frame advances an N-frame sliding window by one. The
diffusion sampler re-solves the whole window, but at every denoising step
the first N-1 output frames are clamped to the already-committed
predictions, so only the newest frame is free; the committed frame is
returned and becomes immutable. During warm-up (fewer than N frames seen)
the condition window and the history are left-padded by repeating their
earliest entries.

Offline (whole-clip) prediction runs the same per-window sampler without
clamping and stitches 50%-overlap windows with a linear crossfade.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from .diffusion import NoiseSchedule, default_step_list
from .models import DiffusionModel, PoseModelOutput


class StreamConfigError(ValueError):
    pass


def step_seed(base_seed: int, frame_index: int) -> int:
    """Per-frame sampler seed; stable across runs and platforms."""
    return (int(base_seed) * 1000003 + int(frame_index)) & 0x7FFFFFFFFFFFFFFF


def window_predict(
    model: DiffusionModel,
    schedule: NoiseSchedule,
    condition: np.ndarray,
    steps,
    seed: int,
    step_callback=None,
) -> np.ndarray:
    """One sampler run over a single condition window -> (N, out_width).

    This is the code path shared by streaming (with history clamping via
    ``step_callback``) and offline prediction (without).
    """
    cond = torch.from_numpy(np.ascontiguousarray(condition, dtype=np.float32)).unsqueeze(0)
    x0 = model.sample(cond, schedule, steps, seed, step_callback=step_callback)
    return x0.squeeze(0).numpy()


@dataclass
class StreamState:
    """Mutable per-stream state; one instance per sensor stream."""

    model: DiffusionModel
    schedule: NoiseSchedule
    sampler_steps: list
    seed: int = 0
    clamp_history: bool = True
    history_blend: float = 1.0        # 1 = hard clamp, <1 = soft blend toward history
    condition_buffer: deque = field(init=False)
    history_buffer: deque = field(init=False)
    frames_seen: int = 0
    latency_ms: list = field(default_factory=list)

    def __post_init__(self):
        n = self.model.spec.window_frames
        self.condition_buffer = deque(maxlen=n)
        self.history_buffer = deque(maxlen=n - 1)

    @property
    def window_frames(self) -> int:
        return self.model.spec.window_frames


def stream_state(checkpoint_path: str, sampler_steps: int = 5, seed: int = 0, clamp_history: bool = True) -> StreamState:
    from .training import load_model

    model, schedule, _ = load_model(checkpoint_path)
    return StreamState(
        model=model,
        schedule=schedule,
        sampler_steps=default_step_list(schedule, sampler_steps),
        seed=seed,
        clamp_history=clamp_history,
    )


def _padded(buffer, n: int) -> np.ndarray:
    """Left-pad a short buffer by repeating its earliest entry."""
    items = list(buffer)
    pad = [items[0]] * (n - len(items))
    return np.stack(pad + items)


def stream_step(state: StreamState, new_frame: np.ndarray) -> PoseModelOutput:
    """Ingest one condition frame, return the committed new prediction."""
    spec = state.model.spec
    new_frame = np.asarray(new_frame, dtype=np.float32)
    if new_frame.shape != (spec.condition_width,):
        raise StreamConfigError(
            f"expected a condition frame of width {spec.condition_width}, got {new_frame.shape}"
        )
    started = time.perf_counter()
    state.condition_buffer.append(new_frame)
    n = state.window_frames
    cond = _padded(state.condition_buffer, n)

    callback = None
    if state.clamp_history and state.history_buffer:
        history = torch.from_numpy(_padded(state.history_buffer, n - 1))
        blend = float(state.history_blend)

        def callback(t, x0_hat):
            clamped = x0_hat.clone()
            if blend >= 1.0:
                clamped[:, : n - 1, :] = history
            else:
                clamped[:, : n - 1, :] = blend * history + (1.0 - blend) * clamped[:, : n - 1, :]
            return clamped

    raw = window_predict(
        state.model,
        state.schedule,
        cond,
        state.sampler_steps,
        step_seed(state.seed, state.frames_seen),
        step_callback=callback,
    )
    newest = raw[-1].copy()
    state.history_buffer.append(newest)
    state.frames_seen += 1
    state.latency_ms.append((time.perf_counter() - started) * 1e3)
    return state.model.decode(newest[None, :])


def latency_profile(state: StreamState, clip: np.ndarray) -> dict:
    """Replay a clip through stream_step; wall-time stats in ms."""
    per_frame = []
    for frame in np.asarray(clip, dtype=np.float32):
        before = len(state.latency_ms)
        stream_step(state, frame)
        per_frame.extend(state.latency_ms[before:])
    if not per_frame:
        return {"frames": 0, "p50_ms": None, "p95_ms": None, "max_ms": None, "per_frame_ms": []}
    arr = np.asarray(per_frame)
    return {
        "frames": len(per_frame),
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
        "max_ms": float(arr.max()),
        "per_frame_ms": per_frame,
    }


def predict_offline(
    model: DiffusionModel,
    schedule: NoiseSchedule,
    condition: np.ndarray,
    steps,
    seed: int = 0,
) -> np.ndarray:
    """Whole-clip prediction: 50%-overlap windows, linear crossfade."""
    n = model.spec.window_frames
    frames = condition.shape[0]
    if frames < n:
        raise StreamConfigError(f"need at least {n} frames, got {frames}")
    hop = n // 2
    starts = list(range(0, frames - n + 1, hop))
    if starts[-1] != frames - n:
        starts.append(frames - n)

    ramp = np.linspace(0.0, 1.0, n // 2, endpoint=False)
    fade = np.clip(np.concatenate((ramp, np.ones(n - 2 * ramp.size), ramp[::-1])), 1e-4, None)

    acc = np.zeros((frames, model.spec.output_width))
    w_sum = np.zeros(frames)
    for wi, start in enumerate(starts):
        raw = window_predict(model, schedule, condition[start : start + n], steps, seed + wi)
        acc[start : start + n] += raw * fade[:, None]
        w_sum[start : start + n] += fade
    return acc / w_sum[:, None]
