"""Training corpora: simulated, generated, and blended loose-wear data.

The generated route runs the secondary diffusion model over 50%-overlap
windows of a tight track + pose and stitches the windows back together
(linear crossfade on accelerations, spherical crossfade on orientations).
Blending then interpolates simulated and generated tracks with a mixing
weight drawn per window: accelerations linearly, orientations by slerp
from the generated track toward the simulated one, so weight 1 returns
the simulated input and weight 0 the generated one exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import torch

from . import container as mcio
from . import rotations as rot
from .container import config_hash
from .diffusion import default_step_list
from .imusim import GarmentProxy, SensorTrack, simulate_loose, simulate_tight
from .models import ModelSpec, build_condition, build_target_stack, decode_track
from .skeleton import PoseSequence, ShapeError
from .training import WindowSet

# The garment grid used to expand a corpus sevenfold: six style values on
# the lean reference body plus one heavier, shorter body at style 0.
GARMENT_GRID = (
    (0.0, 180.0, 22.0),
    (5.0, 180.0, 22.0),
    (10.0, 180.0, 22.0),
    (15.0, 180.0, 22.0),
    (20.0, 180.0, 22.0),
    (24.0, 180.0, 22.0),
    (0.0, 160.0, 30.0),
)


@dataclass(frozen=True)
class BlendSpec:
    alpha: float | None = None       # fixed mixing weight; None = uniform(0,1) per window
    seed: int = 0
    window_frames: int = 60

    def __post_init__(self):
        if self.alpha is not None and not (0.0 <= self.alpha <= 1.0):
            raise ValueError("fixed alpha must lie in [0, 1]")


def _crossfade_weights(n: int) -> np.ndarray:
    """Triangular window: overlap-added copies sum to one on full overlap."""
    ramp = np.linspace(0.0, 1.0, n // 2, endpoint=False)
    w = np.concatenate((ramp, np.ones(n - 2 * ramp.size), ramp[::-1]))
    return np.clip(w, 1e-4, None)


def generate_loose(
    secondary_checkpoint: str,
    tight: SensorTrack,
    pose_seq: PoseSequence,
    steps=None,
    seed: int = 0,
) -> SensorTrack:
    """Sample a generated loose track from a trained secondary model."""
    from .training import load_model

    model, schedule, _ = load_model(secondary_checkpoint)
    spec = model.spec
    if spec.family != "secondary":
        raise mcio.ContainerError("checkpoint does not hold a secondary model")
    if tuple(tight.sensor_ids) != tuple(spec.sensor_ids):
        raise ShapeError(
            f"checkpoint expects sensors {spec.sensor_ids}, track has {tight.sensor_ids}"
        )
    if tight.frames != pose_seq.frames:
        raise ShapeError("tight track and pose must be frame-aligned")
    steps = steps if steps is not None else default_step_list(schedule, 15)

    cond_full = build_condition(spec, tight=tight, pose=pose_seq).astype(np.float32)
    n = spec.window_frames
    frames = tight.frames
    if frames < n:
        raise ShapeError(f"need at least one window ({n} frames), got {frames}")

    hop = n // 2
    starts = list(range(0, frames - n + 1, hop))
    if starts[-1] != frames - n:
        starts.append(frames - n)

    width = spec.output_width
    acc_sum = np.zeros((frames, len(spec.sensor_ids), 3))
    w_sum = np.zeros(frames)
    quats = np.zeros((frames, len(spec.sensor_ids), 4))
    fade = _crossfade_weights(n)

    with torch.no_grad():
        for wi, start in enumerate(starts):
            cond = torch.from_numpy(cond_full[start : start + n]).unsqueeze(0)
            x0 = model.sample(cond, schedule, steps, seed=seed + wi)
            window = decode_track(
                x0.squeeze(0).numpy().astype(np.float64),
                tight.fps,
                spec.sensor_ids,
                spec.accel_scale,
                type_major=True,
            )
            w = fade.copy()
            sl = slice(start, start + n)
            acc_sum[sl] += window.acceleration * w[:, None, None]
            new_w = w
            old_w = w_sum[sl]
            blend = new_w / (old_w + new_w)
            covered = old_w > 0
            q = quats[sl]
            q[covered] = rot.slerp(q[covered], window.orientation[covered], blend[covered, None])
            q[~covered] = window.orientation[~covered]
            quats[sl] = q
            w_sum[sl] += new_w

    acc = acc_sum / w_sum[:, None, None]
    return SensorTrack(
        fps=tight.fps,
        sensor_ids=tight.sensor_ids,
        acceleration=acc,
        orientation=rot.quat_normalize(quats),
        tightness_tag="loose_generated",
        meta={"seed": seed, "steps": [int(s) for s in steps]},
    )


def blend(c_s: SensorTrack, c_l: SensorTrack, spec: BlendSpec) -> SensorTrack:
    """Mix simulated (weight alpha) and generated (weight 1-alpha) tracks."""
    if c_s.acceleration.shape != c_l.acceleration.shape or c_s.fps != c_l.fps:
        raise ShapeError("blend inputs must share shape and fps")
    frames = c_s.frames
    rng = np.random.default_rng(spec.seed)
    starts = list(range(0, frames, spec.window_frames))

    acc = np.empty_like(c_s.acceleration)
    ori = np.empty_like(c_s.orientation)
    alphas = []
    for start in starts:
        stop = min(start + spec.window_frames, frames)
        a = spec.alpha if spec.alpha is not None else float(rng.uniform(0.0, 1.0))
        alphas.append(a)
        sl = slice(start, stop)
        if a == 1.0:
            acc[sl] = c_s.acceleration[sl]
            ori[sl] = c_s.orientation[sl]
        elif a == 0.0:
            acc[sl] = c_l.acceleration[sl]
            ori[sl] = c_l.orientation[sl]
        else:
            acc[sl] = a * c_s.acceleration[sl] + (1.0 - a) * c_l.acceleration[sl]
            ori[sl] = rot.slerp(c_l.orientation[sl], c_s.orientation[sl], a)
    return SensorTrack(
        fps=c_s.fps,
        sensor_ids=c_s.sensor_ids,
        acceleration=acc,
        orientation=ori,
        tightness_tag="loose_blended",
        meta={"alphas": alphas, "window_frames": spec.window_frames, "seed": spec.seed},
    )


def build_corpus(
    motion_set,
    placements,
    proxy_grid=GARMENT_GRID,
    secondary_checkpoint: str | None = None,
    blend_spec: BlendSpec | None = None,
    out_dir: str = "corpus",
    base_seed: int = 0,
) -> dict:
    """Simulate (and optionally generate + blend) every motion under every
    garment configuration; returns and writes the corpus manifest.

    One container per (motion, garment) pair holds the aligned loose
    condition, pose, tight sensors and garment parameters; window starts
    and provenance live in the manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    total_windows = 0
    window_frames = 60
    for mi, motion in enumerate(motion_set):
        tight = simulate_tight(motion, placements)
        for gi, (gamma, height, bmi) in enumerate(proxy_grid):
            seed = base_seed + 1000 * mi + gi
            proxy = GarmentProxy(gamma=gamma, height_cm=height, bmi=bmi)
            loose = simulate_loose(motion, placements, proxy, seed=seed)
            tag = "loose_sim"
            if secondary_checkpoint is not None:
                generated = generate_loose(secondary_checkpoint, tight, motion, seed=seed)
                if blend_spec is not None:
                    loose = blend(loose, generated, blend_spec)
                    tag = "loose_blended"
                else:
                    loose = generated
                    tag = "loose_generated"

            name = f"motion{mi:03d}_garment{gi}"
            c = mcio.MotionContainer(
                fps=motion.fps,
                garment={"gamma": gamma, "height_cm": height, "bmi": bmi},
                provenance={
                    "seed": seed,
                    "tightness_tag": tag,
                    "sensor_ids": list(tight.sensor_ids),
                },
            )
            c.add("root_translation", motion.root_translation, "m")
            c.add("joint_rotation", motion.joint_rotation, "quat_wxyz")
            c.add("tight_acceleration", tight.acceleration, "m/s^2")
            c.add("tight_orientation", tight.orientation, "quat_wxyz")
            c.add("loose_acceleration", loose.acceleration, "m/s^2")
            c.add("loose_orientation", loose.orientation, "quat_wxyz")
            mcio.save(c, os.path.join(out_dir, name))

            starts = list(range(0, motion.frames - window_frames + 1, window_frames))
            total_windows += len(starts)
            entries.append(
                {
                    "name": name,
                    "frames": motion.frames,
                    "windows": len(starts),
                    "window_frames": window_frames,
                    "garment": [gamma, height, bmi],
                    "tightness_tag": tag,
                    "seed": seed,
                }
            )

    manifest = {
        "entries": entries,
        "window_count": total_windows,
        "config_hash": config_hash({"grid": list(proxy_grid), "seed": base_seed}),
        "base_seed": base_seed,
    }
    mcio.atomic_write_bytes(
        os.path.join(out_dir, "corpus.json"), json.dumps(manifest, indent=2).encode()
    )
    return manifest


def windows_from_simulation(
    spec: ModelSpec,
    motion: PoseSequence,
    loose: SensorTrack,
    tight: SensorTrack,
    stride: int | None = None,
    garment: tuple | None = None,
    windows: WindowSet | None = None,
) -> WindowSet:
    """Append aligned (condition, target) windows for one motion."""
    ws = windows if windows is not None else WindowSet(spec.window_frames)
    if spec.family == "secondary":
        cond = build_condition(spec, tight=tight, pose=motion)
        target = build_target_stack(spec, motion, tight, loose)
    else:
        cond = build_condition(spec, loose=loose, garment=garment)
        target = build_target_stack(spec, motion, tight, loose if spec.family == "unconditional" else None)
    ws.add_sequence(cond, target, stride=stride)
    return ws


def load_corpus_windows(corpus_dir: str, spec: ModelSpec, stride: int | None = None) -> WindowSet:
    """Rebuild a WindowSet from a corpus directory written by build_corpus."""
    manifest = json.loads(open(os.path.join(corpus_dir, "corpus.json")).read())
    ws = WindowSet(spec.window_frames)
    for entry in manifest["entries"]:
        c = mcio.load(os.path.join(corpus_dir, entry["name"]))
        motion = mcio.container_to_pose(c)
        ids = tuple(c.provenance["sensor_ids"])
        tight = SensorTrack(
            fps=c.fps, sensor_ids=ids,
            acceleration=c.get("tight_acceleration").astype(np.float64),
            orientation=c.get("tight_orientation").astype(np.float64),
            tightness_tag="tight",
        )
        loose = SensorTrack(
            fps=c.fps, sensor_ids=ids,
            acceleration=c.get("loose_acceleration").astype(np.float64),
            orientation=c.get("loose_orientation").astype(np.float64),
            tightness_tag="loose_sim",
        )
        garment = tuple(entry["garment"]) if spec.garment_aware else None
        windows_from_simulation(spec, motion, loose, tight, stride=stride, garment=garment, windows=ws)
    return ws
