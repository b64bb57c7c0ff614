"""Procedural motion synthesis for desk-scale experiments.

Motions live on a low-dimensional manifold: a handful of smooth latent
phase signals drive all joint angles through a fixed random mixing matrix,
the way real limb coordination couples joints. On top of that sits a small
band-limited tremor so that ground-truth trajectories carry realistic
high-frequency content (nonzero jerk), plus a slow walking-circle root
path with vertical bob and yaw.

Everything is deterministic in (frames, fps, seed).
"""

from __future__ import annotations

import numpy as np

from . import rotations as rot
from .skeleton import PoseSequence

# Per-joint amplitude caps in radians; proximal joints move most.
_JOINT_AMPLITUDE = np.array(
    [
        0.20,  # pelvis
        0.55, 0.55,              # hips
        0.12,                    # spine1
        0.70, 0.70,              # knees
        0.12,                    # spine2
        0.35, 0.35,              # ankles
        0.12,                    # spine3
        0.20, 0.20,              # feet
        0.25,                    # neck
        0.15, 0.15,              # collars
        0.30,                    # head
        0.55, 0.55,              # shoulders
        0.80, 0.80,              # elbows
        0.40, 0.40,              # wrists
        0.20, 0.20,              # hands
    ],
    dtype=np.float64,
)


def _latent_phases(frames: int, fps: float, dims: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth latent signals: three-harmonic sinusoid mixtures in [-1, 1]."""
    t = np.arange(frames, dtype=np.float64) / fps
    z = np.zeros((frames, dims), dtype=np.float64)
    for d in range(dims):
        freqs = rng.uniform(0.10, 1.40, size=3)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        weights = rng.uniform(0.3, 1.0, size=3)
        weights /= weights.sum()
        for f, p, w in zip(freqs, phases, weights):
            z[:, d] += w * np.sin(2.0 * np.pi * f * t + p)
    return z


def _heading_drift(frames: int, fps: float, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Slow yaw random walk (walking around a room), peak = amplitude rad."""
    window = max(int(fps * 2), 1)
    kernel = np.ones(window) / window
    rate = np.convolve(rng.standard_normal(frames), kernel, mode="same")
    yaw = np.cumsum(rate) / fps
    yaw -= yaw.mean()
    return yaw * (amplitude / max(np.abs(yaw).max(), 1e-9))


def generate_motion(
    frames: int,
    fps: float = 30.0,
    seed: int = 0,
    latent_dims: int = 8,
    tremor_rad: float = 0.004,
    heading_rad: float = 1.3,
) -> PoseSequence:
    """Generate a coordinated whole-body motion of the given length."""
    rng = np.random.default_rng(seed)
    t = np.arange(frames, dtype=np.float64) / fps

    z = _latent_phases(frames, fps, latent_dims, rng)
    mixing = rng.standard_normal((24, 3, latent_dims)) / np.sqrt(latent_dims)
    aa = np.einsum("jcd,fd->fjc", mixing, z)
    # Rescale each joint's peak excursion to its amplitude cap.
    peak = np.abs(aa).max(axis=(0, 2), keepdims=True)
    aa = aa / np.maximum(peak, 1e-9) * _JOINT_AMPLITUDE[None, :, None]

    if tremor_rad > 0.0:
        tremor = rng.standard_normal((frames, 24, 3))
        # Two-tap average keeps some high-frequency power without spikes.
        tremor[1:] = 0.5 * (tremor[1:] + tremor[:-1])
        aa = aa + tremor_rad * tremor

    quats = rot.axis_angle_to_quat(aa.reshape(-1, 3)).reshape(frames, 24, 4)

    # Compose the heading drift onto the pelvis (large angles need proper
    # quaternion composition, not axis-angle addition).
    if heading_rad > 0.0:
        yaw = _heading_drift(frames, fps, heading_rad, rng)
        yaw_aa = np.zeros((frames, 3))
        yaw_aa[:, 1] = yaw
        quats[:, 0] = rot.quat_multiply(rot.axis_angle_to_quat(yaw_aa), quats[:, 0])

    # Walking-circle translation with vertical bob.
    radius = 1.0
    circle_f = 0.03
    bob_f = rng.uniform(0.8, 1.2)
    trans = np.stack(
        (
            radius * np.cos(2.0 * np.pi * circle_f * t),
            0.02 * np.sin(2.0 * np.pi * bob_f * t),
            radius * np.sin(2.0 * np.pi * circle_f * t),
        ),
        axis=-1,
    )
    trans -= trans[0]
    return PoseSequence(fps=fps, root_translation=trans, joint_rotation=quats)


def static_pose(frames: int, fps: float = 30.0, seed: int = 0) -> PoseSequence:
    """One random pose held for the whole sequence."""
    rng = np.random.default_rng(seed)
    aa = rng.uniform(-0.3, 0.3, size=(24, 3))
    quat = rot.axis_angle_to_quat(aa)
    return PoseSequence(
        fps=fps,
        root_translation=np.zeros((frames, 3)),
        joint_rotation=np.broadcast_to(quat, (frames, 24, 4)).copy(),
    )
