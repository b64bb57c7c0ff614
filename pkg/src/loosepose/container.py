"""Motion/sensor container format: JSON manifest + raw float32 blobs.

A container is a directory holding ``manifest.json`` plus one binary file
per channel group. Blobs are little-endian 32-bit floats in row-major
(C) order; the manifest declares every group's shape, unit and file name,
and the byte length of each blob must match the declared shape exactly.
Load failures are distinguished by error type: schema version mismatch,
truncated/oversized blob, and manifest/blob shape disagreement.

Writes are atomic (temp file + rename) so a crashed writer never leaves a
half-valid container behind.

See docs/formats.md for the byte-exact layout.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


class ContainerError(RuntimeError):
    code = "container_error"


class VersionMismatchError(ContainerError):
    code = "version_mismatch"


class TruncatedBlobError(ContainerError):
    code = "truncated_blob"


class ShapeMismatchError(ContainerError):
    code = "shape_mismatch"


def config_hash(payload) -> str:
    """Stable short hash of a JSON-serializable configuration object."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def atomic_write_bytes(path: str, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


@dataclass
class MotionContainer:
    """Named float32 channel groups plus provenance metadata."""

    fps: float
    channels: dict = field(default_factory=dict)      # name -> np.ndarray (f32)
    units: dict = field(default_factory=dict)         # name -> unit string
    provenance: dict = field(default_factory=dict)    # free-form tags: seed, config hash, ...
    garment: dict = field(default_factory=dict)       # gamma / height_cm / bmi when applicable
    gravity_included: bool = False
    frames: int = 0

    def __post_init__(self):
        fixed = {}
        for name, arr in self.channels.items():
            fixed[name] = np.ascontiguousarray(arr, dtype=np.float32)
        self.channels = fixed
        if self.frames == 0 and self.channels:
            self.frames = int(next(iter(self.channels.values())).shape[0])

    def add(self, name: str, array, unit: str = ""):
        self.channels[name] = np.ascontiguousarray(array, dtype=np.float32)
        if unit:
            self.units[name] = unit
        if self.frames == 0:
            self.frames = int(self.channels[name].shape[0])

    def get(self, name: str) -> np.ndarray:
        return self.channels[name]


def save(container: MotionContainer, path: str):
    os.makedirs(path, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "fps": container.fps,
        "frames": container.frames,
        "gravity_included": container.gravity_included,
        "garment": container.garment,
        "provenance": container.provenance,
        "channels": {},
    }
    for name, arr in container.channels.items():
        fname = f"{name}.f32"
        manifest["channels"][name] = {
            "shape": list(arr.shape),
            "dtype": "f32",
            "unit": container.units.get(name, ""),
            "file": fname,
        }
        atomic_write_bytes(os.path.join(path, fname), arr.astype("<f4").tobytes(order="C"))
    atomic_write_bytes(
        os.path.join(path, MANIFEST_NAME),
        json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"),
    )


def load(path: str) -> MotionContainer:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ContainerError(f"no manifest at {manifest_path}")
    with open(manifest_path, "rb") as f:
        manifest = json.loads(f.read().decode("utf-8"))

    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionMismatchError(f"container schema {version} != supported {SCHEMA_VERSION}")

    channels, units = {}, {}
    for name, entry in manifest["channels"].items():
        shape = tuple(int(s) for s in entry["shape"])
        expected = int(np.prod(shape)) * 4 if shape else 4
        blob_path = os.path.join(path, entry["file"])
        if not os.path.exists(blob_path):
            raise TruncatedBlobError(f"missing blob {entry['file']} for channel {name!r}")
        data = open(blob_path, "rb").read()
        if len(data) != expected:
            raise TruncatedBlobError(
                f"channel {name!r}: blob is {len(data)} bytes, manifest declares {expected}"
            )
        arr = np.frombuffer(data, dtype="<f4")
        try:
            arr = arr.reshape(shape)
        except ValueError as e:
            raise ShapeMismatchError(f"channel {name!r}: {e}") from e
        channels[name] = arr.copy()
        units[name] = entry.get("unit", "")

    return MotionContainer(
        fps=float(manifest["fps"]),
        channels=channels,
        units=units,
        provenance=manifest.get("provenance", {}),
        garment=manifest.get("garment", {}),
        gravity_included=bool(manifest.get("gravity_included", False)),
        frames=int(manifest.get("frames", 0)),
    )


def pose_to_container(pose, provenance=None) -> MotionContainer:
    c = MotionContainer(fps=pose.fps, provenance=provenance or {})
    c.add("root_translation", pose.root_translation, "m")
    c.add("joint_rotation", pose.joint_rotation, "quat_wxyz")
    return c


def container_to_pose(c: MotionContainer):
    from .skeleton import PoseSequence

    return PoseSequence(
        fps=c.fps,
        root_translation=c.get("root_translation").astype(np.float64),
        joint_rotation=c.get("joint_rotation").astype(np.float64),
    )


def track_to_container(track, provenance=None) -> MotionContainer:
    c = MotionContainer(
        fps=track.fps,
        provenance=provenance or {},
        gravity_included=bool(track.meta.get("gravity_included", False)),
    )
    c.add("acceleration", track.acceleration, "m/s^2")
    c.add("orientation", track.orientation, "quat_wxyz")
    c.provenance.setdefault("sensor_ids", list(track.sensor_ids))
    c.provenance.setdefault("tightness_tag", track.tightness_tag)
    for key in ("seed", "gamma", "height_cm", "bmi", "degenerate_frames", "alphas"):
        if key in track.meta:
            c.provenance.setdefault(key, track.meta[key])
    return c


def container_to_track(c: MotionContainer):
    from .imusim import SensorTrack

    return SensorTrack(
        fps=c.fps,
        sensor_ids=tuple(c.provenance["sensor_ids"]),
        acceleration=c.get("acceleration").astype(np.float64),
        orientation=c.get("orientation").astype(np.float64),
        tightness_tag=c.provenance.get("tightness_tag", "tight"),
        meta={"gravity_included": c.gravity_included},
    )
