"""Rotation algebra on batched arrays.

Canonical storage is the unit quaternion in (w, x, y, z) order, Hamilton
convention, acting on column vectors (active rotation). All functions
broadcast over leading dimensions: a quaternion array has shape (..., 4),
a matrix array (..., 3, 3), an axis-angle array (..., 3) (radians, axis
scaled by angle), and a 6D array (..., 6) holding the first two rotation
matrix columns concatenated column-by-column, so the identity maps to
(1, 0, 0, 0, 1, 0).

Everything here is pure and allocation-only; safe to call concurrently.
"""

from __future__ import annotations

import numpy as np

VIEWS = ("quat", "matrix", "axis_angle", "six_d")

# Below this angle (radians) axis-angle extraction switches to the
# first-order small-angle form, which is exact to O(theta^3).
_SMALL_ANGLE = 1e-4


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return q scaled to unit norm. Zero-norm input raises."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm


def random_quat(rng: np.random.Generator, shape=()) -> np.ndarray:
    """Uniform random unit quaternions (Gaussian projection)."""
    q = rng.standard_normal(tuple(shape) + (4,))
    return quat_normalize(q)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b (apply b first, then a, on column vectors)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        (
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ),
        axis=-1,
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate 3-vectors v by quaternions q (q v q*)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the canonical (w >= 0) quaternion."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape((-1, 3, 3))
    n = m.shape[0]
    q = np.empty((n, 4), dtype=np.float64)

    trace = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    # Four mutually exclusive branches keyed on the dominant diagonal term.
    cond0 = trace > 0.0
    d0 = (m[:, 0, 0] > m[:, 1, 1]) & (m[:, 0, 0] > m[:, 2, 2])
    d1 = ~d0 & (m[:, 1, 1] > m[:, 2, 2])

    idx = np.where(cond0)[0]
    if idx.size:
        s = np.sqrt(trace[idx] + 1.0) * 2.0
        q[idx, 0] = 0.25 * s
        q[idx, 1] = (m[idx, 2, 1] - m[idx, 1, 2]) / s
        q[idx, 2] = (m[idx, 0, 2] - m[idx, 2, 0]) / s
        q[idx, 3] = (m[idx, 1, 0] - m[idx, 0, 1]) / s

    idx = np.where(~cond0 & d0)[0]
    if idx.size:
        s = np.sqrt(1.0 + m[idx, 0, 0] - m[idx, 1, 1] - m[idx, 2, 2]) * 2.0
        q[idx, 0] = (m[idx, 2, 1] - m[idx, 1, 2]) / s
        q[idx, 1] = 0.25 * s
        q[idx, 2] = (m[idx, 0, 1] + m[idx, 1, 0]) / s
        q[idx, 3] = (m[idx, 0, 2] + m[idx, 2, 0]) / s

    idx = np.where(~cond0 & d1)[0]
    if idx.size:
        s = np.sqrt(1.0 + m[idx, 1, 1] - m[idx, 0, 0] - m[idx, 2, 2]) * 2.0
        q[idx, 0] = (m[idx, 0, 2] - m[idx, 2, 0]) / s
        q[idx, 1] = (m[idx, 0, 1] + m[idx, 1, 0]) / s
        q[idx, 2] = 0.25 * s
        q[idx, 3] = (m[idx, 1, 2] + m[idx, 2, 1]) / s

    idx = np.where(~cond0 & ~d0 & ~d1)[0]
    if idx.size:
        s = np.sqrt(1.0 + m[idx, 2, 2] - m[idx, 0, 0] - m[idx, 1, 1]) * 2.0
        q[idx, 0] = (m[idx, 1, 0] - m[idx, 0, 1]) / s
        q[idx, 1] = (m[idx, 0, 2] + m[idx, 2, 0]) / s
        q[idx, 2] = (m[idx, 1, 2] + m[idx, 2, 1]) / s
        q[idx, 3] = 0.25 * s

    q = quat_normalize(q)
    flip = q[:, 0] < 0.0
    q[flip] = -q[flip]
    return q.reshape(batch + (4,))


def axis_angle_to_quat(aa: np.ndarray) -> np.ndarray:
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle[..., 0] < _SMALL_ANGLE
    # sin(half)/angle -> 0.5 as angle -> 0
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small[..., None], 0.5, np.sin(half) / np.where(angle == 0.0, 1.0, angle))
    q = np.concatenate((np.cos(half), aa * scale), axis=-1)
    return quat_normalize(q)


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    # Canonical sign so the angle lands in [0, pi].
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    q = q * sign
    w = q[..., 0]
    v = q[..., 1:]
    vnorm = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(vnorm, w)
    small = vnorm < _SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 2.0, angle / np.where(vnorm == 0.0, 1.0, vnorm))
    return v * scale[..., None]


def quat_to_six_d(q: np.ndarray) -> np.ndarray:
    m = quat_to_matrix(q)
    return np.concatenate((m[..., :, 0], m[..., :, 1]), axis=-1)


def six_d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the two stored columns; third column via cross product."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1 = r6[..., :3]
    a2 = r6[..., 3:]
    b1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    a2p = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = a2p / np.linalg.norm(a2p, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack((b1, b2, b3), axis=-1)


def six_d_to_quat(r6: np.ndarray) -> np.ndarray:
    return matrix_to_quat(six_d_to_matrix(r6))


def convert(q: np.ndarray, target_view: str) -> np.ndarray:
    """Dispatch a quaternion to one of the supported views."""
    if target_view == "quat":
        return quat_normalize(q)
    if target_view == "matrix":
        return quat_to_matrix(q)
    if target_view == "axis_angle":
        return quat_to_axis_angle(q)
    if target_view == "six_d":
        return quat_to_six_d(q)
    raise ValueError(f"unknown rotation view {target_view!r}; expected one of {VIEWS}")


def rotation_angle_rad(q: np.ndarray) -> np.ndarray:
    """Magnitude of the rotation in [0, pi] radians."""
    q = quat_normalize(q)
    w = np.abs(q[..., 0])
    vnorm = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vnorm, w)


def angular_offset_deg(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Angle in degrees between two rotations.

    Computed as the axis-angle magnitude of Ra^T Rb; the atan2 form below is
    algebraically the same and stays accurate both near 0 deg (where the
    asin/atan2 branch dominates) and near 180 deg.
    """
    rel = quat_multiply(quat_conjugate(qa), qb)
    return np.degrees(rotation_angle_rad(rel))


def slerp(qa: np.ndarray, qb: np.ndarray, w) -> np.ndarray:
    """Spherical interpolation from qa (w=0) to qb (w=1), shortest path.

    Endpoints are returned exactly: w=0 -> qa, w=1 -> qb (up to the
    qb sign flip used for shortest-path selection).
    """
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    w = np.asarray(w, dtype=np.float64)
    dot = np.sum(qa * qb, axis=-1, keepdims=True)
    qb = np.where(dot < 0.0, -qb, qb)
    dot = np.abs(dot)

    if np.isscalar(w) or w.ndim == 0:
        if float(w) == 0.0:
            return qa.copy()
        if float(w) == 1.0:
            return qb.copy()
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), qa.shape[:-1])[..., None]

    dot = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    near = sin_theta[..., 0] < 1e-7
    with np.errstate(invalid="ignore", divide="ignore"):
        c_a = np.where(near[..., None], 1.0 - w, np.sin((1.0 - w) * theta) / np.where(sin_theta == 0.0, 1.0, sin_theta))
        c_b = np.where(near[..., None], w, np.sin(w * theta) / np.where(sin_theta == 0.0, 1.0, sin_theta))
    out = c_a * qa + c_b * qb
    # Exact endpoint recovery regardless of the trig path.
    out = np.where(w == 0.0, qa, out)
    out = np.where(w == 1.0, qb, out)
    return quat_normalize(out)


def identity_quat(shape=()) -> np.ndarray:
    q = np.zeros(tuple(shape) + (4,), dtype=np.float64)
    q[..., 0] = 1.0
    return q
