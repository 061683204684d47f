"""Exponential-map (axis-angle) rotation parametrization, vectorized over
leading axes."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError

# Below this angle the Rodrigues coefficients use their Taylor series.
SMALL_ANGLE = 1e-4


def _hat(v: np.ndarray) -> np.ndarray:
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    o = np.zeros_like(x)
    return np.stack(
        [np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)], -2
    )


def expmap_decode(v) -> np.ndarray:
    """Rotation matrices from exponential-map vectors, shape ``(..., 3) -> (..., 3, 3)``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ShapeError(f"expected trailing dimension 3, got {v.shape}")
    theta = np.linalg.norm(v, axis=-1)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    k = _hat(v)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def is_rotation(r, tol: float = 1e-6) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    ortho = np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3)).max(axis=(-1, -2)) <= tol
    return ortho & (np.abs(np.linalg.det(r) - 1.0) <= tol)


def _matrix_to_quaternion(r: np.ndarray) -> np.ndarray:
    # Shepperd's method: branch on the largest of (trace, diagonal entries).
    m00, m11, m22 = r[..., 0, 0], r[..., 1, 1], r[..., 2, 2]
    tr = m00 + m11 + m22
    cand = np.stack([tr, m00, m11, m22], -1)
    which = np.argmax(cand, -1)
    q = np.zeros(r.shape[:-2] + (4,))

    def fill(mask, w, x, y, z):
        q[mask] = np.stack([w[mask], x[mask], y[mask], z[mask]], -1)

    s = np.sqrt(np.maximum(1.0 + tr, 0.0)) * 2
    ss = np.where(s == 0, 1.0, s)
    fill(which == 0, 0.25 * s, (r[..., 2, 1] - r[..., 1, 2]) / ss,
         (r[..., 0, 2] - r[..., 2, 0]) / ss, (r[..., 1, 0] - r[..., 0, 1]) / ss)
    s = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0)) * 2
    ss = np.where(s == 0, 1.0, s)
    fill(which == 1, (r[..., 2, 1] - r[..., 1, 2]) / ss, 0.25 * s,
         (r[..., 0, 1] + r[..., 1, 0]) / ss, (r[..., 0, 2] + r[..., 2, 0]) / ss)
    s = np.sqrt(np.maximum(1.0 - m00 + m11 - m22, 0.0)) * 2
    ss = np.where(s == 0, 1.0, s)
    fill(which == 2, (r[..., 0, 2] - r[..., 2, 0]) / ss, (r[..., 0, 1] + r[..., 1, 0]) / ss,
         0.25 * s, (r[..., 1, 2] + r[..., 2, 1]) / ss)
    s = np.sqrt(np.maximum(1.0 - m00 - m11 + m22, 0.0)) * 2
    ss = np.where(s == 0, 1.0, s)
    fill(which == 3, (r[..., 1, 0] - r[..., 0, 1]) / ss, (r[..., 0, 2] + r[..., 2, 0]) / ss,
         (r[..., 1, 2] + r[..., 2, 1]) / ss, 0.25 * s)
    return q


def expmap_encode(r, tol: float = 1e-6) -> np.ndarray:
    """Exponential-map vectors with angle in ``[0, pi]`` from rotation matrices.

    Raises ``ShapeError`` if any input is not a proper rotation within ``tol``.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-2:] != (3, 3):
        raise ShapeError(f"expected (..., 3, 3) matrices, got {r.shape}")
    if not np.all(is_rotation(r, tol)):
        raise ShapeError("input is not a rotation matrix (orthonormal, det=+1)")
    q = _matrix_to_quaternion(r)
    # Canonical hemisphere w >= 0 keeps the angle in [0, pi].
    q = np.where(q[..., :1] < 0, -q, q)
    w = q[..., 0]
    xyz = q[..., 1:]
    sin_half = np.linalg.norm(xyz, axis=-1)
    angle = 2.0 * np.arctan2(sin_half, w)
    small = sin_half < 1e-12
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, sin_half))
    return xyz * scale[..., None]


def yaw_rotation(yaw) -> np.ndarray:
    """Rotations about the vertical (y) axis; yaw=0 faces +z, positive yaw turns towards +x."""
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    o, i = np.zeros_like(yaw), np.ones_like(yaw)
    return np.stack(
        [np.stack([c, o, s], -1), np.stack([o, i, o], -1), np.stack([-s, o, c], -1)], -2
    )


def facing_yaw(r) -> np.ndarray:
    """Yaw of the local +z axis projected on the ground plane."""
    r = np.asarray(r, dtype=np.float64)
    fwd = r[..., :, 2]
    return np.arctan2(fwd[..., 0], fwd[..., 2])


def wrap_angle(a) -> np.ndarray:
    """Wrap to ``(-pi, pi]``."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)
