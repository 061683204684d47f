"""Root (hip) trajectory encoding relative to the ground-projected frame.

Per-frame root features are ``(dx, dz, y, theta1, theta2, theta3, dyaw)``:
planar displacement in the *previous* frame's ground-projected coordinates,
absolute height, exponential map of the orientation with its yaw removed, and
the wrapped yaw change. Frame 0 carries zero deltas.
"""
from __future__ import annotations

import numpy as np

from ..errors import DataError, ShapeError
from .rotations import expmap_decode, expmap_encode, facing_yaw, wrap_angle, yaw_rotation

ROOT_DIM = 7


def encode_root_motion(positions, rotations) -> np.ndarray:
    """Encode a world-space root trajectory.

    positions: ``(T, 3)`` metres, y up. rotations: ``(T, 3, 3)``.
    Returns ``(T, 7)``.
    """
    p = np.asarray(positions, dtype=np.float64)
    r = np.asarray(rotations, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3 or r.shape != (p.shape[0], 3, 3):
        raise ShapeError(f"expected (T,3) positions and (T,3,3) rotations, got {p.shape}, {r.shape}")
    if p.shape[0] < 2:
        raise DataError("root motion encoding needs at least 2 frames")
    yaw = facing_yaw(r)
    ground = yaw_rotation(yaw)
    out = np.zeros((p.shape[0], ROOT_DIM))
    step = p[1:] - p[:-1]
    local = np.einsum("tji,tj->ti", ground[:-1], step)  # R_prev^T @ step
    out[1:, 0] = local[:, 0]
    out[1:, 1] = local[:, 2]
    out[:, 2] = p[:, 1]
    out[:, 3:6] = expmap_encode(np.swapaxes(ground, -1, -2) @ r)
    out[1:, 6] = wrap_angle(np.diff(yaw))
    return out


def decode_root_motion(features, initial_position=(0.0, 0.0), initial_yaw: float = 0.0):
    """Integrate root features back to a world trajectory.

    ``initial_position`` is the ground-plane ``(x, z)`` of frame 0.
    Returns ``(positions (T, 3), rotations (T, 3, 3))``.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] < ROOT_DIM:
        raise ShapeError(f"expected (T, >=7) root features, got {f.shape}")
    yaw = initial_yaw + np.cumsum(np.concatenate([[0.0], f[1:, 6]]))
    ground = yaw_rotation(yaw)
    local = np.stack([f[:, 0], np.zeros(len(f)), f[:, 1]], -1)
    world_step = np.einsum("tij,tj->ti", ground[:-1], local[1:])
    xz = np.zeros((len(f), 3))
    xz[0] = [initial_position[0], 0.0, initial_position[1]]
    xz[1:] = xz[0] + np.cumsum(world_step, axis=0)
    positions = np.stack([xz[:, 0], f[:, 2], xz[:, 2]], -1)
    rotations = ground @ expmap_decode(f[:, 3:6])
    return positions, rotations
