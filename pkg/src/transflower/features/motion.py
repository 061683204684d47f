"""Skeleton layout and the 67-dim pose vector."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, ShapeError
from .rotations import expmap_decode, expmap_encode
from .root import ROOT_DIM, decode_root_motion, encode_root_motion

POSE_DIM = 67
AUDIO_DIM = 85
FPS = 20
N_JOINTS = 21

# Pose vector channel map.
DX, DZ, Y, DYAW = 0, 1, 2, 6
ROOT_EXPMAP = slice(3, 6)
JOINTS = slice(ROOT_DIM, POSE_DIM)


@dataclass(frozen=True)
class SkeletonSpec:
    name: str
    joints: tuple
    parents: tuple
    offsets: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.joints) != N_JOINTS or len(self.parents) != N_JOINTS:
            raise ShapeError(f"skeleton must have {N_JOINTS} joints, got {len(self.joints)}")
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise ShapeError("skeleton must have exactly one root, at index 0")
        if any(p >= i for i, p in enumerate(self.parents) if p >= 0):
            raise ShapeError("parent index must precede child index")


CANONICAL_SKELETON = SkeletonSpec(
    name="tf21",
    joints=(
        "Hips", "Spine", "Spine1", "Neck", "Head",
        "LeftShoulder", "LeftArm", "LeftForeArm", "LeftHand",
        "RightShoulder", "RightArm", "RightForeArm", "RightHand",
        "LeftUpLeg", "LeftLeg", "LeftFoot", "LeftToeBase",
        "RightUpLeg", "RightLeg", "RightFoot", "RightToeBase",
    ),
    parents=(-1, 0, 1, 2, 3, 2, 5, 6, 7, 2, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19),
    offsets=(
        (0, 0, 0), (0, 0.10, 0), (0, 0.15, 0), (0, 0.20, 0), (0, 0.10, 0),
        (0.05, 0.15, 0), (0.12, 0, 0), (0.28, 0, 0), (0.25, 0, 0),
        (-0.05, 0.15, 0), (-0.12, 0, 0), (-0.28, 0, 0), (-0.25, 0, 0),
        (0.09, 0, 0), (0, -0.42, 0), (0, -0.40, 0), (0, -0.05, 0.12),
        (-0.09, 0, 0), (0, -0.42, 0), (0, -0.40, 0), (0, -0.05, 0.12),
    ),
)


def pose_features(root_positions, root_rotations, joint_rotations) -> np.ndarray:
    """Build ``(T, 67)`` pose vectors from world root motion and local joint rotations.

    joint_rotations: ``(T, 20, 3, 3)`` local rotations of the non-root joints.
    """
    jr = np.asarray(joint_rotations, dtype=np.float64)
    if jr.ndim != 4 or jr.shape[1:] != (N_JOINTS - 1, 3, 3):
        raise ShapeError(f"expected (T, 20, 3, 3) joint rotations, got {jr.shape}")
    root = encode_root_motion(root_positions, root_rotations)
    if len(root) != len(jr):
        raise ShapeError("root and joint frame counts differ")
    return np.concatenate([root, expmap_encode(jr).reshape(len(jr), -1)], axis=1)


def pose_to_motion(features, initial_position=(0.0, 0.0), initial_yaw: float = 0.0):
    """Inverse of :func:`pose_features`: world root trajectory plus joint rotations."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != POSE_DIM:
        raise ShapeError(f"expected (T, {POSE_DIM}) pose features, got {f.shape}")
    pos, rot = decode_root_motion(f, initial_position, initial_yaw)
    joints = expmap_decode(f[:, JOINTS].reshape(len(f), N_JOINTS - 1, 3))
    return pos, rot, joints


def load_motion_json(path) -> np.ndarray:
    """Read the JSON interchange for pre-retargeted motion and return pose features.

    Keys: ``fps`` (must be 20), ``root_positions`` (T x 3),
    ``root_rotations`` (T x 3 x 3) and ``joint_rotations`` (T x 20 x 3 x 3).
    """
    doc = json.loads(Path(path).read_text())
    try:
        fps = doc.get("fps", FPS)
        pos = np.asarray(doc["root_positions"], dtype=np.float64)
        rot = np.asarray(doc["root_rotations"], dtype=np.float64)
        joints = np.asarray(doc["joint_rotations"], dtype=np.float64)
    except KeyError as exc:
        raise DataError(f"motion JSON missing key {exc}") from None
    if fps != FPS:
        raise DataError(f"motion must be sampled at {FPS} Hz, got {fps}")
    return pose_features(pos, rot, joints)
