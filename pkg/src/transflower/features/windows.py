"""Teacher-forcing windows over aligned motion/audio sequences.

For the target block starting at frame ``i`` (poses ``i .. i+N-1``):

* motion context = poses ``i-k_x .. i-1``
* audio context  = frames ``i-k_m+1 .. i+l_m`` (``k_m`` frames up to and
  including ``i``, then ``l_m`` future frames)

Indices before the sequence start are zero (the corpus mean once
standardized). A block is valid when ``i + N - 1 + l_m <= T - 1`` so every
target pose has its full future audio context; targets are never padded.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DataError, ShapeError


@dataclass
class ContextWindow:
    motion: np.ndarray  # (k_x, 67)
    audio: np.ndarray  # (k_m + l_m, 85)


def valid_starts(n_frames: int, n_poses: int, l_m: int, stride: int = 1) -> np.ndarray:
    last = n_frames - n_poses - l_m
    if last < 0:
        raise DataError(
            f"sequence of {n_frames} frames is shorter than N + l_m = {n_poses + l_m}"
        )
    return np.arange(0, last + 1, stride)


class WindowDataset:
    """Windows over one or more aligned (motion, audio) pairs.

    Sequences are stored once, front-padded with zeros; windows are gathered
    lazily so a dataset of many thousands of windows stays small in memory.
    """

    def __init__(self, motion_seqs, audio_seqs, k_x, k_m, l_m, n_poses, stride=1):
        if min(k_x, k_m, l_m, n_poses, stride) < 1:
            raise ShapeError("k_x, k_m, l_m, N and stride must all be >= 1")
        if len(motion_seqs) != len(audio_seqs):
            raise ShapeError("motion and audio sequence counts differ")
        self.k_x, self.k_m, self.l_m, self.n_poses = k_x, k_m, l_m, n_poses
        motion_parts, audio_parts, index = [], [], []
        m_off = a_off = 0
        for clip, (m, a) in enumerate(zip(motion_seqs, audio_seqs)):
            m = np.asarray(m, dtype=np.float32)
            a = np.asarray(a, dtype=np.float32)
            if len(m) != len(a):
                raise ShapeError(f"clip {clip}: motion has {len(m)} frames, audio {len(a)}")
            starts = valid_starts(len(m), n_poses, l_m, stride)
            motion_parts += [np.zeros((k_x, m.shape[1]), np.float32), m]
            audio_parts += [np.zeros((k_m - 1, a.shape[1]), np.float32), a]
            # Offsets of frame 0 of this clip inside the padded buffers.
            m0, a0 = m_off + k_x, a_off + k_m - 1
            index += [(clip, int(s), m0 + int(s), a0 + int(s)) for s in starts]
            m_off = m0 + len(m)
            a_off = a0 + len(a)
        self.motion = np.concatenate(motion_parts) if motion_parts else np.zeros((0, 67), np.float32)
        self.audio = np.concatenate(audio_parts) if audio_parts else np.zeros((0, 85), np.float32)
        self.index = np.array(index, dtype=np.int64).reshape(-1, 4)

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, k: int):
        m, a, t = self.batch(np.array([k]))
        return ContextWindow(m[0], a[0]), t[0]

    @property
    def starts(self) -> np.ndarray:
        return self.index[:, 1]

    @property
    def clips(self) -> np.ndarray:
        return self.index[:, 0]

    def batch(self, ks: Sequence[int]):
        """Arrays ``(motion (B,k_x,67), audio (B,k_m+l_m,85), targets (B,N,67))``."""
        rows = self.index[np.asarray(ks, dtype=np.int64)]
        mpos, apos = rows[:, 2], rows[:, 3]
        mctx = self.motion[mpos[:, None] + np.arange(-self.k_x, 0)[None]]
        actx = self.audio[apos[:, None] + np.arange(-self.k_m + 1, self.l_m + 1)[None]]
        tgt = self.motion[mpos[:, None] + np.arange(self.n_poses)[None]]
        return mctx, actx, tgt

    def subset(self, mask) -> "WindowDataset":
        out = object.__new__(WindowDataset)
        out.__dict__.update(self.__dict__)
        out.index = self.index[np.asarray(mask)]
        return out


def window_dataset(motion, audio, k_x, k_m, l_m, n_poses, stride=1) -> WindowDataset:
    """Accepts a single (T,67)/(T,85) pair or lists of pairs."""
    if isinstance(motion, np.ndarray) and motion.ndim == 2:
        motion, audio = [motion], [audio]
    return WindowDataset(list(motion), list(audio), k_x, k_m, l_m, n_poses, stride)
