"""Per-feature standardization fitted over a whole corpus."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError

STD_FLOOR = 1e-6
STANDARDIZER_VERSION = "tfstd-1"


@dataclass
class Standardizer:
    motion_mean: np.ndarray
    motion_std: np.ndarray
    audio_mean: np.ndarray
    audio_std: np.ndarray

    def apply_motion(self, x):
        return (np.asarray(x, dtype=np.float64) - self.motion_mean) / self.motion_std

    def invert_motion(self, z):
        return np.asarray(z, dtype=np.float64) * self.motion_std + self.motion_mean

    def apply_audio(self, x):
        return (np.asarray(x, dtype=np.float64) - self.audio_mean) / self.audio_std

    def invert_audio(self, z):
        return np.asarray(z, dtype=np.float64) * self.audio_std + self.audio_mean

    def to_dict(self) -> dict:
        return {
            "version": STANDARDIZER_VERSION,
            "motion": {"mean": self.motion_mean.tolist(), "std": self.motion_std.tolist()},
            "audio": {"mean": self.audio_mean.tolist(), "std": self.audio_std.tolist()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        if doc.get("version") != STANDARDIZER_VERSION:
            raise DataError(f"unsupported standardizer version {doc.get('version')!r}")
        arr = lambda v: np.asarray(v, dtype=np.float64)
        return cls(arr(doc["motion"]["mean"]), arr(doc["motion"]["std"]),
                   arr(doc["audio"]["mean"]), arr(doc["audio"]["std"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Standardizer":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _moments(seqs, name):
    seqs = [np.asarray(s, dtype=np.float64) for s in seqs]
    if not seqs or sum(len(s) for s in seqs) < 2:
        raise DataError(f"{name} corpus needs at least 2 frames")
    data = np.concatenate(seqs, axis=0)
    return data.mean(axis=0), np.maximum(data.std(axis=0), STD_FLOOR)


def fit_standardizer(motion_seqs, audio_seqs) -> Standardizer:
    """Population mean/std per feature over every frame of the corpus."""
    mm, ms = _moments(motion_seqs, "motion")
    am, as_ = _moments(audio_seqs, "audio")
    return Standardizer(mm, ms, am, as_)
