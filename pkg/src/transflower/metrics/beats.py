"""Kinematic and musical beats, and their alignment."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import peak_prominences

from ..errors import DataError
from ..features import audio as audio_features
from ..features import beats as tracker
from ..features.io import read_beat_file
from ..features.motion import FPS, Y


@dataclass
class BeatTrain:
    times: np.ndarray
    magnitudes: np.ndarray | None = None
    warning: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise DataError("beat times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)


def hip_velocity(motion, fps: int = FPS) -> np.ndarray:
    """Vertical root velocity (m/s) by central differences of the height channel."""
    y = np.asarray(motion, dtype=np.float64)
    y = y[:, Y] if y.ndim == 2 else y
    return np.gradient(y) * fps


def kinematic_beats(motion, fps: int = FPS, prominence: float = 0.01) -> BeatTrain:
    """Strict local minima of hip y-velocity with at least ``prominence`` m/s.

    ``motion`` is ``(T, 67)`` raw pose features (or a 1-D height track).
    Magnitude is |velocity| at the minimum.
    """
    m = np.asarray(motion, dtype=np.float64)
    if len(m) < 3:
        raise DataError("kinematic beats need at least 3 frames")
    v = hip_velocity(m, fps)
    k = np.arange(1, len(v) - 1)
    minima = k[(v[k] < v[k - 1]) & (v[k] < v[k + 1])]
    if len(minima):
        prom = peak_prominences(-v, minima)[0]
        minima = minima[prom >= prominence]
    return BeatTrain(minima / fps, np.abs(v[minima]))


def audio_beats(source, sample_rate: int | None = None, fps: float = audio_features.FRAME_RATE) -> BeatTrain:
    """Musical beats from PCM samples, a feature matrix, or a beat-time file.

    * ``source`` path to a text file: one time (seconds) per line, passed through.
    * ``source`` 1-D samples with ``sample_rate``: onset envelope computed first.
    * ``source`` ``(T, 85)`` raw audio features: the onset channel is used.
    """
    if isinstance(source, (str, Path)):
        return BeatTrain(read_beat_file(source))
    x = np.asarray(source, dtype=np.float64)
    if x.ndim == 1:
        if sample_rate is None:
            raise ValueError("sample_rate is required for PCM input")
        if len(x) < 2 * sample_rate:
            raise DataError("audio beat tracking needs at least 2 s of audio")
        env = audio_features.extract_audio_features(x, sample_rate)[:, audio_features.ONSET]
    else:
        if len(x) < 2 * fps:
            raise DataError("audio beat tracking needs at least 2 s of features")
        env = x[:, audio_features.ONSET]
    track = tracker.track_beats(env, fps)
    if not track.found or len(track.beat_frames) == 0:
        msg = "no tempo detected (flat onset envelope)"
        warnings.warn(msg, stacklevel=2)
        return BeatTrain(np.zeros(0), np.zeros(0), warning=msg)
    return BeatTrain(track.beat_frames / fps, env[track.beat_frames])


@dataclass
class Alignment:
    mean: float
    std: float
    warning: str | None = None

    def __iter__(self):
        return iter((self.mean, self.std))


def beat_alignment(music: BeatTrain, kinematic: BeatTrain) -> Alignment:
    """Mean and std of |music beat - nearest kinematic beat| (seconds)."""
    mt = np.asarray(getattr(music, "times", music), dtype=np.float64)
    kt = np.asarray(getattr(kinematic, "times", kinematic), dtype=np.float64)
    if len(mt) == 0:
        raise DataError("music beat train is empty")
    if len(kt) == 0:
        msg = "kinematic beat train is empty; alignment is undefined"
        warnings.warn(msg, stacklevel=2)
        return Alignment(float("inf"), 0.0, msg)
    off = np.abs(mt[:, None] - kt[None, :]).min(axis=1)
    return Alignment(float(off.mean()), float(off.std()))
