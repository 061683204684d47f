"""Feature files and WAV input.

A feature file is a pair: ``<stem>.mfeat`` / ``<stem>.afeat`` holds a JSON
header, ``<header>.bin`` holds the frames as row-major little-endian f32.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from ..errors import DataError
from .motion import AUDIO_DIM, FPS, POSE_DIM

FEATURE_FILE_VERSION = 1
LAYOUTS = {".mfeat": ("tf67-v1", POSE_DIM), ".afeat": ("tf85-v1", AUDIO_DIM)}


@dataclass
class FeatureSequence:
    """Frames sampled at 20 Hz plus a free-form provenance tag."""

    frames: np.ndarray
    fps: int = FPS
    tag: str = ""
    skeleton: str = field(default="tf21")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.frames, dtype=dtype)

    def __len__(self) -> int:
        return len(self.frames)


def _layout(path: Path):
    try:
        return LAYOUTS[path.suffix]
    except KeyError:
        raise DataError(f"unknown feature file extension {path.suffix!r} (want .mfeat/.afeat)") from None


def write_features(path, frames, tag: str = "", skeleton: str = "tf21") -> Path:
    path = Path(path)
    layout, dim = _layout(path)
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 2 or frames.shape[1] != dim:
        raise DataError(f"{layout} expects (frames, {dim}) data, got {frames.shape}")
    data_path = path.with_name(path.name + ".bin")
    header = {
        "version": FEATURE_FILE_VERSION,
        "skeleton": skeleton,
        "fps": FPS,
        "feature_layout": layout,
        "frames": int(frames.shape[0]),
        "data": data_path.name,
        "tag": tag,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    data_path.write_bytes(frames.tobytes(order="C"))
    path.write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    return path


def read_features(path) -> FeatureSequence:
    path = Path(path)
    layout, dim = _layout(path)
    try:
        header = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read feature header {path}: {exc}") from None
    if header.get("version") != FEATURE_FILE_VERSION or header.get("feature_layout") != layout:
        raise DataError(f"{path}: unsupported version/layout {header.get('version')}/{header.get('feature_layout')}")
    raw = (path.parent / header["data"]).read_bytes()
    n = int(header["frames"])
    if len(raw) != n * dim * 4:
        raise DataError(f"{path}: data file has {len(raw)} bytes, expected {n * dim * 4}")
    frames = np.frombuffer(raw, dtype="<f4").reshape(n, dim).astype(np.float64)
    return FeatureSequence(frames, header.get("fps", FPS), header.get("tag", ""), header.get("skeleton", "tf21"))


def read_wav(path):
    """Mono float64 samples in [-1, 1] and the sample rate.

    Accepts 16-bit integer or 32-bit float PCM; stereo is averaged.
    """
    try:
        sr, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from None
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise DataError(f"unsupported WAV sample type {data.dtype} (want int16 or float32)")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x, int(sr)


def write_beat_file(path, times) -> None:
    Path(path).write_text("".join(f"{t:.6f}\n" for t in np.asarray(times, dtype=float)))


def read_beat_file(path) -> np.ndarray:
    vals = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            vals.append(float(line))
        except ValueError:
            raise DataError(f"{path}:{line_no}: not a number: {line!r}") from None
    return np.asarray(vals, dtype=np.float64)
