"""Audio features at 20 Hz: 80 log-mel bands, a spectral-flux onset envelope,
beat/downbeat salience from a DSP tracker and two band-limited flux channels.

Channel layout (85 total)::

    0..79  log-mel magnitude (16 kHz, 1024-sample Hann window, hop 800, 0-8 kHz)
    80     half-wave-rectified spectral flux
    81     beat salience       82  downbeat salience
    83     flux below 500 Hz   84  flux above 4 kHz
"""
from __future__ import annotations

from math import gcd

import numpy as np
from scipy.signal import resample_poly

from ..errors import DataError
from . import beats

SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 800
N_MELS = 80
FMIN, FMAX = 0.0, 8000.0
LOG_FLOOR = 1e-5
FRAME_RATE = SAMPLE_RATE / HOP  # 20 Hz
LOW_BAND_HZ = 500.0
HIGH_BAND_HZ = 4000.0

MEL = slice(0, N_MELS)
ONSET, BEAT, DOWNBEAT, FLUX_LOW, FLUX_HIGH = 80, 81, 82, 83, 84


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels=N_MELS, fmin=FMIN, fmax=FMAX) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(sr=SAMPLE_RATE, n_fft=N_FFT, n_mels=N_MELS, fmin=FMIN, fmax=FMAX) -> np.ndarray:
    """Triangular filters with unit peak, linear in Hz between mel-spaced edges.

    Returns ``(n_mels, n_fft // 2 + 1)``.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.linspace(0.0, sr / 2.0, n_fft // 2 + 1)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    return np.clip(np.minimum(up, down), 0.0, None)


def magnitude_spectrogram(x: np.ndarray) -> np.ndarray:
    """Centered STFT magnitude, one frame per hop: ``(frames, n_fft // 2 + 1)``."""
    n_frames = len(x) // HOP
    pad = N_FFT // 2
    xp = np.pad(x, (pad, pad + N_FFT))
    idx = np.arange(N_FFT)[None, :] + HOP * np.arange(n_frames)[:, None]
    window = np.hanning(N_FFT + 1)[:-1]
    return np.abs(np.fft.rfft(xp[idx] * window, axis=1))


def resample(x: np.ndarray, sr: int, target: int = SAMPLE_RATE) -> np.ndarray:
    if sr == target:
        return x
    g = gcd(int(sr), int(target))
    return resample_poly(x, target // g, int(sr) // g)


def rectified_flux(logmel: np.ndarray, bands=None) -> np.ndarray:
    """Mean positive log-magnitude increase across bands; frame 0 is zero."""
    sel = logmel if bands is None else logmel[:, bands]
    d = np.diff(sel, axis=0)
    flux = np.maximum(d, 0.0).mean(axis=1) if sel.shape[1] else np.zeros(len(d))
    return np.concatenate([[0.0], flux])


def onset_envelope(pcm, sample_rate: int) -> np.ndarray:
    """Spectral-flux onset envelope at 20 Hz."""
    return extract_audio_features(pcm, sample_rate)[:, ONSET]


def extract_audio_features(pcm, sample_rate: int) -> np.ndarray:
    """``(frames, 85)`` features; ``frames = floor(duration / 50 ms)``."""
    x = np.asarray(pcm, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise DataError("audio is empty")
    if not np.isfinite(x).all():
        raise DataError("audio contains non-finite samples")
    if sample_rate < 8000:
        raise DataError(f"sample rate must be at least 8 kHz, got {sample_rate}")
    n_frames = int(np.floor(len(x) / sample_rate * FRAME_RATE + 1e-9))
    if n_frames < 1:
        raise DataError("audio shorter than one 50 ms hop")
    x = resample(x, sample_rate)
    x = np.pad(x, (0, max(0, n_frames * HOP - len(x))))
    spec = magnitude_spectrogram(x)[:n_frames]
    logmel = np.log(np.maximum(spec @ mel_filterbank().T, LOG_FLOOR))

    centers = mel_center_frequencies()
    out = np.zeros((n_frames, 85))
    out[:, MEL] = logmel
    out[:, ONSET] = rectified_flux(logmel)
    out[:, FLUX_LOW] = rectified_flux(logmel, centers < LOW_BAND_HZ)
    out[:, FLUX_HIGH] = rectified_flux(logmel, centers > HIGH_BAND_HZ)
    track = beats.track_beats(out[:, ONSET], FRAME_RATE)
    out[:, BEAT] = beats.salience(track.beat_frames, out[:, ONSET], n_frames)
    out[:, DOWNBEAT] = beats.salience(track.downbeat_frames, out[:, ONSET], n_frames)
    return out
