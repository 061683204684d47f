"""Short-time Fourier tempograms of beat-impulse or onset novelty curves."""
from __future__ import annotations

import csv

import numpy as np

from ..errors import DataError

NOVELTY_RATE = 20.0
WINDOW_SECONDS = 8.0
HOP_SECONDS = 1.0
BPM_RANGE = (30, 480)


def impulse_novelty(times, magnitudes=None, duration: float | None = None,
                    rate: float = NOVELTY_RATE, width: float = 0.05) -> np.ndarray:
    """Gaussian impulses (std ``width`` seconds) at the beat times, weighted by magnitude.

    Evaluating the kernel at the exact (off-grid) beat times avoids the
    timing jitter of snapping beats to frames; the finite width also damps
    the higher harmonics so the fundamental tempo dominates.
    """
    times = np.asarray(times, dtype=np.float64)
    mags = np.ones_like(times) if magnitudes is None else np.asarray(magnitudes, dtype=np.float64)
    if duration is None:
        duration = times.max(initial=0.0) + 1.0
    t = np.arange(int(np.floor(duration * rate))) / rate
    if width <= 0:
        out = np.zeros_like(t)
        np.add.at(out, np.clip(np.round(times * rate).astype(int), 0, len(t) - 1), mags)
        return out
    return (mags[None, :] * np.exp(-0.5 * ((t[:, None] - times[None, :]) / width) ** 2)).sum(1)


def tempogram(novelty, rate: float = NOVELTY_RATE, window: float = WINDOW_SECONDS,
              hop: float = HOP_SECONDS, bpm_range=BPM_RANGE):
    """Magnitude of the Hann-windowed Fourier transform of ``novelty`` at every
    integer bpm in ``bpm_range``.

    Returns ``(matrix (columns, bpms), bpms, column_times)``.
    """
    x = np.asarray(novelty, dtype=np.float64)
    win = int(round(window * rate))
    step = int(round(hop * rate))
    if len(x) < win:
        raise DataError(f"novelty of {len(x) / rate:.2f} s is shorter than the {window:g} s window")
    bpms = np.arange(bpm_range[0], bpm_range[1] + 1)
    n = np.arange(win)
    basis = np.exp(-2j * np.pi * (bpms[:, None] / 60.0) * n[None, :] / rate)  # (bpms, win)
    hann = np.hanning(win + 1)[:-1]
    starts = np.arange(0, len(x) - win + 1, step)
    frames = x[starts[:, None] + n[None, :]] * hann
    mat = np.abs(frames @ basis.T)
    return mat, bpms, (starts + win / 2) / rate


def write_tempogram_csv(path, mat, bpms) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([int(b) for b in bpms])
        for row in mat:
            w.writerow([f"{v:.9g}" for v in row])


def write_pgm(path, mat) -> None:
    """8-bit grayscale, bpm on the vertical axis (high tempo at the top), max-normalized."""
    img = np.asarray(mat, dtype=np.float64).T[::-1]
    peak = img.max(initial=0.0)
    data = np.zeros(img.shape, np.uint8) if peak <= 0 else np.round(255 * img / peak).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
