"""DSP beat tracker: autocorrelation tempo estimate with a log-normal tempo
prior, then dynamic-programming beat selection (Ellis-style)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_BPM, MAX_BPM = 30.0, 480.0
PRIOR_BPM = 120.0
PRIOR_OCTAVES = 1.0


@dataclass
class BeatTrack:
    beat_frames: np.ndarray
    downbeat_frames: np.ndarray
    bpm: float | None

    @property
    def found(self) -> bool:
        return self.bpm is not None


def estimate_tempo(envelope, fps: float, min_bpm=MIN_BPM, max_bpm=MAX_BPM) -> float | None:
    """Tempo (bpm) from the onset autocorrelation weighted by a log-normal prior.

    Returns ``None`` when the envelope carries no periodicity.
    """
    env = np.asarray(envelope, dtype=np.float64)
    env = env - env.mean()
    if len(env) < 4 or not np.any(np.abs(env) > 1e-12):
        return None
    ac = np.correlate(env, env, mode="full")[len(env) - 1:]
    if ac[0] <= 0:
        return None
    ac = ac / ac[0]
    lo = max(1, int(np.floor(60.0 * fps / max_bpm)))
    hi = min(len(ac) - 2, int(np.ceil(60.0 * fps / min_bpm)))
    if hi <= lo:
        return None
    lags = np.arange(lo, hi + 1)
    bpm = 60.0 * fps / lags
    prior = np.exp(-0.5 * (np.log2(bpm / PRIOR_BPM) / PRIOR_OCTAVES) ** 2)
    score = np.maximum(ac[lags], 0.0) * prior
    k = int(np.argmax(score))
    if score[k] <= 0:
        return None
    lag = float(lags[k])
    # Parabolic refinement of the autocorrelation peak.
    j = lags[k]
    if 1 <= j < len(ac) - 1:
        a, b, c = ac[j - 1], ac[j], ac[j + 1]
        denom = a - 2 * b + c
        if denom < 0:
            lag += float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))
    return float(np.clip(60.0 * fps / lag, min_bpm, max_bpm))


def dp_beats(envelope, fps: float, bpm: float, tightness: float = 100.0) -> np.ndarray:
    """Beat frames maximizing onset strength under a log-gaussian spacing penalty."""
    env = np.asarray(envelope, dtype=np.float64)
    n = len(env)
    period = 60.0 * fps / bpm
    sd = env.std()
    if n == 0 or sd <= 0:
        return np.zeros(0, dtype=int)
    k = np.arange(-int(np.ceil(period)), int(np.ceil(period)) + 1)
    local = np.convolve(env / sd, np.exp(-0.5 * (k * 32.0 / period) ** 2), mode="same")

    offsets = np.arange(-int(round(2 * period)), -int(round(period / 2)) + 1)
    offsets = offsets[offsets < 0]
    txcost = -tightness * np.log(-offsets / period) ** 2
    cumscore = np.zeros(n)
    backlink = np.full(n, -1)
    threshold = 0.01 * local.max()
    started = False
    for i in range(n):
        prev = i + offsets
        ok = prev >= 0
        best = -1
        best_score = 0.0
        if ok.any():
            cand = txcost[ok] + cumscore[prev[ok]]
            j = int(np.argmax(cand))
            best, best_score = int(prev[ok][j]), float(cand[j])
        if not started and local[i] < threshold:
            cumscore[i] = local[i]
            continue
        started = True
        if best >= 0 and best_score > 0:
            cumscore[i] = local[i] + best_score
            backlink[i] = best
        else:
            cumscore[i] = local[i]

    # Last beat: the final local maximum of the cumulative score above half the median maximum.
    padded = np.pad(cumscore, 1, mode="edge")
    peaks = np.flatnonzero((cumscore > padded[:-2]) & (cumscore >= padded[2:]))
    if len(peaks) == 0:
        return np.zeros(0, dtype=int)
    med = np.median(cumscore[peaks])
    last = int(peaks[cumscore[peaks] >= 0.5 * med][-1])
    out = [last]
    while backlink[out[-1]] >= 0:
        out.append(int(backlink[out[-1]]))
    frames = np.array(out[::-1], dtype=int)

    # Trim weak leading/trailing beats.
    strength = local[frames]
    floor = 0.5 * np.sqrt(np.mean(strength**2))
    keep = np.flatnonzero(strength >= floor)
    if len(keep) == 0:
        return np.zeros(0, dtype=int)
    return frames[keep[0]: keep[-1] + 1]


def downbeats(frames: np.ndarray, envelope, meter: int = 4) -> np.ndarray:
    """Every ``meter``-th beat, at the phase with the largest summed onset strength."""
    if len(frames) == 0:
        return frames
    env = np.asarray(envelope, dtype=np.float64)
    scores = [env[frames[p::meter]].sum() for p in range(min(meter, len(frames)))]
    return frames[int(np.argmax(scores))::meter]


def track_beats(envelope, fps: float) -> BeatTrack:
    bpm = estimate_tempo(envelope, fps)
    if bpm is None:
        empty = np.zeros(0, dtype=int)
        return BeatTrack(empty, empty, None)
    frames = dp_beats(envelope, fps, bpm)
    return BeatTrack(frames, downbeats(frames, envelope), bpm)


def salience(frames, envelope, n_frames: int, width: float = 1.0) -> np.ndarray:
    """Beat salience curve in [0, 1]: a gaussian bump (std ``width`` frames) per
    beat, scaled by the relative onset strength at that beat."""
    out = np.zeros(n_frames)
    frames = np.asarray(frames, dtype=int)
    if len(frames) == 0:
        return out
    env = np.asarray(envelope, dtype=np.float64)
    peak = env.max()
    t = np.arange(n_frames)
    for f in frames:
        strength = 0.5 + 0.5 * (env[f] / peak if peak > 0 else 0.0)
        out = np.maximum(out, strength * np.exp(-0.5 * ((t - f) / width) ** 2))
    return out
