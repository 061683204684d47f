"""Synthetic music-to-dance corpus with a known conditional distribution.

Each clip has a tempo, a first-beat time, a style drawn from the mode
probabilities and a clip-level timing offset of the motion relative to the
music (``beat_jitter`` std, seconds). Given those, every frame is a
deterministic pose plus i.i.d. Gaussian innovations with a fixed covariance:

* hip height ``y = height - bob * sin(phase)`` so the steepest downward
  velocity (the kinematic beat) lands on each musical beat;
* ``active_limbs`` joint channels oscillate at the beat rate; each style has
  its own per-channel amplitude and phase pattern, so styles differ in their
  cross-channel covariance and not only in their timing. Each clip opens
  with a style-neutral count-in (``intro`` seconds, limbs at rest, hips on
  the beat), then the oscillation fades in over ``fade_in`` seconds. The
  opening is a natural neutral seed: it carries the beat but not the style,
  and the style then emerges gradually from the noise;
* the remaining joint channels carry equicorrelated noise, root channels
  carry independent noise.

Because the deterministic part is identified by the context, the entropy
rate of the motion process is the entropy of the innovations, available in
closed form. Music features are rendered directly into the 85-channel
layout: a decaying percussive envelope in the mel bands plus beat-synchronous
pulses in the onset/beat channels.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .features.io import read_features, write_features
from .features.motion import AUDIO_DIM, FPS, POSE_DIM, Y
from .numcore import RngStream

ROOT_NOISE_CHANNELS = (0, 1, 3, 4, 5, 6)
LIMB_START = 7


@dataclass
class SynthConfig:
    n_styles: int = 2
    mode_probs: tuple = (0.5, 0.5)
    tempos: tuple = (100.0, 120.0, 140.0)
    beat_jitter: float = 0.02
    clip_seconds: float = 20.0
    n_clips: int = 60
    seed: int = 0
    height: float = 0.9
    bob: float = 0.05
    limb_amplitude: tuple = (0.3, 0.6)
    active_limbs: int = 24
    noise_root: float = 0.01
    noise_height: float = 0.004
    noise_limb: float = 0.05
    noise_unused: float = 0.02
    unused_corr: float = 0.5
    intro: float = 2.0  # seconds of style-neutral count-in: hips on the beat, limbs at rest
    fade_in: float = 2.0  # seconds of raised-cosine limb amplitude ramp after the intro
    snap_to_frames: bool = False  # first beat on the 20 Hz frame grid

    def __post_init__(self):
        self.mode_probs = tuple(float(p) for p in self.mode_probs)
        self.tempos = tuple(float(t) for t in self.tempos)
        self.limb_amplitude = tuple(self.limb_amplitude)
        if len(self.mode_probs) != self.n_styles:
            raise ConfigError("mode_probs must have one entry per style")
        if abs(sum(self.mode_probs) - 1.0) > 1e-9 or min(self.mode_probs) < 0:
            raise ConfigError("mode probabilities must be non-negative and sum to 1")
        if not self.tempos or min(self.tempos) < 60 or max(self.tempos) > 180:
            raise ConfigError("tempos must lie within 60-180 bpm")
        if not 0 <= self.active_limbs <= POSE_DIM - LIMB_START:
            raise ConfigError("active_limbs out of range")
        if self.fade_in < 0 or self.intro < 0:
            raise ConfigError("intro and fade_in must be >= 0")
        if not -1.0 / max(1, self.n_unused - 1) < self.unused_corr < 1.0:
            raise ConfigError("unused_corr must keep the noise covariance positive definite")

    @property
    def n_frames(self) -> int:
        return int(round(self.clip_seconds * FPS))

    @property
    def n_unused(self) -> int:
        return POSE_DIM - LIMB_START - self.active_limbs

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class ClipInfo:
    style: int
    tempo: float
    first_beat: float
    jitter: float

    @property
    def period(self) -> float:
        return 60.0 / self.tempo

    def beat_times(self, duration: float) -> np.ndarray:
        k = np.arange(int(np.ceil((duration - self.first_beat) / self.period)) + 1)
        t = self.first_beat + k * self.period
        return t[t < duration - 1e-9]


@dataclass
class SynthCorpus:
    config: SynthConfig
    motion: list = field(default_factory=list)
    audio: list = field(default_factory=list)
    clips: list = field(default_factory=list)

    @property
    def styles(self) -> np.ndarray:
        return np.array([c.style for c in self.clips])

    def select(self, idx) -> "SynthCorpus":
        idx = list(idx)
        return SynthCorpus(self.config, [self.motion[i] for i in idx],
                           [self.audio[i] for i in idx], [self.clips[i] for i in idx])


def style_pattern(cfg: SynthConfig, style: int):
    """Per-channel amplitudes and phases of the active limb channels for one style."""
    rng = RngStream(cfg.seed, 0xA11, style)
    lo, hi = cfg.limb_amplitude
    amp = rng.uniform(lo, hi, cfg.active_limbs)
    phase = rng.uniform(0.0, 2 * np.pi, cfg.active_limbs)
    return amp, phase


def innovation_cov(cfg: SynthConfig) -> np.ndarray:
    """Covariance of the per-frame Gaussian innovations, ``(67, 67)``."""
    cov = np.zeros((POSE_DIM, POSE_DIM))
    for c in ROOT_NOISE_CHANNELS:
        cov[c, c] = cfg.noise_root**2
    cov[Y, Y] = cfg.noise_height**2
    a = LIMB_START + cfg.active_limbs
    cov[LIMB_START:a, LIMB_START:a] = np.eye(cfg.active_limbs) * cfg.noise_limb**2
    n = cfg.n_unused
    cov[a:, a:] = cfg.noise_unused**2 * ((1 - cfg.unused_corr) * np.eye(n) + cfg.unused_corr * np.ones((n, n)))
    return cov


def _noise_factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor of ``cov``; channels with zero variance stay noise-free."""
    live = np.diag(cov) > 0
    chol = np.zeros_like(cov)
    chol[np.ix_(live, live)] = np.linalg.cholesky(cov[np.ix_(live, live)])
    return chol


def clean_motion(cfg: SynthConfig, clip: ClipInfo, n_frames: int, start: int = 0, style=None) -> np.ndarray:
    """Noise-free poses for frames ``start .. start + n_frames - 1`` of a clip."""
    style = clip.style if style is None else style
    t = (start + np.arange(n_frames)) / FPS
    phase = 2 * np.pi * (t - clip.first_beat - clip.jitter) / clip.period
    x = np.zeros((n_frames, POSE_DIM))
    x[:, Y] = cfg.height - cfg.bob * np.sin(phase)
    amp, base = style_pattern(cfg, style)
    a = LIMB_START + cfg.active_limbs
    x[:, LIMB_START:a] = fade_envelope(cfg, t)[:, None] * amp * np.sin(phase[:, None] + base)
    return x


def fade_envelope(cfg: SynthConfig, t) -> np.ndarray:
    """Limb amplitude: 0 during the intro, raised-cosine ramp to 1 over ``fade_in``."""
    t = np.asarray(t, dtype=np.float64) - cfg.intro
    if cfg.fade_in <= 0:
        return (t >= 0).astype(np.float64)
    u = np.clip(t / cfg.fade_in, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * u)


def render_audio(cfg: SynthConfig, clip: ClipInfo, n_frames: int) -> np.ndarray:
    t = np.arange(n_frames) / FPS
    rel = t - clip.first_beat
    # tolerant floor: a beat sitting on a frame must not wrap to a full period
    since = np.maximum(rel - np.floor(rel / clip.period + 1e-9) * clip.period, 0.0)
    env = np.exp(-since / 0.15)
    bands = np.arange(80)
    profile = np.exp(-bands / 20.0)
    out = np.zeros((n_frames, AUDIO_DIM))
    out[:, :80] = np.log(1e-3 + env[:, None] * profile[None, :])
    k = np.arange(-1, int(np.ceil(n_frames / FPS / clip.period)) + 2)
    beats = clip.first_beat + k * clip.period
    bump = np.exp(-0.5 * ((t[:, None] - beats[None, :]) / 0.025) ** 2)
    pulse = bump.sum(1)
    down = bump[:, (k % 4) == 0].sum(1)
    out[:, 80] = pulse
    out[:, 81] = pulse
    out[:, 82] = down
    out[:, 83] = 0.8 * pulse
    out[:, 84] = 0.3 * pulse
    return out


def draw_clip(cfg: SynthConfig, rng: RngStream) -> ClipInfo:
    style = int(rng.choice(cfg.n_styles, p=np.array(cfg.mode_probs)))
    tempo = float(cfg.tempos[int(rng.integers(len(cfg.tempos)))])
    first_beat = float(rng.uniform(0.0, 60.0 / tempo))
    if cfg.snap_to_frames:
        first_beat = float(np.floor(first_beat * FPS)) / FPS
    jitter = float(cfg.beat_jitter * rng.normal(()))
    return ClipInfo(style, tempo, first_beat, jitter)


def render_clip(cfg: SynthConfig, clip: ClipInfo, rng: RngStream, n_frames: int | None = None,
                style=None, start: int = 0):
    """``(motion, audio)`` for one clip; innovations are drawn from ``rng``."""
    n = cfg.n_frames if n_frames is None else n_frames
    chol = _noise_factor(innovation_cov(cfg))
    motion = clean_motion(cfg, clip, n, start, style) + rng.normal((n, POSE_DIM)) @ chol.T
    return motion, render_audio(cfg, clip, start + n)[start:]


def make_synthetic_corpus(cfg: SynthConfig) -> SynthCorpus:
    corpus = SynthCorpus(cfg)
    root = RngStream(cfg.seed, 0xC0)
    for j in range(cfg.n_clips):
        clip = draw_clip(cfg, root.child(j, 0))
        motion, audio = render_clip(cfg, clip, root.child(j, 1))
        corpus.motion.append(motion)
        corpus.audio.append(audio)
        corpus.clips.append(clip)
    return corpus


def classify_style(cfg: SynthConfig, motion, clip: ClipInfo, start: int = 0) -> int:
    """Style whose noise-free limb pattern (on the clip's beat grid) is nearest in MSE."""
    motion = np.asarray(motion, dtype=np.float64)
    a = LIMB_START + cfg.active_limbs
    errs = [
        np.mean((motion[:, LIMB_START:a] - clean_motion(cfg, clip, len(motion), start, s)[:, LIMB_START:a]) ** 2)
        for s in range(cfg.n_styles)
    ]
    return int(np.argmin(errs))


def gaussian_entropy(std: float) -> float:
    return 0.5 * math.log(2 * math.pi * math.e) + math.log(std)


@dataclass
class OracleStats:
    entropy_rate: float  # nats per pose dimension per frame
    mode_probs: tuple
    mode_entropy: float  # nats, entropy of the style choice
    expected_beat_offset: float  # seconds, E|jitter|


def oracle_stats(cfg: SynthConfig) -> OracleStats:
    cov = innovation_cov(cfg)
    if np.any(np.diag(cov) <= 0):
        raise ConfigError("oracle entropy needs strictly positive Gaussian innovations on every channel")
    sign, logdet = np.linalg.slogdet(2 * np.pi * np.e * cov)
    if sign <= 0:
        raise ConfigError("innovation covariance is not positive definite")
    p = np.array(cfg.mode_probs)
    p = p[p > 0]
    return OracleStats(
        entropy_rate=float(0.5 * logdet / POSE_DIM),
        mode_probs=tuple(cfg.mode_probs),
        mode_entropy=float(-(p * np.log(p)).sum()),
        expected_beat_offset=cfg.beat_jitter * math.sqrt(2 / math.pi),
    )


def write_corpus(corpus: SynthCorpus, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip", "style", "tempo", "first_beat", "jitter"])
        for j, (m, a, c) in enumerate(zip(corpus.motion, corpus.audio, corpus.clips)):
            name = f"clip_{j:04d}"
            write_features(out / f"{name}.mfeat", m, tag=f"synth style={c.style}")
            write_features(out / f"{name}.afeat", a, tag=f"synth tempo={c.tempo:g}")
            w.writerow([name, c.style, f"{c.tempo:g}", repr(c.first_beat), repr(c.jitter)])
    return out


def read_labels(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_corpus_dir(data_dir):
    """Load every ``*.mfeat``/``*.afeat`` pair in a directory (sorted by name).

    Returns ``(names, motion list, audio list)``.
    """
    d = Path(data_dir)
    names = sorted(p.stem for p in d.glob("*.mfeat"))
    if not names:
        raise DataError(f"no .mfeat files in {d}")
    motion, audio = [], []
    for n in names:
        if not (d / f"{n}.afeat").exists():
            raise DataError(f"{n}.mfeat has no matching {n}.afeat")
        motion.append(read_features(d / f"{n}.mfeat").frames)
        audio.append(read_features(d / f"{n}.afeat").frames)
    return names, motion, audio
