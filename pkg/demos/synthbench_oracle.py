"""Build a synthetic corpus and look at what a perfect model would score.

    python3 demos/synthbench_oracle.py
"""
import warnings

import numpy as np

from transflower.metrics.beats import beat_alignment, kinematic_beats
from transflower.metrics.frechet import fpd_fmd
from transflower.synthbench import SynthConfig, classify_style, make_synthetic_corpus, oracle_stats

cfg = SynthConfig(n_clips=40, clip_seconds=10.0, seed=0)
corpus = make_synthetic_corpus(cfg)
st = oracle_stats(cfg)

print(f"{cfg.n_clips} clips, styles {np.bincount(corpus.styles).tolist()}")
print(f"oracle entropy rate   {st.entropy_rate:.4f} nats/dim/frame")
print(f"mode entropy          {st.mode_entropy:.4f} nats")
print(f"expected beat offset  {st.expected_beat_offset * 1000:.1f} ms")

# ground truth against its own pulses: the floor for the beat-alignment metric
offsets = [beat_alignment(c.beat_times(cfg.clip_seconds), kinematic_beats(m)).mean
           for m, c in zip(corpus.motion, corpus.clips)]
print(f"ground-truth alignment {np.mean(offsets) * 1000:.1f} ms")

correct = np.mean([classify_style(cfg, m, c) == c.style for m, c in zip(corpus.motion, corpus.clips)])
print(f"template classifier accuracy {correct:.2f}")

by_style = [[m for m, s in zip(corpus.motion, corpus.styles) if s == k] for k in range(cfg.n_styles)]
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    half = len(by_style[0]) // 2
    within = fpd_fmd(by_style[0][:half], by_style[0][half:])[1]
    between = fpd_fmd(by_style[0], by_style[1])[1]
print(f"FMD within style 0 {within:.3f}, between styles {between:.3f}")
