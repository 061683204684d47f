"""Train a desk-scale model on the synthetic benchmark and roll it out.

    python3 demos/train_and_generate.py [steps]

A few hundred steps already show the held-out NLL dropping toward the
oracle. Rollouts only settle into a style on the beat after a few thousand
steps; the acceptance suite trains 6000 (about 20 minutes on one core).
"""
import sys
import time
import warnings

import numpy as np
import torch

from transflower.features.standardize import fit_standardizer
from transflower.features.windows import WindowDataset
from transflower.metrics.beats import beat_alignment, kinematic_beats
from transflower.metrics.frechet import fpd_fmd
from transflower.model.config import desk_preset
from transflower.model.rollout import rollout
from transflower.model.training import desk_schedule, evaluate_loss, train_loop
from transflower.model.transflower import build_model
from transflower.synthbench import SynthConfig, classify_style, make_synthetic_corpus, oracle_stats

torch.set_num_threads(1)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400

cfg = SynthConfig(n_clips=64, clip_seconds=12.5)
corpus = make_synthetic_corpus(cfg)
train, test = corpus.select(range(56)), corpus.select(range(56, 64))
std = fit_standardizer(train.motion, train.audio)
mcfg = desk_preset()


def windows(c):
    return WindowDataset([std.apply_motion(m) for m in c.motion], [std.apply_audio(a) for a in c.audio],
                         mcfg.k_x, mcfg.k_m, mcfg.l_m, mcfg.n_poses)


model = build_model(mcfg, seed=0)
t0 = time.time()
res = train_loop(model, windows(train), desk_schedule(steps),
                 callback=lambda s, v: s % 100 == 0 and print(f"step {s:5d}  nll {v:9.3f}"))
print(f"trained {steps} steps in {time.time() - t0:.0f}s")

nll = evaluate_loss(model, windows(test))
per_dim = (nll + mcfg.n_poses * np.log(std.motion_std).sum()) / (mcfg.n_poses * 67)
print(f"held-out NLL {per_dim:.3f} nats/dim, oracle {oracle_stats(cfg).entropy_rate:.3f}")

# seed with each song's count-in (on the beat, no style yet); the model has to pick a style itself
k = mcfg.k_x
seeds = np.stack([m[:k] for m in test.motion])
audio = np.stack([a[k: k + 208] for a in test.audio])
out = rollout(model, std, seeds, audio, 200, temperature=1.0, seed=1)
beats = [c.beat_times(12.0) - k / 20 for c in test.clips]
align = np.mean([beat_alignment(b[b >= 0], kinematic_beats(m)).mean for m, b in zip(out, beats)])
styles = [classify_style(cfg, m, c, start=k) for m, c in zip(out, test.clips)]
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    fmd = fpd_fmd(list(out), [m[k: k + 200] for m in corpus.motion])[1]
print(f"rollouts: alignment {align * 1000:.0f} ms, styles {styles}, FMD {fmd:.2f}")
