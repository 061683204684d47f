"""Autoregressive generation."""
from __future__ import annotations

import numpy as np
import torch

from ..numcore import RngStream


@torch.no_grad()
def rollout(model, standardizer, seed_motion, audio, length: int, temperature: float = 1.0,
            stride: int = 1, seed: int = 0, rng: RngStream | None = None) -> np.ndarray:
    """Generate ``length`` poses (raw feature space) after ``seed_motion``.

    ``seed_motion`` is ``(T0, 67)`` raw poses (front zero-padded to ``k_x``
    in standardized space); ``audio`` is ``(T, 85)`` raw features where frame
    0 is aligned with the first generated pose. Audio shorter than
    ``length + l_m`` is zero-padded (standardized space). Each step
    re-encodes the context, samples ``N`` poses and keeps the first
    ``stride``. A leading batch axis on both inputs generates a batch.
    """
    cfg = model.cfg
    if not 1 <= stride <= cfg.n_poses:
        raise ValueError(f"stride must be in [1, {cfg.n_poses}]")
    seed_motion = np.asarray(seed_motion, dtype=np.float64)
    audio = np.asarray(audio, dtype=np.float64)
    single = seed_motion.ndim == 2
    if single:
        seed_motion, audio = seed_motion[None], audio[None]
    batch = seed_motion.shape[0]
    if length <= 0:
        out = np.zeros((batch, 0, cfg.pose_dim))
        return out[0] if single else out
    rng = rng or RngStream(seed)
    model.eval()
    dt = model.dtype

    motion = np.zeros((batch, cfg.k_x + seed_motion.shape[1] + length + cfg.n_poses, cfg.pose_dim))
    pos = cfg.k_x
    if seed_motion.shape[1]:
        motion[:, pos: pos + seed_motion.shape[1]] = standardizer.apply_motion(seed_motion)
        pos += seed_motion.shape[1]
    first = pos

    total_audio = cfg.k_m - 1 + length + cfg.n_poses + cfg.l_m
    aud = np.zeros((batch, total_audio, cfg.audio_dim))
    n_avail = min(audio.shape[1], length + cfg.n_poses + cfg.l_m)
    aud[:, cfg.k_m - 1: cfg.k_m - 1 + n_avail] = standardizer.apply_audio(audio[:, :n_avail])

    i = 0
    while i < length:
        m_ctx = torch.as_tensor(motion[:, pos - cfg.k_x: pos], dtype=dt)
        a_ctx = torch.as_tensor(aud[:, i: i + cfg.k_m + cfg.l_m], dtype=dt)
        poses = model.sample(m_ctx, a_ctx, rng, temperature).double().numpy()
        keep = min(stride, length - i)
        motion[:, pos: pos + keep] = poses[:, :keep]
        pos += keep
        i += keep
    out = standardizer.invert_motion(motion[:, first: first + length])
    return out[0] if single else out
