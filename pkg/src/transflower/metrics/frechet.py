"""Fréchet distances between Gaussian fits of poses (FPD) and of
three-consecutive-pose stacks (FMD), on raw features."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, ShapeError
from ..numcore import sym_psd_sqrt


@dataclass
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray
    n: int = 0

    @property
    def dim(self) -> int:
        return len(self.mean)


def gaussian_moments(samples) -> GaussianMoments:
    """Sample mean and 1/n covariance (symmetrized)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected (n, d) samples, got {x.shape}")
    if len(x) < 2:
        raise DataError("need at least 2 samples for moment estimation")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / len(x)
    return GaussianMoments(mu, 0.5 * (cov + cov.T), len(x))


def frechet_distance(a: GaussianMoments, b: GaussianMoments) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``, clamped at 0.

    The cross term uses ``tr (S_a S_b)^(1/2) = tr (A S_b A)^(1/2)`` with
    ``A = S_a^(1/2)``, which keeps every square root symmetric PSD.
    """
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_a = sym_psd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    cross = np.trace(sym_psd_sqrt(0.5 * (inner + inner.T)))
    diff = a.mean - b.mean
    d = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(d, 0.0)


def movement_stacks(seq) -> np.ndarray:
    """Rows ``(p[i-1], p[i], p[i+1])`` for each interior frame of one sequence."""
    x = np.asarray(seq, dtype=np.float64)
    if len(x) < 3:
        return np.zeros((0, 3 * x.shape[-1]))
    return np.concatenate([x[:-2], x[1:-1], x[2:]], axis=1)


def _as_list(seqs):
    if isinstance(seqs, np.ndarray) and seqs.ndim == 2:
        return [seqs]
    return [np.asarray(s, dtype=np.float64) for s in seqs]


def fpd_fmd(generated, reference, min_frames: int | None = None) -> tuple[float, float]:
    """Fréchet pose and movement distances between two sets of sequences.

    Stacks never cross sequence boundaries. Each set must total at least
    ``3 * d + 1`` frames (202 for 67-dim poses).
    """
    gen, ref = _as_list(generated), _as_list(reference)
    d = gen[0].shape[-1]
    need = 3 * d + 1 if min_frames is None else min_frames
    for label, seqs in (("generated", gen), ("reference", ref)):
        total = sum(len(s) for s in seqs)
        if total < need:
            raise DataError(f"{label} set has {total} frames; FMD needs at least {need}")
    fpd = frechet_distance(gaussian_moments(np.concatenate(gen)), gaussian_moments(np.concatenate(ref)))
    g3 = np.concatenate([movement_stacks(s) for s in gen])
    r3 = np.concatenate([movement_stacks(s) for s in ref])
    for label, stacks in (("generated", g3), ("reference", r3)):
        if len(stacks) < 5 * stacks.shape[1]:
            warnings.warn(
                f"{label} set yields {len(stacks)} movement samples for a {stacks.shape[1]}-dim "
                "covariance (< 5 x dim); FMD estimate is noisy",
                stacklevel=2,
            )
    fmd = frechet_distance(gaussian_moments(g3), gaussian_moments(r3))
    return fpd, fmd
