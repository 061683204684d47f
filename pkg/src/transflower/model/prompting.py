"""Motion prompting: how the seed window steers the generated style."""
from __future__ import annotations

import csv

import numpy as np

from ..errors import DataError
from ..metrics.frechet import fpd_fmd
from .rollout import rollout


def model_generator(model, standardizer, length: int, temperature: float = 1.0, seed: int = 0, stride: int = 1):
    """``generate(seed_motion, audio, index)`` backed by :func:`rollout`.

    Each call gets its own seed derived from ``(seed, index)`` so results do not
    depend on call order. Inputs with a leading batch axis generate a batch.
    """

    def generate(seed_motion, audio, index: int = 0):
        return rollout(model, standardizer, seed_motion, audio, length, temperature,
                       stride=stride, seed=seed * 1_000_003 + index)

    generate.batched = True
    return generate


def _per_song(seed, n_songs):
    if isinstance(seed, np.ndarray) and seed.ndim == 2:
        return [seed] * n_songs
    seed = list(seed)
    if len(seed) != n_songs:
        raise DataError(f"got {len(seed)} seed motions for {n_songs} songs")
    return seed


def motion_prompt_matrix(generate, seeds: dict, songs, references: dict, min_frames: int | None = None):
    """FMD between rollouts seeded with each style and each style's ground truth.

    ``seeds`` maps style to one seed motion (used for every song) or a list
    with one seed per song; ``references`` maps style to its ground-truth
    sequences. Row = seed style, column = target style.

    Returns ``(matrix, styles)``.
    """
    styles = list(seeds)
    if set(styles) != set(references):
        raise DataError("seed styles and reference styles differ")
    songs = list(songs)
    if not songs:
        raise DataError("no songs to generate on")
    mat = np.zeros((len(styles), len(styles)))
    for i, s in enumerate(styles):
        seed_list = _per_song(seeds[s], len(songs))
        if getattr(generate, "batched", False) and len({np.shape(x) for x in seed_list}) == 1 \
                and len({np.shape(x) for x in songs}) == 1:
            gen = list(np.asarray(generate(np.stack(seed_list), np.stack(songs), i)))
        else:
            gen = [np.asarray(generate(seed_list[j], song, j)) for j, song in enumerate(songs)]
        for j, t in enumerate(styles):
            mat[i, j] = fpd_fmd(gen, references[t], min_frames=min_frames)[1]
    return mat, styles


def diagonal_column_minima(mat) -> int:
    """Number of columns whose minimum lies on the diagonal."""
    mat = np.asarray(mat)
    return int(sum(np.argmin(mat[:, j]) == j for j in range(mat.shape[1])))


def write_prompt_csv(path, mat, styles) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed_style"] + [str(s) for s in styles])
        for s, row in zip(styles, mat):
            w.writerow([str(s)] + [f"{v:.9g}" for v in row])
