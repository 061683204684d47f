"""Teacher-forced training with Adam and a step-decay learning-rate schedule."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ..errors import ConfigError, DataError, NumericalError
from ..numcore import ParameterStore, RngStream, adam_step, clip_grad_norm
from .transflower import nll_loss


@dataclass
class TrainSchedule:
    lr: float = 7e-5
    milestones: tuple = (200_000, 400_000)
    decay: float = 0.1
    total_steps: int = 600_000
    batch_size: int = 84
    seed: int = 0
    log_every: int = 1
    clip_norm: float = 100.0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError("learning-rate milestones must be strictly increasing")
        if self.batch_size < 1 or self.total_steps < 0 or self.log_every < 1:
            raise ConfigError("batch_size and log_every must be >= 1, total_steps >= 0")

    def lr_at(self, step: int) -> float:
        return self.lr * self.decay ** sum(step >= m for m in self.milestones)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


def paper_schedule(seed: int = 0) -> TrainSchedule:
    return TrainSchedule(lr=7e-5, milestones=(200_000, 400_000), total_steps=600_000, batch_size=84, seed=seed)


def desk_schedule(steps: int = 3000, seed: int = 0, batch_size: int = 32, lr: float = 5e-4) -> TrainSchedule:
    return TrainSchedule(
        lr=lr, milestones=(int(steps * 0.7), int(steps * 0.9)), total_steps=steps,
        batch_size=batch_size, seed=seed, log_every=10,
    )


@dataclass
class TrainResult:
    store: ParameterStore
    step: int
    trace: list = field(default_factory=list)  # (step, lr, loss)

    def losses(self) -> np.ndarray:
        return np.array([t[2] for t in self.trace])


def _batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    per_epoch = max(1, n // batch_size)
    epoch, pos = divmod(step, per_epoch)
    perm = RngStream(seed, 0x5EED, epoch).permutation(n)
    return perm[pos * batch_size: (pos + 1) * batch_size]


def train_loop(
    model,
    dataset,
    schedule: TrainSchedule,
    store: ParameterStore | None = None,
    start_step: int = 0,
    steps: int | None = None,
    callback: Callable | None = None,
) -> TrainResult:
    """Run ``steps`` optimizer steps (default: up to ``schedule.total_steps``).

    Batch order depends only on ``(seed, step)``, so resuming at
    ``start_step`` with the saved optimizer state reproduces an
    uninterrupted run exactly.
    """
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    store = store or ParameterStore.from_module(model)
    end = schedule.total_steps if steps is None else start_step + steps
    trace = []
    model.train()
    for step in range(start_step, end):
        torch.manual_seed((schedule.seed * 1_000_003 + step) & 0x7FFFFFFF)
        idx = _batch_indices(len(dataset), schedule.batch_size, schedule.seed, step)
        motion, audio, target = dataset.batch(idx)
        store.zero_grad()
        loss = nll_loss(model, motion, audio, target)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise NumericalError(f"training diverged at step {step}")
        loss.backward()
        grads = store.grads()
        clip_grad_norm(grads, schedule.clip_norm)
        lr = schedule.lr_at(step)
        adam_step(store, grads, lr)
        if step % schedule.log_every == 0:
            trace.append((step, lr, value))
        if callback is not None:
            callback(step, value)
    store.zero_grad()
    model.eval()
    return TrainResult(store, end, trace)


def write_loss_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "nll"])
        for step, lr, nll in trace:
            w.writerow([step, repr(float(lr)), repr(float(nll))])


def read_loss_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["step"]), float(r["lr"]), float(r["nll"])) for r in rows]


@torch.no_grad()
def evaluate_loss(model, dataset, batch_size: int = 256) -> float:
    """Mean per-example loss over the whole dataset (eval mode)."""
    model.eval()
    total, n = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        motion, audio, target = dataset.batch(idx)
        total += float(nll_loss(model, motion, audio, target)) * len(idx)
        n += len(idx)
    return total / n


@dataclass
class FineTuneResult:
    train: TrainResult
    before: dict | None = None
    after: dict | None = None


def fine_tune(model, subset, steps: int, lr: float, seed: int = 0, batch_size: int = 32,
              store: ParameterStore | None = None, evaluate: Callable | None = None) -> FineTuneResult:
    """Continue training on ``subset`` only, at a constant learning rate.

    ``evaluate(model) -> dict`` (e.g. FPD/FMD of rollouts against the subset)
    is called before and after so the trade-off can be inspected.
    """
    before = evaluate(model) if evaluate else None
    sched = TrainSchedule(lr=lr, milestones=(), total_steps=steps, batch_size=batch_size, seed=seed)
    result = train_loop(model, subset, sched, store=store, steps=steps) if steps > 0 else TrainResult(
        store or ParameterStore.from_module(model), 0, [])
    after = evaluate(model) if evaluate else None
    return FineTuneResult(result, before, after)
