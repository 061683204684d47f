"""Transflower: context encoder + conditional flow head, and the
deterministic-head ablation that shares the encoder design."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..encoder import ContextEncoder, init_module
from ..errors import NumericalError, ShapeError
from ..flow import ConditionalFlow, ZeroLinear
from ..numcore import RngStream
from .config import TransflowerConfig

DTYPES = {"float32": torch.float32, "float64": torch.float64}


class Transflower(nn.Module):
    kind = "flow"

    def __init__(self, cfg: TransflowerConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = ContextEncoder(
            cfg.motion_encoder, cfg.audio_encoder, cfg.cross_encoder,
            cfg.pose_dim, cfg.audio_dim, prefix=cfg.n_poses,
        )
        self.flow = ConditionalFlow(cfg.flow)

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.cfg.dtype]

    def encode(self, motion, audio):
        return self.encoder(motion, audio)

    def log_prob(self, motion, audio, target):
        return self.flow.log_prob(target, self.encode(motion, audio))

    def example_losses(self, motion, audio, target):
        """Per-example negative log-likelihood (nats, summed over N x d_x)."""
        return -self.log_prob(motion, audio, target)

    def sample(self, motion, audio, rng: RngStream, temperature: float = 1.0):
        return self.flow.sample(self.encode(motion, audio), rng, temperature)


class DeterministicTransflower(nn.Module):
    """Same encoder; a linear projection of each prefix row predicts a pose.

    Trained with mean squared error. ``sample`` ignores rng and temperature.
    """

    kind = "deterministic"

    def __init__(self, cfg: TransflowerConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = ContextEncoder(
            cfg.motion_encoder, cfg.audio_encoder, cfg.cross_encoder,
            cfg.pose_dim, cfg.audio_dim, prefix=cfg.n_poses,
        )
        self.head = ZeroLinear(cfg.cross_encoder.d_model, cfg.pose_dim)

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.cfg.dtype]

    def predict(self, motion, audio):
        return self.head(self.encoder(motion, audio))

    def example_losses(self, motion, audio, target):
        return ((self.predict(motion, audio) - target) ** 2).flatten(1).mean(1)

    def sample(self, motion, audio, rng=None, temperature: float = 1.0):
        return self.predict(motion, audio)


def build_model(cfg: TransflowerConfig, seed: int = 0, kind: str = "flow") -> nn.Module:
    """Construct and deterministically initialize a model.

    Coupling output projections (and the deterministic head) start at zero,
    so a fresh flow is an exact identity up to its normalization layers.
    """
    cls = {"flow": Transflower, "deterministic": DeterministicTransflower}[kind]
    model = cls(cfg).to(DTYPES[cfg.dtype])
    init_module(model, RngStream(seed))
    return model


def count_parameters(cfg: TransflowerConfig, kind: str = "flow") -> int:
    """Trainable parameter count, without allocating the weights."""
    cls = {"flow": Transflower, "deterministic": DeterministicTransflower}[kind]
    with torch.device("meta"):
        model = cls(cfg)
    return sum(p.numel() for p in model.parameters())


def to_tensors(model, motion, audio, target=None):
    dt = model.dtype
    out = [torch.as_tensor(np.asarray(motion), dtype=dt), torch.as_tensor(np.asarray(audio), dtype=dt)]
    if target is not None:
        out.append(torch.as_tensor(np.asarray(target), dtype=dt))
    return out


def nll_loss(model, motion, audio, target) -> torch.Tensor:
    """Mean over the batch of the per-example training loss
    (negative log-likelihood for the flow model, MSE for the ablation)."""
    motion, audio, target = to_tensors(model, motion, audio, target)
    if len(target) == 0:
        raise ShapeError("empty batch")
    if target.shape[1:] != (model.cfg.n_poses, model.cfg.pose_dim):
        raise ShapeError(f"targets must be (batch, {model.cfg.n_poses}, {model.cfg.pose_dim})")
    losses = model.example_losses(motion, audio, target)
    bad = ~torch.isfinite(losses)
    if bad.any():
        raise NumericalError(f"non-finite loss at batch index {int(torch.nonzero(bad)[0])}")
    return losses.mean()
