"""Conditional normalizing flow over an ``(N, d_x)`` block of poses.

Each block is {normalization, invertible 1x1 convolution, attention affine
coupling}. Tensors are ``(batch, N, channels)``; log-determinants are per
batch element. The coupling transformer sees the untouched half of the
channels concatenated with the conditioning ``h`` (``(batch, N, d_h)``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import torch
from torch import nn

from .encoder import TransformerConfig, TransformerEncoder
from .errors import ConfigError, NumericalError, ShapeError, TransflowerError
from .numcore import RngStream

LOG_2PI = math.log(2 * math.pi)


class FlowError(NumericalError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class UninitializedError(TransflowerError, RuntimeError):
    pass


@dataclass
class FlowConfig:
    blocks: int = 4
    channels: int = 67
    length: int = 4
    cond_channels: int = 64
    coupling: TransformerConfig = field(default_factory=TransformerConfig)
    norm: str = "actnorm"
    scale_clamp: float = 5.0

    def __post_init__(self):
        if isinstance(self.coupling, dict):
            self.coupling = TransformerConfig(**self.coupling)
        if self.blocks < 0:
            raise ConfigError("flow blocks must be >= 0")
        if self.channels < 2:
            raise ConfigError("flow needs at least 2 channels")
        if self.norm not in ("actnorm", "batchnorm"):
            raise ConfigError(f"unknown norm mode {self.norm!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class ActNorm(nn.Module):
    """Per-channel ``y = s * (x - b)`` with data-dependent initialization.

    The first forward pass in training mode sets ``b`` and ``s`` so the batch
    comes out with zero mean and unit (population) std per channel.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.bias = nn.Parameter(torch.zeros(channels))
        self.log_scale = nn.Parameter(torch.zeros(channels))
        self.register_buffer("initialized", torch.zeros(()))

    def reset_from(self, rng):
        with torch.no_grad():
            self.bias.zero_()
            self.log_scale.zero_()
            self.initialized.zero_()

    @torch.no_grad()
    def initialize(self, x):
        flat = x.reshape(-1, x.shape[-1])
        mean = flat.mean(0)
        std = flat.std(0, unbiased=False).clamp(min=1e-6)
        self.bias.copy_(mean)
        self.log_scale.copy_(-torch.log(std))
        self.initialized.fill_(1.0)

    def forward(self, x, logdet, reverse=False):
        if not bool(self.initialized):
            if self.training and not reverse:
                self.initialize(x)
            else:
                raise UninitializedError("actnorm applied before data-dependent initialization")
        n = x.shape[1]
        if not reverse:
            return (x - self.bias) * torch.exp(self.log_scale), logdet + n * self.log_scale.sum()
        return x * torch.exp(-self.log_scale) + self.bias, logdet - n * self.log_scale.sum()


class BatchNormFlow(nn.Module):
    """``y = exp(log_gamma) * (x - mu) / sqrt(var + eps) + beta``.

    Forward uses batch statistics in training mode and running statistics in
    eval mode; the log-determinant always matches the statistics applied.
    The inverse uses running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.log_gamma = nn.Parameter(torch.zeros(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))
        self.momentum, self.eps = momentum, eps

    def reset_from(self, rng):
        with torch.no_grad():
            self.log_gamma.zero_()
            self.beta.zero_()
            self.running_mean.zero_()
            self.running_var.fill_(1.0)

    def forward(self, x, logdet, reverse=False):
        n = x.shape[1]
        if self.training and not reverse:
            flat = x.reshape(-1, x.shape[-1])
            mean, var = flat.mean(0), flat.var(0, unbiased=False)
            with torch.no_grad():
                self.running_mean.lerp_(mean.detach(), self.momentum)
                self.running_var.lerp_(var.detach(), self.momentum)
        else:
            mean, var = self.running_mean, self.running_var
        log_s = self.log_gamma - 0.5 * torch.log(var + self.eps)
        if not reverse:
            return (x - mean) * torch.exp(log_s) + self.beta, logdet + n * log_s.sum()
        return (x - self.beta) * torch.exp(-log_s) + mean, logdet - n * log_s.sum()


class InvConv1x1(nn.Module):
    """Channel mixing ``z_t <- W z_t`` with ``W = P L (U + diag(sign * exp(log_diag)))``."""

    def __init__(self, channels: int):
        super().__init__()
        c = channels
        self.register_buffer("perm", torch.eye(c))
        self.register_buffer("sign", torch.ones(c))
        self.register_buffer("lower_mask", torch.tril(torch.ones(c, c), -1))
        self.lower = nn.Parameter(torch.zeros(c, c))
        self.upper = nn.Parameter(torch.zeros(c, c))
        self.log_diag = nn.Parameter(torch.zeros(c))

    def reset_from(self, rng: RngStream):
        """Start from a random orthogonal matrix (unit |det|)."""
        c = self.log_diag.shape[0]
        q, r = np.linalg.qr(rng.normal((c, c)))
        q = q * np.sign(np.diag(r))
        p, l, u = scipy.linalg.lu(q)
        d = np.diag(u)
        self.set_weight_lu(p, l, u - np.diag(d), d)

    @torch.no_grad()
    def set_weight_lu(self, p, l, u_strict, diag):
        as_t = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64)).to(self.lower.dtype)
        self.perm.copy_(as_t(p))
        self.lower.copy_(as_t(np.tril(l, -1)))
        self.upper.copy_(as_t(np.triu(u_strict, 1)))
        self.sign.copy_(as_t(np.sign(diag)))
        self.log_diag.copy_(as_t(np.log(np.abs(diag))))

    def set_weight(self, w):
        """Load a dense invertible matrix (LU-factorized with partial pivoting)."""
        p, l, u = scipy.linalg.lu(np.asarray(w, dtype=np.float64))
        d = np.diag(u)
        self.set_weight_lu(p, l, u - np.diag(d), d)

    def _factors(self):
        c = self.log_diag.shape[0]
        eye = torch.eye(c, dtype=self.lower.dtype)
        l = self.lower * self.lower_mask + eye
        u = self.upper * self.lower_mask.T + torch.diag(self.sign * torch.exp(self.log_diag))
        return l, u

    def weight(self) -> torch.Tensor:
        l, u = self._factors()
        return self.perm @ l @ u

    def forward(self, x, logdet, reverse=False):
        n = x.shape[1]
        dlog = n * self.log_diag.sum()
        if not reverse:
            return x @ self.weight().T, logdet + dlog
        l, u = self._factors()
        # W^{-1} z = U^{-1} L^{-1} P^T z, as triangular solves on column vectors.
        cols = (x @ self.perm).reshape(-1, x.shape[-1]).T
        y = torch.linalg.solve_triangular(l, cols, upper=False, unitriangular=True)
        y = torch.linalg.solve_triangular(u, y, upper=True)
        return y.T.reshape(x.shape), logdet - dlog


class ZeroLinear(nn.Linear):
    """Linear layer initialized to exactly zero."""

    def reset_from(self, rng):
        with torch.no_grad():
            self.weight.zero_()
            self.bias.zero_()


class AffineCoupling(nn.Module):
    """``z'' <- exp(clamp(A)) * z'' + B`` with ``(A, B) = f_ct([z', h])``.

    ``z'`` is the first ``floor(d_x / 2)`` channels and passes through.
    """

    def __init__(self, channels: int, cond_channels: int, cfg: TransformerConfig, clamp: float = 5.0):
        super().__init__()
        self.split = channels // 2
        self.rest = channels - self.split
        self.clamp = clamp
        self.net = TransformerEncoder(cfg, self.split + cond_channels)
        self.head = ZeroLinear(cfg.d_model, 2 * self.rest)
        self.frozen = None  # test hook: callable (z1, h) -> (raw_a, shift)

    def params(self, z1, h):
        if self.frozen is not None:
            return self.frozen(z1, h)
        out = self.head(self.net(torch.cat([z1, h], dim=-1)))
        return out[..., : self.rest], out[..., self.rest:]

    def forward(self, x, h, logdet, reverse=False):
        if h.shape[1] != x.shape[1]:
            raise ShapeError(f"conditioning has {h.shape[1]} rows, flow length is {x.shape[1]}")
        z1, z2 = x[..., : self.split], x[..., self.split:]
        raw, shift = self.params(z1, h)
        log_s = torch.clamp(raw, -self.clamp, self.clamp)
        if not reverse:
            z2 = torch.exp(log_s) * z2 + shift
            logdet = logdet + log_s.flatten(1).sum(1)
        else:
            z2 = (z2 - shift) * torch.exp(-log_s)
            logdet = logdet - log_s.flatten(1).sum(1)
        return torch.cat([z1, z2], dim=-1), logdet


class FlowBlock(nn.Module):
    def __init__(self, cfg: FlowConfig):
        super().__init__()
        norm_cls = ActNorm if cfg.norm == "actnorm" else BatchNormFlow
        self.norm = norm_cls(cfg.channels)
        self.conv = InvConv1x1(cfg.channels)
        self.coupling = AffineCoupling(cfg.channels, cfg.cond_channels, cfg.coupling, cfg.scale_clamp)

    def forward(self, x, h, logdet, reverse=False):
        if not reverse:
            x, logdet = self.norm(x, logdet)
            x, logdet = self.conv(x, logdet)
            return self.coupling(x, h, logdet)
        x, logdet = self.coupling(x, h, logdet, reverse=True)
        x, logdet = self.conv(x, logdet, reverse=True)
        return self.norm(x, logdet, reverse=True)


class ConditionalFlow(nn.Module):
    def __init__(self, cfg: FlowConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(FlowBlock(cfg) for _ in range(cfg.blocks))

    def _check(self, x, h):
        if x.shape[1:] != (self.cfg.length, self.cfg.channels):
            raise ShapeError(f"expected (batch, {self.cfg.length}, {self.cfg.channels}), got {tuple(x.shape)}")
        if h.shape[1] != self.cfg.length:
            raise ShapeError(f"conditioning has {h.shape[1]} rows, flow length is {self.cfg.length}")

    def forward(self, x, h):
        """``x -> (z, logdet)``."""
        self._check(x, h)
        logdet = x.new_zeros(x.shape[0])
        for i, block in enumerate(self.blocks):
            try:
                x, logdet = block(x, h, logdet)
            except FlowError:
                raise
            except NumericalError as exc:
                raise FlowError(f"flow block {i}: {exc}", block=i) from exc
            if not (torch.isfinite(x).all() and torch.isfinite(logdet).all()):
                raise FlowError(f"non-finite values after flow block {i}", block=i)
        return x, logdet

    def inverse(self, z, h):
        self._check(z, h)
        logdet = z.new_zeros(z.shape[0])
        for i in reversed(range(len(self.blocks))):
            try:
                z, logdet = self.blocks[i](z, h, logdet, reverse=True)
            except FlowError:
                raise
            except NumericalError as exc:
                raise FlowError(f"inverting flow block {i}: {exc}", block=i) from exc
            if not torch.isfinite(z).all():
                raise FlowError(f"non-finite values after inverting flow block {i}", block=i)
        return z

    def log_prob(self, x, h):
        z, logdet = self.forward(x, h)
        d = z.shape[1] * z.shape[2]
        return -0.5 * (z**2).flatten(1).sum(1) - 0.5 * d * LOG_2PI + logdet

    def sample(self, h, rng: RngStream, temperature: float = 1.0):
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        shape = (h.shape[0], self.cfg.length, self.cfg.channels)
        if temperature == 0:
            z = h.new_zeros(shape)
        else:
            z = temperature * rng.torch_normal(shape, dtype=h.dtype)
        return self.inverse(z, h)


def flow_forward(flow, x, h):
    return flow(x, h)


def flow_inverse(flow, z, h):
    return flow.inverse(z, h)


def flow_log_prob(flow, x, h):
    return flow.log_prob(x, h)


def flow_sample(flow, h, rng, temperature=1.0):
    return flow.sample(h, rng, temperature)
