"""Transformer encoders with T5-style relative position biases and the
cross-modal context encoder (motion, music, cross-modal)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericalError, ShapeError
from .numcore import RngStream


@dataclass
class TransformerConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    dropout: float = 0.0
    rel_buckets: int = 32
    rel_max_distance: int = 128

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("transformer needs at least one layer")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


def relative_position_bucket(relative_position: torch.Tensor, num_buckets=32, max_distance=128):
    """Bidirectional T5 bucketing of ``key_pos - query_pos``.

    Half of the buckets go to each sign; within a half, small distances get
    their own bucket and larger ones are log-spaced up to ``max_distance``.
    """
    half = num_buckets // 2
    ret = (relative_position > 0).long() * half
    n = relative_position.abs()
    max_exact = half // 2
    is_small = n < max_exact
    large = max_exact + (
        torch.log(n.float().clamp(min=1) / max_exact)
        / math.log(max_distance / max_exact)
        * (half - max_exact)
    ).long()
    large = torch.clamp(large, max=half - 1)
    return ret + torch.where(is_small, n, large)


class RelativePositionBias(nn.Module):
    def __init__(self, heads: int, num_buckets: int = 32, max_distance: int = 128):
        super().__init__()
        self.num_buckets = num_buckets
        self.max_distance = max_distance
        self.table = nn.Parameter(torch.zeros(num_buckets, heads))

    def forward(self, query_len: int, key_len: int) -> torch.Tensor:
        """Bias of shape ``(heads, query_len, key_len)``."""
        q = torch.arange(query_len)[:, None]
        k = torch.arange(key_len)[None, :]
        buckets = relative_position_bucket(k - q, self.num_buckets, self.max_distance)
        return self.table[buckets].permute(2, 0, 1)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.dropout = dropout

    def forward(self, x, bias=None, key_mask=None):
        b, t, d = x.shape
        q, k, v = self.qkv(x).view(b, t, 3, self.heads, d // self.heads).unbind(2)
        q, k, v = (u.transpose(1, 2) for u in (q, k, v))  # (b, heads, t, d_head)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        if bias is not None:
            scores = scores + bias
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        attn = F.dropout(attn, self.dropout, self.training)
        y = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(y)


class EncoderLayer(nn.Module):
    """Post-norm block: attention, residual, norm, feed-forward, residual, norm."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.attn = SelfAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.ff1 = nn.Linear(cfg.d_model, cfg.d_ff)
        self.ff2 = nn.Linear(cfg.d_ff, cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = cfg.dropout

    def forward(self, x, bias=None, key_mask=None):
        drop = lambda u: F.dropout(u, self.dropout, self.training)
        x = self.norm1(x + drop(self.attn(x, bias, key_mask)))
        x = self.norm2(x + drop(self.ff2(F.gelu(self.ff1(x)))))
        return x


class TransformerEncoder(nn.Module):
    """Input projection ``d_in -> d_model`` followed by ``cfg.layers`` blocks.

    One relative-bias table is shared by all layers of the encoder.
    """

    def __init__(self, cfg: TransformerConfig, d_in: int):
        super().__init__()
        self.cfg = cfg
        self.d_in = d_in
        self.proj = nn.Linear(d_in, cfg.d_model)
        self.rel_bias = RelativePositionBias(cfg.heads, cfg.rel_buckets, cfg.rel_max_distance)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.use_bias = True

    @property
    def d_model(self) -> int:
        return self.cfg.d_model

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None = None) -> torch.Tensor:
        """``x``: ``(batch, seq, d_in)`` -> ``(batch, seq, d_model)``.

        ``key_mask`` (bool, ``(batch, seq)``) restricts which positions can be
        attended to.
        """
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"expected input width {self.d_in}, got {x.shape[-1]}")
        h = self.proj(x)
        t = x.shape[1]
        bias = self.rel_bias(t, t) if self.use_bias else None
        for i, layer in enumerate(self.layers):
            h = layer(h, bias, key_mask)
            if not h.is_meta and not torch.isfinite(h).all():
                raise NumericalError(f"non-finite activations after encoder layer {i}")
        return h


def transformer_encode(encoder: TransformerEncoder, x, key_mask=None):
    return encoder(x, key_mask)


class ContextEncoder(nn.Module):
    """Motion transformer, music transformer and cross-modal transformer.

    The cross-modal input is the motion encoding followed by the music
    encoding along time; the first ``prefix`` output rows are the
    conditioning tensor ``h``.
    """

    def __init__(self, motion_cfg, audio_cfg, cross_cfg, pose_dim=67, audio_dim=85, prefix=4):
        super().__init__()
        if motion_cfg.d_model != audio_cfg.d_model:
            raise ConfigError(
                f"motion encoder d_model={motion_cfg.d_model} != music encoder d_model={audio_cfg.d_model}"
            )
        self.motion = TransformerEncoder(motion_cfg, pose_dim)
        self.audio = TransformerEncoder(audio_cfg, audio_dim)
        self.cross = TransformerEncoder(cross_cfg, motion_cfg.d_model)
        self.prefix = prefix

    @property
    def d_h(self) -> int:
        return self.cross.d_model

    def forward(self, motion: torch.Tensor, audio: torch.Tensor) -> torch.Tensor:
        hx = self.motion(motion)
        hm = self.audio(audio)
        out = self.cross(torch.cat([hx, hm], dim=1))
        return out[:, : self.prefix]


def init_module(module: nn.Module, rng: RngStream) -> None:
    """Deterministic initialization of every submodule from ``rng``.

    Linear weights ~ N(0, 1/fan_in), biases zero, layer norms identity,
    relative-bias tables ~ N(0, 0.02^2). Modules defining ``reset_from(rng)``
    handle themselves (flow layers, zero-initialized heads).
    """
    for name, m in module.named_modules():
        if hasattr(m, "reset_from"):
            m.reset_from(rng.child(_tag(name)))
        elif isinstance(m, nn.Linear):
            w = rng.child(_tag(name)).normal(tuple(m.weight.shape)) / math.sqrt(m.in_features)
            with torch.no_grad():
                m.weight.copy_(torch.from_numpy(w))
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.LayerNorm):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
        elif isinstance(m, RelativePositionBias):
            with torch.no_grad():
                m.table.copy_(torch.from_numpy(0.02 * rng.child(_tag(name)).normal(tuple(m.table.shape))))


def _tag(name: str) -> int:
    # Stable (platform independent) 63-bit tag from a module path.
    h = 1469598103934665603
    for ch in name.encode():
        h = ((h ^ ch) * 1099511628211) & ((1 << 63) - 1)
    return h
