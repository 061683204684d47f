"""Model configuration and named presets."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields

from ..encoder import TransformerConfig
from ..errors import ConfigError
from ..flow import FlowConfig


@dataclass
class TransflowerConfig:
    motion_encoder: TransformerConfig = field(default_factory=TransformerConfig)
    audio_encoder: TransformerConfig = field(default_factory=TransformerConfig)
    cross_encoder: TransformerConfig = field(default_factory=TransformerConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    k_x: int = 40
    k_m: int = 40
    l_m: int = 8
    n_poses: int = 4
    pose_dim: int = 67
    audio_dim: int = 85
    dtype: str = "float32"
    preset: str = "custom"

    def __post_init__(self):
        for name in ("motion_encoder", "audio_encoder", "cross_encoder"):
            if isinstance(getattr(self, name), dict):
                setattr(self, name, TransformerConfig(**getattr(self, name)))
        if isinstance(self.flow, dict):
            self.flow = FlowConfig(**self.flow)

    def validate(self) -> "TransflowerConfig":
        problems = []
        if self.motion_encoder.d_model != self.audio_encoder.d_model:
            problems.append(
                f"motion_encoder.d_model={self.motion_encoder.d_model} != audio_encoder.d_model={self.audio_encoder.d_model}"
            )
        if self.flow.channels != self.pose_dim:
            problems.append(f"flow.channels={self.flow.channels} != pose_dim={self.pose_dim}")
        if self.flow.length != self.n_poses:
            problems.append(f"flow.length={self.flow.length} != n_poses={self.n_poses}")
        if self.flow.cond_channels != self.cross_encoder.d_model:
            problems.append(
                f"flow.cond_channels={self.flow.cond_channels} != cross_encoder.d_model={self.cross_encoder.d_model}"
            )
        if self.n_poses > self.k_x + self.k_m + self.l_m:
            problems.append("n_poses exceeds the cross-modal sequence length")
        if min(self.k_x, self.k_m, self.l_m, self.n_poses) < 1:
            problems.append("k_x, k_m, l_m and n_poses must be >= 1")
        if self.dtype not in ("float32", "float64"):
            problems.append(f"dtype must be float32 or float64, got {self.dtype!r}")
        if problems:
            raise ConfigError("inconsistent model configuration: " + "; ".join(problems))
        return self

    @property
    def audio_window(self) -> int:
        return self.k_m + self.l_m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TransflowerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(doc)).validate()


def _tc(layers, d_model, heads, d_ff, dropout=0.0):
    return TransformerConfig(layers=layers, heads=heads, d_model=d_model, d_ff=d_ff, dropout=dropout)


def desk_preset() -> TransflowerConfig:
    d = 64
    return TransflowerConfig(
        motion_encoder=_tc(2, d, 4, 2 * d),
        audio_encoder=_tc(2, d, 4, 2 * d),
        cross_encoder=_tc(4, d, 4, 2 * d),
        flow=FlowConfig(blocks=4, channels=67, length=4, cond_channels=d, coupling=_tc(2, d, 4, 2 * d)),
        k_x=40, k_m=40, l_m=8, n_poses=4, preset="desk",
    ).validate()


def paper_preset() -> TransflowerConfig:
    d = 800
    return TransflowerConfig(
        motion_encoder=_tc(2, d, 10, 3072),
        audio_encoder=_tc(2, d, 10, 3072),
        cross_encoder=_tc(12, d, 10, 3072),
        flow=FlowConfig(
            blocks=16, channels=67, length=20, cond_channels=d,
            coupling=_tc(2, 128, 4, 256), norm="batchnorm",
        ),
        k_x=120, k_m=120, l_m=20, n_poses=20, preset="paper",
    ).validate()


def micro_preset(dtype="float64") -> TransflowerConfig:
    """Smallest configuration exercising every layer type (gradient checks)."""
    d = 8
    return TransflowerConfig(
        motion_encoder=_tc(1, d, 2, 16),
        audio_encoder=_tc(1, d, 2, 16),
        cross_encoder=_tc(1, d, 2, 16),
        flow=FlowConfig(blocks=1, channels=4, length=1, cond_channels=d, coupling=_tc(1, d, 2, 16)),
        k_x=4, k_m=4, l_m=2, n_poses=1, pose_dim=4, audio_dim=5, dtype=dtype, preset="micro",
    ).validate()


PRESETS = {"desk": desk_preset, "paper": paper_preset, "micro": micro_preset}


def preset(name: str) -> TransflowerConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
