"""Checkpoint directory: ``manifest.json`` + ``params.bin``.

``params.bin`` is a sequence of records::

    u32 LE  name length
    bytes   UTF-8 name
    u8      dtype code (0 = f32, 1 = f64)
    u8      rank
    u64 LE  x rank dims
    bytes   raw little-endian data
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError
from ..features.standardize import Standardizer
from ..numcore import ParameterStore
from .config import TransflowerConfig
from .transflower import DTYPES, DeterministicTransflower, Transflower

CHECKPOINT_VERSION = "tfck-1"
_CODES = {torch.float32: 0, torch.float64: 1}
_NP = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensors(path, tensors) -> None:
    with open(path, "wb") as fh:
        for name, t in tensors.items():
            t = t.detach().cpu()
            if t.dtype not in _CODES:
                t = t.to(torch.float32)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", _CODES[t.dtype], t.dim()))
            fh.write(struct.pack(f"<{t.dim()}Q", *t.shape))
            fh.write(t.contiguous().numpy().astype(_NP[_CODES[t.dtype]], copy=False).tobytes())


def read_tensors(path) -> "OrderedDict[str, torch.Tensor]":
    buf = Path(path).read_bytes()
    out = OrderedDict()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError(f"{path}: truncated while reading {what} at offset {off}")
        chunk = buf[off: off + n]
        off += n
        return chunk

    while off < len(buf):
        (n,) = struct.unpack("<I", take(4, "name length"))
        name = take(n, "name").decode("utf-8")
        code, rank = struct.unpack("<BB", take(2, f"header of {name!r}"))
        if code not in _NP:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r} at offset {off - 2}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(count * _NP[code].itemsize, f"data of {name!r}"), dtype=_NP[code])
        out[name] = torch.from_numpy(data.reshape(dims).copy())
    return out


@dataclass
class Checkpoint:
    model: torch.nn.Module
    config: TransflowerConfig
    step: int
    standardizer: Standardizer | None
    store: ParameterStore
    extra: dict


def save_checkpoint(path, model, step: int = 0, standardizer: Standardizer | None = None,
                    store: ParameterStore | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    store = store or ParameterStore.from_module(model)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": model.cfg.to_dict(),
        "step": int(step),
        "standardizer": standardizer.to_dict() if standardizer is not None else None,
        "extra": extra or {},
    }
    tensors = OrderedDict(model.state_dict())
    tensors.update(store.state_tensors())
    write_tensors(path / "params.bin", tensors)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest in {path}: {exc}") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {manifest.get('version')!r} not supported (want {CHECKPOINT_VERSION!r})"
        )
    cfg = TransflowerConfig.from_dict(manifest["config"])
    cls = {"flow": Transflower, "deterministic": DeterministicTransflower}[manifest.get("kind", "flow")]
    model = cls(cfg).to(DTYPES[cfg.dtype])
    tensors = read_tensors(path / "params.bin")
    state = model.state_dict()
    model_part = OrderedDict()
    opt_part = OrderedDict()
    for name, t in tensors.items():
        if name in state:
            model_part[name] = t
        elif name.startswith("adam.") and name.split(".", 2)[2] in state:
            opt_part[name] = t
        else:
            raise CheckpointError(f"unknown tensor name {name!r} in checkpoint")
    missing = [k for k in state if k not in model_part]
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {missing[:5]}")
    model.load_state_dict(model_part)
    store = ParameterStore.from_module(model)
    if opt_part:
        store.load_state_tensors(opt_part)
    std = manifest.get("standardizer")
    model.eval()
    return Checkpoint(model, cfg, int(manifest["step"]), Standardizer.from_dict(std) if std else None,
                      store, manifest.get("extra", {}))
