"""Numerical substrate: seeded random streams, parameter stores with Adam,
finite-difference oracles and a symmetric PSD square root.

Dense arrays are numpy ``ndarray`` (metrics, features, oracles) and torch
``Tensor`` (anything that needs gradients). f64 is used for verification,
f32 for training.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Mapping

import numpy as np
import torch

from .errors import NumericalError, ShapeError

_MASK64 = (1 << 64) - 1


class RngStream:
    """Counter-based random stream (Philox) keyed by a 64-bit seed.

    Identical seed and call sequence give identical draws on every platform.
    ``child(*tags)`` derives an independent stream, so e.g. the shuffle order
    of epoch 7 does not depend on how many draws earlier epochs made.
    """

    def __init__(self, seed: int, *tags: int):
        self.seed = int(seed) & _MASK64
        self.tags = tuple(int(t) for t in tags)
        key = np.random.SeedSequence([self.seed, *self.tags]).generate_state(2, np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, *tags: int) -> "RngStream":
        return RngStream(self.seed, *self.tags, *tags)

    @property
    def position(self) -> dict:
        return self._gen.bit_generator.state

    @position.setter
    def position(self, state: dict) -> None:
        self._gen.bit_generator.state = state

    def normal(self, shape, dtype=np.float64) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64).astype(dtype, copy=False)

    def uniform(self, low=0.0, high=1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high=None, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, shape=None, p=None) -> np.ndarray:
        return self._gen.choice(n, size=shape, p=p)

    def torch_normal(self, shape, dtype=torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.normal(shape)).to(dtype)


class ParameterStore:
    """Named trainable tensors plus per-parameter Adam state.

    The tensors are shared with the owning module (``from_module``), so an
    update through the store is visible to the module immediately.
    """

    def __init__(self, params: Mapping[str, torch.Tensor]):
        self.params: "OrderedDict[str, torch.Tensor]" = OrderedDict(params)
        self.exp_avg = OrderedDict((k, torch.zeros_like(v)) for k, v in self.params.items())
        self.exp_avg_sq = OrderedDict((k, torch.zeros_like(v)) for k, v in self.params.items())
        self.steps = OrderedDict((k, 0) for k in self.params)

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParameterStore":
        return cls(OrderedDict(module.named_parameters()))

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def grads(self) -> "OrderedDict[str, torch.Tensor]":
        """Collect ``.grad`` of every parameter (zeros where unset)."""
        out = OrderedDict()
        for name, p in self.params.items():
            out[name] = p.grad.detach() if p.grad is not None else torch.zeros_like(p)
        return out

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> "OrderedDict[str, torch.Tensor]":
        """Optimizer state flattened to named tensors (for checkpoints)."""
        out = OrderedDict()
        for name in self.params:
            out[f"adam.m.{name}"] = self.exp_avg[name]
            out[f"adam.v.{name}"] = self.exp_avg_sq[name]
            out[f"adam.t.{name}"] = torch.tensor(float(self.steps[name]), dtype=torch.float64)
        return out

    def load_state_tensors(self, tensors: Mapping[str, torch.Tensor]) -> None:
        for name, p in self.params.items():
            self.exp_avg[name] = tensors[f"adam.m.{name}"].to(p.dtype).clone()
            self.exp_avg_sq[name] = tensors[f"adam.v.{name}"].to(p.dtype).clone()
            self.steps[name] = int(tensors[f"adam.t.{name}"].item())


@torch.no_grad()
def adam_step(
    store: ParameterStore,
    grads: Mapping[str, torch.Tensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterStore:
    """Bias-corrected Adam update of every parameter named in ``grads``.

    All gradients are validated before any parameter is touched.
    """
    for name, g in grads.items():
        if name not in store.params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if tuple(g.shape) != tuple(store.params[name].shape):
            raise ShapeError(
                f"gradient shape {tuple(g.shape)} does not match parameter {name!r} "
                f"{tuple(store.params[name].shape)}"
            )
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")

    for name, g in grads.items():
        p = store.params[name]
        g = g.to(p.dtype)
        t = store.steps[name] + 1
        m = store.exp_avg[name].mul_(beta1).add_(g, alpha=1 - beta1)
        v = store.exp_avg_sq[name].mul_(beta2).addcmul_(g, g, value=1 - beta2)
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.sub_(lr * m_hat / (v_hat.sqrt() + eps))
        store.steps[name] = t
    return store


def clip_grad_norm(grads: Mapping[str, torch.Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(torch.sqrt(sum((g.double() ** 2).sum() for g in grads.values())))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g.mul_(scale)
    return total


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def finite_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian ``J[i, j] = d f_i / d x_j`` of a vector function."""
    x = np.array(x, dtype=np.float64).reshape(-1)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        fp = np.asarray(f(x + e), dtype=np.float64).reshape(-1)
        fm = np.asarray(f(x - e), dtype=np.float64).reshape(-1)
        if not (np.isfinite(fp).all() and np.isfinite(fm).all()):
            raise NumericalError(f"non-finite function value at coordinate {j}")
        cols.append((fp - fm) / (2 * h))
    return np.stack(cols, axis=1)


def sym_psd_sqrt(m, tol: float = 1e-8) -> np.ndarray:
    """Square root of a symmetric PSD matrix via eigendecomposition.

    Negative eigenvalues (round-off) are clamped to zero.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > tol * scale:
        raise ShapeError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (s + s.T)


def as_tensor(x, dtype=torch.float32) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def parameter_count(params: Iterable[torch.Tensor]) -> int:
    return sum(int(p.numel()) for p in params)
