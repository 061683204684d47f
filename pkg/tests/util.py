"""Shared builders for tests."""
import numpy as np
import torch

from transflower.encoder import TransformerConfig, init_module
from transflower.flow import ConditionalFlow, FlowConfig
from transflower.numcore import RngStream


def make_flow(blocks=4, channels=6, length=2, cond=8, dtype=torch.float64, seed=0,
              randomize=True, norm="actnorm", head_scale=0.1):
    """A small seeded flow; ``randomize`` moves every layer away from identity."""
    cfg = FlowConfig(blocks=blocks, channels=channels, length=length, cond_channels=cond,
                     coupling=TransformerConfig(layers=1, heads=2, d_model=8, d_ff=16), norm=norm)
    flow = ConditionalFlow(cfg).to(dtype)
    init_module(flow, RngStream(seed))
    if randomize:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for b in flow.blocks:
                b.coupling.head.weight.copy_(head_scale * torch.randn(b.coupling.head.weight.shape, generator=g))
                b.coupling.head.bias.copy_(head_scale * torch.randn(b.coupling.head.bias.shape, generator=g))
        flow.train()
        x = 2.0 * torch.randn(16, length, channels, generator=g, dtype=dtype) + 0.5
        h = torch.randn(16, length, cond, generator=g, dtype=dtype)
        with torch.no_grad():
            flow(x, h)
    flow.eval()
    return flow


def seeded(shape, seed, dtype=torch.float64):
    return torch.from_numpy(np.random.default_rng(seed).normal(size=shape)).to(dtype)


# criterion id -> (passed, one-line detail); printed by conftest at session end
ACCEPTANCE = {}


def report(ac: str, ok: bool, detail: str) -> bool:
    ok = bool(ok)
    ACCEPTANCE[ac] = (ok, detail)
    print(f"{ac} {'PASS' if ok else 'FAIL'}  {detail}")
    return ok
