"""A conditional flow is a bijection with a tractable log-determinant.

    python3 demos/flow_basics.py
"""
import numpy as np
import torch

from transflower.encoder import TransformerConfig, init_module
from transflower.flow import ConditionalFlow, FlowConfig
from transflower.numcore import RngStream, finite_diff_jacobian

torch.manual_seed(0)
cfg = FlowConfig(blocks=4, channels=6, length=2, cond_channels=8,
                 coupling=TransformerConfig(layers=1, heads=2, d_model=8, d_ff=16))
flow = ConditionalFlow(cfg).double()
init_module(flow, RngStream(0))

# coupling heads start at zero (identity); push them away so there is something to see
with torch.no_grad():
    for b in flow.blocks:
        b.coupling.head.weight.normal_(0, 0.1)
flow.train()
x = 2 * torch.randn(32, 2, 6, dtype=torch.float64) + 0.5
h = torch.randn(32, 2, 8, dtype=torch.float64)
with torch.no_grad():
    flow(x, h)  # actnorm data init
flow.eval()

with torch.no_grad():
    z, logdet = flow(x, h)
    back = flow.inverse(z, h)
print("round trip max err", (back - x).abs().max().item())


def f(v):
    with torch.no_grad():
        return flow(torch.from_numpy(v.reshape(1, 2, 6)), h[:1])[0].numpy().ravel()


jac = finite_diff_jacobian(f, x[0].numpy().ravel())
print("log-det (flow)      ", logdet[0].item())
print("log|det J| (numeric)", np.linalg.slogdet(jac)[1])

samples = flow.sample(h, RngStream(1), temperature=1.0)
print("samples", tuple(samples.shape), "tau=0 is deterministic:",
      torch.equal(flow.sample(h, RngStream(1), 0.0), flow.sample(h, RngStream(2), 0.0)))
