import math

import numpy as np
import pytest
import torch
from util import make_flow, seeded

from transflower.encoder import TransformerConfig
from transflower.errors import ConfigError, ShapeError
from transflower.flow import (
    ActNorm,
    AffineCoupling,
    BatchNormFlow,
    ConditionalFlow,
    FlowConfig,
    FlowError,
    InvConv1x1,
    UninitializedError,
    flow_forward,
    flow_inverse,
    flow_log_prob,
    flow_sample,
)
from transflower.numcore import RngStream, finite_diff_jacobian

D = torch.float64


def zero_logdet(batch=1):
    return torch.zeros(batch, dtype=D)


# ---------------------------------------------------------------- norm layers


def test_actnorm_identity_and_reciprocal_scales():
    an = ActNorm(2).double()
    an.initialized.fill_(1)
    x = seeded((1, 3, 2), 0)
    y, ld = an(x, zero_logdet())
    assert torch.equal(y, x) and float(ld.detach()) == 0
    with torch.no_grad():
        an.log_scale.copy_(torch.log(torch.tensor([2.0, 0.5], dtype=D)))
    y, ld = an(x, zero_logdet())
    assert abs(float(ld.detach())) < 1e-15  # 3 * (log 2 + log 0.5)
    back, ld2 = an(y, ld, reverse=True)
    assert torch.allclose(back, x) and abs(float(ld2.detach())) < 1e-15


def test_actnorm_data_dependent_init():
    an = ActNorm(5).double().train()
    x = seeded((64, 3, 5), 1) * torch.tensor([1.0, 2, 3, 4, 5], dtype=D) + 7
    y, _ = an(x, zero_logdet(64))
    flat = y.reshape(-1, 5)
    assert flat.mean(0).abs().max() < 1e-6
    assert (flat.std(0, unbiased=False) - 1).abs().max() < 1e-5


def test_actnorm_uninitialized_eval_rejected():
    an = ActNorm(3).double().eval()
    with pytest.raises(UninitializedError):
        an(seeded((1, 2, 3), 0), zero_logdet())


def test_batchnorm_round_trip_and_logdet():
    bn = BatchNormFlow(3).double()
    with torch.no_grad():
        bn.running_mean.copy_(torch.tensor([1.0, -1.0, 0.5]))
        bn.running_var.copy_(torch.tensor([4.0, 0.25, 1.0]))
        bn.log_gamma.copy_(torch.tensor([0.1, -0.2, 0.3]))
    bn.eval()
    x = seeded((2, 4, 3), 3)
    y, ld = bn(x, zero_logdet(2))
    log_s = bn.log_gamma - 0.5 * torch.log(bn.running_var + bn.eps)
    assert torch.allclose(ld, 4 * log_s.sum().expand(2))
    back, ld2 = bn(y, ld, reverse=True)
    assert torch.allclose(back, x, atol=1e-12) and torch.allclose(ld2, zero_logdet(2), atol=1e-12)


# ---------------------------------------------------------------- 1x1 conv


def test_invconv_orthogonal_init_zero_logdet():
    conv = InvConv1x1(6).double()
    conv.reset_from(RngStream(4))
    w = conv.weight().detach().numpy()
    assert np.allclose(w.T @ w, np.eye(6), atol=1e-10)
    _, ld = conv(seeded((1, 3, 6), 0), zero_logdet())
    assert abs(float(ld.detach())) < 1e-6


def test_invconv_diagonal_logdet():
    conv = InvConv1x1(2).double()
    conv.set_weight(np.diag([2.0, 3.0]))
    y, ld = conv(torch.tensor([[[1.0, 1.0]]], dtype=D), zero_logdet())
    assert torch.allclose(y, torch.tensor([[[2.0, 3.0]]], dtype=D))
    assert float(ld.detach()) == pytest.approx(math.log(6), abs=1e-14)


def test_invconv_dense_determinant_oracle():
    w = np.random.default_rng(7).normal(size=(6, 6))
    conv = InvConv1x1(6).double()
    conv.set_weight(w)
    assert np.allclose(conv.weight().detach().numpy(), w, atol=1e-12)
    _, ld = conv(seeded((1, 1, 6), 0), zero_logdet())
    _, logabs = np.linalg.slogdet(w)
    assert abs(float(ld.detach()) - logabs) / abs(logabs) < 1e-10
    x = seeded((3, 2, 6), 1)
    y, _ = conv(x, zero_logdet(3))
    back, _ = conv(y, zero_logdet(3), reverse=True)
    assert (back - x).abs().max() < 1e-12


# ---------------------------------------------------------------- coupling


def test_coupling_zero_init_is_identity():
    c = AffineCoupling(5, 4, TransformerConfig(layers=1, heads=2, d_model=8, d_ff=16)).double()
    from transflower.encoder import init_module

    init_module(c, RngStream(0))
    x = seeded((2, 3, 5), 0)
    y, ld = c(x, seeded((2, 3, 4), 1), zero_logdet(2))
    assert torch.equal(y, x) and torch.equal(ld, zero_logdet(2))


def test_coupling_hand_evaluation():
    c = AffineCoupling(2, 1, TransformerConfig(layers=1, heads=1, d_model=2, d_ff=2)).double()
    c.frozen = lambda z1, h: (torch.full_like(z1, math.log(2.0)), torch.ones_like(z1))
    x = torch.tensor([[[0.4, 3.0]]], dtype=D)
    y, ld = c(x, torch.zeros(1, 1, 1, dtype=D), zero_logdet())
    assert float(y[0, 0, 1].detach()) == pytest.approx(7.0) and float(y[0, 0, 0].detach()) == 0.4
    assert float(ld.detach()) == pytest.approx(math.log(2.0))


def test_coupling_round_trip_f32_and_row_check():
    flow = make_flow(blocks=1, channels=67, length=4, dtype=torch.float32)
    c = flow.blocks[0].coupling
    x = seeded((3, 4, 67), 2, torch.float32)
    h = seeded((3, 4, 8), 3, torch.float32)
    y, ld = c(x, h, torch.zeros(3))
    back, ld2 = c(y, h, ld, reverse=True)
    assert (back - x).abs().max() < 1e-5 and ld2.abs().max() < 1e-4
    with pytest.raises(ShapeError):
        c(x, h[:, :2], torch.zeros(3))


def test_scale_is_clamped():
    c = AffineCoupling(2, 1, TransformerConfig(layers=1, heads=1, d_model=2, d_ff=2)).double()
    c.frozen = lambda z1, h: (torch.full_like(z1, 50.0), torch.zeros_like(z1))
    y, ld = c(torch.tensor([[[0.0, 1.0]]], dtype=D), torch.zeros(1, 1, 1, dtype=D), zero_logdet())
    assert float(ld.detach()) == pytest.approx(5.0) and float(y[0, 0, 1].detach()) == pytest.approx(math.exp(5.0))


# ---------------------------------------------------------------- whole flow


def test_zero_blocks_is_identity():
    flow = ConditionalFlow(FlowConfig(blocks=0, channels=2, length=1, cond_channels=3)).double()
    x = torch.zeros(1, 1, 2, dtype=D)
    z, ld = flow_forward(flow, x, torch.zeros(1, 1, 3, dtype=D))
    assert torch.equal(z, x) and float(ld.detach()) == 0
    lp = flow_log_prob(flow, x, torch.zeros(1, 1, 3, dtype=D))
    assert float(lp.detach()) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    x2 = torch.tensor([[[2.0, 0.0]]], dtype=D)  # |x|^2 = 4
    assert float(flow_log_prob(flow, x2, torch.zeros(1, 1, 3, dtype=D)).detach()) == pytest.approx(-math.log(2 * math.pi) - 2)


def test_near_identity_composition():
    flow = make_flow(randomize=False)
    for b in flow.blocks:
        b.norm.initialized.fill_(1)
    x = seeded((2, 2, 6), 0)
    z, ld = flow(x, seeded((2, 2, 8), 1))
    assert ld.abs().max() < 1e-6
    zero = flow_inverse(flow, torch.zeros(1, 2, 6, dtype=D), seeded((1, 2, 8), 2))
    assert zero.abs().max() < 1e-12


def test_logdet_matches_numerical_jacobian():
    flow = make_flow(seed=3)
    h = seeded((1, 2, 8), 9)
    x0 = seeded((1, 2, 6), 8).reshape(-1).numpy()
    f = lambda v: flow(torch.from_numpy(v).reshape(1, 2, 6), h)[0].detach().numpy().reshape(-1)
    jac = finite_diff_jacobian(f, x0, h=1e-6)
    _, want = np.linalg.slogdet(jac)
    _, got = flow(torch.from_numpy(x0).reshape(1, 2, 6), h)
    assert abs(float(got.detach()) - want) / abs(want) < 1e-4


def test_round_trips_f32_f64():
    for dtype, tol in ((torch.float32, 1e-4), (torch.float64, 1e-8)):
        flow = make_flow(blocks=4, channels=67, length=4, dtype=dtype, seed=5)
        x = seeded((8, 4, 67), 1, dtype)
        h = seeded((8, 4, 8), 2, dtype)
        z, _ = flow(x, h)
        assert (flow_inverse(flow, z, h) - x).abs().max() < tol
        assert (flow(flow_inverse(flow, z, h), h)[0] - z).abs().max() < 10 * tol


def test_sampling_contracts():
    flow = make_flow(seed=6)
    h = seeded((3, 2, 8), 0)
    a = flow_sample(flow, h, RngStream(1), 0.0)
    assert torch.equal(a, flow_sample(flow, h, RngStream(2), 0.0))
    assert torch.equal(a, flow_inverse(flow, torch.zeros(3, 2, 6, dtype=D), h))
    s1 = flow_sample(flow, h, RngStream(4), 1.0)
    s2 = flow_sample(flow, h, RngStream(4), 1.0)
    assert s1.detach().numpy().tobytes() == s2.detach().numpy().tobytes()
    with pytest.raises(ValueError):
        flow_sample(flow, h, RngStream(1), -1.0)


def test_identity_flow_sample_variance():
    flow = ConditionalFlow(FlowConfig(blocks=0, channels=2, length=1, cond_channels=1)).double()
    x = flow_sample(flow, torch.zeros(100_000, 1, 1, dtype=D), RngStream(0), 1.0)
    var = x.reshape(-1, 2).var(0)
    assert torch.all((var > 0.97) & (var < 1.03))


def test_non_finite_reports_block():
    flow = make_flow(seed=1)
    with torch.no_grad():
        flow.blocks[2].conv.log_diag.fill_(800.0)
    with pytest.raises(FlowError, match="block 2") as err:
        flow(seeded((1, 2, 6), 0), seeded((1, 2, 8), 1))
    assert err.value.block == 2


def test_flow_config_validation():
    with pytest.raises(ConfigError):
        FlowConfig(channels=1)
    with pytest.raises(ConfigError):
        FlowConfig(norm="layer")
    flow = make_flow()
    with pytest.raises(ShapeError):
        flow(seeded((1, 3, 6), 0), seeded((1, 3, 8), 0))
