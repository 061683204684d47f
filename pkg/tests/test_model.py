import math
import time

import numpy as np
import pytest
import torch

from transflower.errors import CheckpointError, ConfigError, NumericalError, ShapeError
from transflower.features.standardize import fit_standardizer
from transflower.features.windows import WindowDataset
from transflower.flow import FlowConfig
from transflower.metrics.frechet import fpd_fmd
from transflower.model.checkpoint import load_checkpoint, save_checkpoint
from transflower.model.config import TransflowerConfig, desk_preset, micro_preset, paper_preset, preset
from transflower.model.prompting import diagonal_column_minima, motion_prompt_matrix, write_prompt_csv
from transflower.model.rollout import rollout
from transflower.model.training import (
    TrainSchedule,
    desk_schedule,
    fine_tune,
    paper_schedule,
    read_loss_csv,
    train_loop,
    write_loss_csv,
)
from transflower.model.transflower import build_model, count_parameters, nll_loss
from transflower.numcore import ParameterStore
from transflower.synthbench import SynthConfig, clean_motion, make_synthetic_corpus


@pytest.fixture(scope="module")
def desk_data():
    corpus = make_synthetic_corpus(SynthConfig(n_clips=6, clip_seconds=8.0, seed=11))
    std = fit_standardizer(corpus.motion, corpus.audio)
    cfg = desk_preset()
    ds = WindowDataset([std.apply_motion(m) for m in corpus.motion], [std.apply_audio(a) for a in corpus.audio],
                       cfg.k_x, cfg.k_m, cfg.l_m, cfg.n_poses)
    return corpus, std, ds


def quick_schedule(steps, batch=8, seed=0):
    return TrainSchedule(lr=5e-4, milestones=(), total_steps=steps, batch_size=batch, seed=seed)


@pytest.fixture(scope="module")
def warm_model(desk_data):
    """Desk model after a few steps (actnorm initialized, coupling heads non-zero)."""
    _, _, ds = desk_data
    model = build_model(desk_preset(), seed=0)
    train_loop(model, ds, quick_schedule(15))
    return model


def param_bytes(model):
    return b"".join(t.detach().numpy().tobytes() for t in model.state_dict().values())


# ---------------------------------------------------------------- config / build


def test_presets_and_validation():
    d = desk_preset()
    assert (d.k_x, d.k_m, d.l_m, d.n_poses, d.flow.blocks, d.cross_encoder.layers) == (40, 40, 8, 4, 4, 4)
    p = paper_preset()
    assert (p.k_x, p.l_m, p.n_poses, p.flow.blocks, p.cross_encoder.d_model) == (120, 20, 20, 16, 800)
    assert TransflowerConfig.from_dict(d.to_dict()).to_dict() == d.to_dict()
    with pytest.raises(ConfigError, match="cond_channels"):
        TransflowerConfig(flow=FlowConfig(channels=67, length=4, cond_channels=32)).validate()
    with pytest.raises(ConfigError):
        preset("huge")


def test_paper_parameter_count():
    n = count_parameters(paper_preset())
    assert 100e6 <= n <= 150e6


def test_build_is_deterministic():
    a, b = build_model(desk_preset(), seed=0), build_model(desk_preset(), seed=0)
    assert param_bytes(a) == param_bytes(b)
    assert param_bytes(a) != param_bytes(build_model(desk_preset(), seed=1))


# ---------------------------------------------------------------- loss


def test_standard_normal_head_loss():
    cfg = micro_preset()
    cfg.pose_dim = 2
    cfg.flow = FlowConfig(blocks=0, channels=2, length=1, cond_channels=8, coupling=cfg.flow.coupling)
    model = build_model(cfg.validate())
    loss = nll_loss(model, np.zeros((3, 4, 2)), np.zeros((3, 6, 5)), np.zeros((3, 1, 2)))
    assert float(loss) == pytest.approx(math.log(2 * math.pi), abs=1e-12)


def test_loss_reproducible_and_mean_invariant(desk_data):
    _, _, ds = desk_data
    model = build_model(desk_preset(), seed=0)
    model.train()
    m, a, t = ds.batch(np.arange(6))
    l1 = float(nll_loss(model, m, a, t).detach())
    model2 = build_model(desk_preset(), seed=0)
    model2.train()
    assert float(nll_loss(model2, m, a, t).detach()) == l1 and np.isfinite(l1)
    model.eval()
    single = float(nll_loss(model, m, a, t).detach())
    doubled = float(nll_loss(model, np.concatenate([m, m]), np.concatenate([a, a]), np.concatenate([t, t])).detach())
    assert abs(single - doubled) < 1e-6 * max(1.0, abs(single))


def test_loss_errors(desk_data):
    _, _, ds = desk_data
    model = build_model(desk_preset(), seed=0)
    m, a, t = ds.batch(np.arange(2))
    with pytest.raises(ShapeError):
        nll_loss(model, m[:0], a[:0], t[:0])
    with pytest.raises(ShapeError):
        nll_loss(model, m, a, t[:, :2])
    det = build_model(desk_preset(), kind="deterministic")
    t = t.copy()
    t[1, 0, 0] = np.inf
    with pytest.raises(NumericalError, match="batch index 1"):
        nll_loss(det, m, a, t)


# ---------------------------------------------------------------- training


def test_schedule():
    s = paper_schedule()
    assert s.lr_at(0) == 7e-5 and s.lr_at(199_999) == 7e-5
    assert s.lr_at(200_000) == pytest.approx(7e-6, rel=1e-12)
    assert s.lr_at(400_000) == pytest.approx(7e-7, rel=1e-12)
    with pytest.raises(ConfigError):
        TrainSchedule(milestones=(10, 5))
    d = desk_schedule(1000)
    assert d.milestones == (700, 900) and d.total_steps == 1000


def test_training_reduces_loss_and_is_deterministic(desk_data, tmp_path):
    _, _, ds = desk_data
    runs = []
    for _ in range(2):
        model = build_model(desk_preset(), seed=0)
        runs.append(train_loop(model, ds, quick_schedule(200)).losses())
    a, b = runs
    assert np.array_equal(a, b)
    assert a[-20:].mean() < a[:20].mean()
    trace = [(i, 5e-4, float(v)) for i, v in enumerate(a)]
    write_loss_csv(tmp_path / "loss.csv", trace)
    assert read_loss_csv(tmp_path / "loss.csv") == trace


def test_fine_tune_zero_steps(warm_model, desk_data):
    before = param_bytes(warm_model)
    res = fine_tune(warm_model, desk_data[2], steps=0, lr=1e-3)
    assert param_bytes(warm_model) == before and res.train.trace == []


# ---------------------------------------------------------------- rollout


def test_rollout_basic_contracts(warm_model, desk_data):
    corpus, std, _ = desk_data
    seed, audio = corpus.motion[0][:40], corpus.audio[0][40:]
    assert rollout(warm_model, std, seed, audio, 0).shape == (0, 67)
    a = rollout(warm_model, std, seed, audio, 12, temperature=0.0)
    b = rollout(warm_model, std, seed, audio, 12, temperature=0.0)
    assert a.shape == (12, 67) and np.array_equal(a, b)
    s1 = rollout(warm_model, std, seed, audio, 12, seed=1)
    assert np.array_equal(s1, rollout(warm_model, std, seed, audio, 12, seed=1))
    assert not np.array_equal(s1, rollout(warm_model, std, seed, audio, 12, seed=2))
    # a single seed pose is front-padded; stride up to N
    assert rollout(warm_model, std, seed[:1], audio, 9, stride=4).shape == (9, 67)
    with pytest.raises(ValueError):
        rollout(warm_model, std, seed, audio, 5, stride=5)


def test_rollout_batch_matches_single(warm_model, desk_data):
    corpus, std, _ = desk_data
    seeds = np.stack([corpus.motion[0][:40], corpus.motion[1][:40]])
    audio = np.stack([corpus.audio[0][40:100], corpus.audio[1][40:100]])
    batch = rollout(warm_model, std, seeds, audio, 6, temperature=0.0)
    for k in range(2):
        single = rollout(warm_model, std, seeds[k], audio[k], 6, temperature=0.0)
        assert np.allclose(batch[k], single, atol=1e-5)


def test_rollout_causal_audio(warm_model, desk_data):
    corpus, std, _ = desk_data
    cfg = warm_model.cfg
    seed, audio = corpus.motion[2][:40], corpus.audio[2][40:].copy()
    base = rollout(warm_model, std, seed, audio, 20, temperature=0.0)
    i = 10
    audio[i + cfg.l_m + 1:] += 3.0
    pert = rollout(warm_model, std, seed, audio, 20, temperature=0.0)
    assert np.array_equal(base[: i + 1], pert[: i + 1])
    assert not np.array_equal(base[i + 1:], pert[i + 1:])


def test_rollout_speed(warm_model, desk_data):
    corpus, std, _ = desk_data
    t = time.perf_counter()
    rollout(warm_model, std, corpus.motion[0][:40], corpus.audio[0], 200)
    assert time.perf_counter() - t < 10.0


def test_deterministic_head_zero_init(desk_data):
    _, _, ds = desk_data
    det = build_model(desk_preset(), kind="deterministic")
    m, a, _ = ds.batch(np.arange(3))
    pred = det.predict(torch.as_tensor(m, dtype=torch.float32), torch.as_tensor(a, dtype=torch.float32))
    assert pred.shape == (3, 4, 67) and torch.all(pred == 0)


@pytest.mark.slow
def test_deterministic_head_collapses_to_conditional_mean():
    """Style switches on abruptly after a style-free count-in, so the target given
    the count-in is an even two-mode mixture with a known mean and variance."""
    cfg = SynthConfig(fade_in=0.0, n_clips=1020, clip_seconds=3.0, seed=4, tempos=(120.0,),
                      snap_to_frames=True, beat_jitter=0.0)
    corpus = make_synthetic_corpus(cfg)
    onset = round(cfg.intro * 20)
    train, test = corpus.select(range(1000)), corpus.select(range(1000, 1020))
    std = fit_standardizer(train.motion, train.audio)
    mc = desk_preset()

    def onset_windows(c):
        ds = WindowDataset([std.apply_motion(m) for m in c.motion], [std.apply_audio(a) for a in c.audio],
                           mc.k_x, mc.k_m, mc.l_m, mc.n_poses)
        return ds.subset(ds.index[:, 1] == onset)

    model = build_model(mc, seed=0, kind="deterministic")
    train_loop(model, onset_windows(train), desk_schedule(300, seed=0, lr=5e-4))
    m, a, _ = onset_windows(test).batch(np.arange(len(test.clips)))
    model.eval()
    with torch.no_grad():
        pred = model.predict(torch.as_tensor(m, dtype=torch.float32), torch.as_tensor(a, dtype=torch.float32))
    pred = std.invert_motion(pred.double().numpy())
    limbs = slice(7, 7 + cfg.active_limbs)
    spread, cond_var = [], []
    for p, clip in zip(pred, test.clips):
        t0, t1 = (clean_motion(cfg, clip, mc.n_poses, onset, s)[:, limbs] for s in range(2))
        spread.append(np.mean((p[:, limbs] - (t0 + t1) / 2) ** 2))
        cond_var.append(np.mean((t0 - t1) ** 2 / 4) + cfg.noise_limb**2)
    assert np.mean(spread) < 0.5 * np.mean(cond_var)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(warm_model, desk_data, tmp_path):
    std = desk_data[1]
    store = ParameterStore.from_module(warm_model)
    save_checkpoint(tmp_path / "ck", warm_model, step=15, standardizer=std, store=store, extra={"a": 1})
    ck = load_checkpoint(tmp_path / "ck")
    assert ck.step == 15 and ck.extra == {"a": 1} and ck.config.to_dict() == warm_model.cfg.to_dict()
    a, b = warm_model.state_dict(), ck.model.state_dict()
    assert list(a) == list(b)
    assert all(torch.equal(a[k], b[k]) and a[k].dtype == b[k].dtype for k in a)
    assert np.array_equal(ck.standardizer.motion_std, std.motion_std)


def test_checkpoint_errors(warm_model, tmp_path):
    path = save_checkpoint(tmp_path / "ck", warm_model)
    blob = (path / "params.bin").read_bytes()
    (path / "params.bin").write_bytes(blob[:1000])
    with pytest.raises(CheckpointError, match="offset"):
        load_checkpoint(path)
    path = save_checkpoint(tmp_path / "ck2", warm_model)
    manifest = (path / "manifest.json").read_text()
    (path / "manifest.json").write_text(manifest.replace("tfck-1", "tfck-0"))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nowhere")


def test_resume_equivalence(desk_data, tmp_path):
    _, _, ds = desk_data
    sched = quick_schedule(10, batch=4, seed=3)
    full = train_loop(build_model(desk_preset(), seed=0), ds, sched)

    model = build_model(desk_preset(), seed=0)
    first = train_loop(model, ds, sched, steps=5)
    save_checkpoint(tmp_path / "ck", model, step=first.step, store=first.store)
    ck = load_checkpoint(tmp_path / "ck")
    second = train_loop(ck.model, ds, sched, store=ck.store, start_step=ck.step, steps=5)
    assert first.trace + second.trace == full.trace


# ---------------------------------------------------------------- prompting


def style_split(corpus, style):
    return [m for m, s in zip(corpus.motion, corpus.styles) if s == style]


@pytest.mark.filterwarnings("ignore:.*noisy")
def test_prompt_matrix_identity_replayer(tmp_path):
    corpus = make_synthetic_corpus(SynthConfig(n_styles=3, mode_probs=(1 / 3, 1 / 3, 1 / 3), n_clips=18,
                                               clip_seconds=15.0, seed=2))
    seeds, refs = {}, {}
    for s in range(3):
        clips = style_split(corpus, s)
        seeds[s], refs[s] = clips[:2], clips[2:]

    def replay(seed_motion, audio, index):
        return seed_motion

    mat, styles = motion_prompt_matrix(replay, seeds, [None, None], refs)
    assert styles == [0, 1, 2]
    for j in range(3):
        col = mat[:, j]
        assert all(col[j] < col[i] for i in range(3) if i != j)
    assert diagonal_column_minima(mat) == 3
    write_prompt_csv(tmp_path / "p.csv", mat, styles)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "seed_style,0,1,2"

    one, _ = motion_prompt_matrix(replay, {0: seeds[0]}, [None, None], {0: refs[0]})
    assert one.shape == (1, 1) and one[0, 0] == fpd_fmd(seeds[0], refs[0])[1]
