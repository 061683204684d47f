import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from transflower.errors import DataError, ShapeError
from transflower.features import audio, beats
from transflower.features.io import (
    read_beat_file,
    read_features,
    read_wav,
    write_beat_file,
    write_features,
)
from transflower.features.motion import (
    CANONICAL_SKELETON,
    POSE_DIM,
    SkeletonSpec,
    load_motion_json,
    pose_features,
    pose_to_motion,
)
from transflower.features.root import decode_root_motion, encode_root_motion
from transflower.features.rotations import expmap_decode, expmap_encode, yaw_rotation
from transflower.features.standardize import Standardizer, fit_standardizer
from transflower.features.windows import valid_starts, window_dataset

# ---------------------------------------------------------------- rotations


def quat_to_matrix(w, x, y, z):
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def test_expmap_encode_examples():
    assert np.allclose(expmap_encode(np.eye(3)), 0.0)
    rx = np.diag([1.0, -1.0, -1.0])  # 180 deg about x
    v = expmap_encode(rx)
    assert np.allclose(np.abs(v), [np.pi, 0, 0], atol=1e-9)
    # quaternion oracle: 90 deg about (1,1,1)/sqrt(3)
    n = np.ones(3) / np.sqrt(3)
    h = np.sin(np.pi / 4)
    r = quat_to_matrix(np.cos(np.pi / 4), *(h * n))
    assert np.allclose(expmap_encode(r), np.pi / 2 * n, atol=1e-12)


def test_expmap_decode_examples():
    assert np.allclose(expmap_decode(np.zeros(3)), np.eye(3))
    r = expmap_decode([np.pi / 2, 0, 0])
    assert np.allclose(r @ [0, 1, 0], [0, 0, 1], atol=1e-12)
    v = np.array([1.0, -2.0, 0.5])
    v *= 1e-12 / np.linalg.norm(v)
    assert np.abs(expmap_decode(v) - np.eye(3)).max() < 1e-9


def test_expmap_matches_scipy_and_series_is_continuous():
    v = np.random.default_rng(0).normal(size=(200, 3))
    assert np.allclose(expmap_decode(v), Rotation.from_rotvec(v).as_matrix(), atol=1e-12)
    u = np.array([0.3, -0.4, 0.5]) / np.linalg.norm([0.3, -0.4, 0.5])
    below, above = expmap_decode(u * 0.99e-4), expmap_decode(u * 1.01e-4)
    assert np.abs(below - above).max() < 1e-5


def test_expmap_round_trip_10k():
    rots = Rotation.random(10_000, random_state=3).as_matrix()
    v = expmap_encode(rots)
    assert np.linalg.norm(v, axis=-1).max() <= np.pi + 1e-12
    assert np.abs(expmap_decode(v) - rots).max() < 1e-6


def test_expmap_rejects_non_rotation():
    with pytest.raises(ShapeError):
        expmap_encode(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ShapeError):
        expmap_encode(2 * np.eye(3))


# ---------------------------------------------------------------- root motion


def test_root_stationary():
    pos = np.tile([0.0, 0.9, 0.0], (10, 1))
    rot = np.tile(np.eye(3), (10, 1, 1))
    f = encode_root_motion(pos, rot)
    assert np.allclose(f, np.tile([0, 0, 0.9, 0, 0, 0, 0], (10, 1)))


def test_root_forward_walk():
    yaw = 0.7
    fwd = np.array([np.sin(yaw), 0, np.cos(yaw)])
    pos = np.arange(6)[:, None] * fwd + [0, 0.9, 0]
    rot = np.tile(yaw_rotation(yaw), (6, 1, 1))
    f = encode_root_motion(pos, rot)
    assert np.allclose(f[1:, 1], 1.0) and np.allclose(f[1:, 0], 0.0, atol=1e-12)


def circle(n=21):
    step = 2 * np.pi / 20
    th = np.arange(n) * step
    pos = np.stack([1 - np.cos(th), np.full(n, 0.9), np.sin(th)], -1)
    return pos, yaw_rotation(th), step


def test_root_circle_closed_form():
    pos, rot, step = circle()
    f = encode_root_motion(pos, rot)
    # chord expressed in the previous frame: forward sin(step), sideways 1 - cos(step)
    assert np.allclose(f[1:, 1], np.sin(step), atol=1e-12)
    assert np.allclose(f[1:, 0], 1 - np.cos(step), atol=1e-12)
    assert np.allclose(f[1:, 6], step, atol=1e-12)
    assert np.allclose(f[:, 3:6], 0.0, atol=1e-12)
    p2, _ = decode_root_motion(f, (pos[0, 0], pos[0, 2]), 0.0)
    assert np.abs(p2 - pos).max() < 1e-4
    assert np.abs(p2[20] - p2[0]).max() < 1e-4  # back to the start after one revolution


def test_root_decode_zero_deltas():
    f = np.zeros((5, 7))
    f[:, 2] = 0.9
    pos, rot = decode_root_motion(f, (1.0, 2.0), 0.3)
    assert np.allclose(pos, [1.0, 0.9, 2.0])
    assert np.allclose(rot, yaw_rotation(0.3))


def smooth_trajectory(n=200, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, n)[:, None]
    k = np.arange(1, 4)[None]
    c = rng.normal(size=(3, 3)) * 0.5
    pos = np.sin(2 * np.pi * t * k) @ c
    pos[:, 1] += 0.9
    ang = np.sin(2 * np.pi * t * k) @ rng.normal(size=(3, 3)) * 0.6
    return pos, Rotation.from_rotvec(ang).as_matrix()


def test_root_round_trip_smooth():
    pos, rot = smooth_trajectory()
    f = encode_root_motion(pos, rot)
    yaw0 = np.arctan2(rot[0, 0, 2], rot[0, 2, 2])
    p2, r2 = decode_root_motion(f, (pos[0, 0], pos[0, 2]), yaw0)
    assert np.abs(p2 - pos).max() < 1e-5
    assert np.abs(r2 - rot).max() < 1e-5
    assert np.all(np.abs(f[:, 6]) <= np.pi)


def test_root_rejects_single_frame():
    with pytest.raises(DataError):
        encode_root_motion(np.zeros((1, 3)), np.eye(3)[None])


def test_pose_features_round_trip(tmp_path):
    pos, rot = smooth_trajectory(30, seed=2)
    joints = Rotation.random(30 * 20, random_state=4).as_matrix().reshape(30, 20, 3, 3)
    f = pose_features(pos, rot, joints)
    assert f.shape == (30, POSE_DIM)
    _, _, j2 = pose_to_motion(f)
    assert np.abs(j2 - joints).max() < 1e-6
    doc = {"fps": 20, "root_positions": pos.tolist(), "root_rotations": rot.tolist(),
           "joint_rotations": joints.tolist()}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    assert np.allclose(load_motion_json(path), f)
    doc["fps"] = 30
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_motion_json(path)


def test_skeleton_validation():
    assert CANONICAL_SKELETON.parents[0] == -1
    parents = list(CANONICAL_SKELETON.parents)
    parents[3] = 5
    with pytest.raises(ShapeError):
        SkeletonSpec("bad", CANONICAL_SKELETON.joints, tuple(parents))


# ---------------------------------------------------------------- audio


def test_silence():
    f = audio.extract_audio_features(np.zeros(16000), 16000)
    assert f.shape == (20, 85)
    assert np.allclose(f[:, :80], np.log(1e-5))
    assert np.all(f[:, [80, 83, 84]] == 0)


def test_sine_peaks_in_nearest_band():
    sr = 16000
    t = np.arange(sr) / sr
    f = audio.extract_audio_features(0.5 * np.sin(2 * np.pi * 440 * t), sr)
    centers = audio.mel_center_frequencies()
    expected = int(np.argmin(np.abs(centers - 440)))
    assert np.all(np.argmax(f[2:-2, :80], axis=1) == expected)


def test_filterbank_oracle():
    fb = audio.mel_filterbank()
    assert fb.shape == (80, 513)
    assert np.all(fb >= 0) and fb.max() <= 1.0
    # each filter peaks at the bin nearest its centre
    centers = audio.mel_center_frequencies()
    freqs = np.linspace(0, 8000, 513)
    assert np.all(np.abs(freqs[fb.argmax(1)] - centers) <= freqs[1])


def click_track(bpm=120.0, seconds=10.0, sr=16000):
    x = np.zeros(int(seconds * sr))
    period = 60.0 / bpm
    times = np.arange(0.5, seconds, period)
    for t in times:
        i = int(t * sr)
        x[i: i + 160] += np.hanning(160) * np.sin(2 * np.pi * 1000 * np.arange(160) / sr)
    return x, times


def test_click_track_beats():
    x, times = click_track()
    f = audio.extract_audio_features(x, 16000)
    assert f.shape == (200, 85) and np.isfinite(f).all()
    sal = f[:, audio.BEAT]
    k = np.arange(1, len(sal) - 1)
    peaks = k[(sal[k] > sal[k - 1]) & (sal[k] >= sal[k + 1])] / 20.0
    hit = [np.min(np.abs(peaks - t)) <= 0.05 for t in times]
    assert np.mean(hit) >= 0.9
    assert 0 <= sal.min() and sal.max() <= 1


def test_audio_frame_count_and_resampling():
    x = np.random.default_rng(0).normal(size=int(2.37 * 44100)) * 0.1
    f = audio.extract_audio_features(x, 44100)
    assert f.shape == (int(np.floor(2.37 / 0.05)), 85)
    assert np.isfinite(f).all()


def test_audio_errors():
    with pytest.raises(DataError):
        audio.extract_audio_features(np.zeros(0), 16000)
    with pytest.raises(DataError):
        audio.extract_audio_features(np.array([0.0, np.nan] * 1000), 16000)
    with pytest.raises(DataError):
        audio.extract_audio_features(np.zeros(8000), 4000)


def test_tempo_estimate_on_impulses():
    env = np.zeros(400)
    env[::10] = 1.0  # 120 bpm at 20 Hz
    assert beats.estimate_tempo(env, 20.0) == pytest.approx(120.0, abs=1.0)
    assert beats.estimate_tempo(np.zeros(100), 20.0) is None
    track = beats.track_beats(env, 20.0)
    assert np.all(np.diff(track.beat_frames) == 10)
    assert np.all(track.beat_frames % 10 == 0)


# ---------------------------------------------------------------- standardizer


def test_standardizer_examples(tmp_path):
    same = [np.ones((5, 67))]
    std = fit_standardizer(same, [np.ones((5, 85))])
    assert np.all(std.motion_std == 1e-6)
    assert np.all(std.apply_motion(same[0]) == 0)
    two = fit_standardizer([np.stack([np.zeros(67), 2 * np.ones(67)])],
                           [np.stack([np.zeros(85), 2 * np.ones(85)])])
    assert np.allclose(two.motion_mean, 1) and np.allclose(two.motion_std, 1)
    assert np.allclose(two.apply_motion(np.zeros((1, 67))), -1)
    rng = np.random.default_rng(0)
    m = [rng.normal(3, 2, size=(50, 67)), rng.normal(-1, 0.5, size=(30, 67))]
    a = [rng.normal(size=(80, 85))]
    std = fit_standardizer(m, a)
    assert np.abs(std.invert_motion(std.apply_motion(m[0])) - m[0]).max() < 1e-6
    z = np.concatenate([std.apply_motion(x) for x in m])
    assert np.abs(z.mean(0)).max() < 1e-6 and np.abs(z.std(0) - 1).max() < 1e-6
    std.save(tmp_path / "s.json")
    back = Standardizer.load(tmp_path / "s.json")
    assert np.array_equal(back.motion_std, std.motion_std)
    with pytest.raises(DataError):
        fit_standardizer([np.zeros((1, 67))], a)


# ---------------------------------------------------------------- windows


def test_window_count():
    m, a = np.zeros((100, 67)), np.zeros((100, 85))
    ds = window_dataset(m, a, 10, 10, 5, 2)
    # i + 1 + 5 <= 99  ->  i in 0..93
    assert len(ds) == 94
    assert len(window_dataset(m, a, 10, 10, 5, 2, stride=100)) == 1
    with pytest.raises(DataError):
        valid_starts(6, 2, 5)


def test_window_contents():
    t = 30
    m = np.arange(t, dtype=float)[:, None] + np.zeros((1, 67)) + 1
    a = np.arange(t, dtype=float)[:, None] + np.zeros((1, 85)) + 1
    ds = window_dataset([m, m + 100], [a, a + 100], k_x=4, k_m=3, l_m=2, n_poses=2)
    mc, ac, tg = ds.batch([0])
    assert np.all(mc == 0)  # i=0: all motion context is padding
    assert np.array_equal(ac[0, :, 0], [0, 0, 1, 2, 3])  # frames -2..2 (+1 offset)
    assert np.array_equal(tg[0, :, 0], [1, 2])
    k = int(np.flatnonzero((ds.clips == 1) & (ds.starts == 5))[0])
    mc, ac, tg = ds.batch([k])
    assert np.array_equal(mc[0, :, 0], [102, 103, 104, 105])
    assert np.array_equal(ac[0, :, 0], [104, 105, 106, 107, 108])
    assert np.array_equal(tg[0, :, 0], [106, 107])
    assert ds.starts[ds.clips == 0].max() == t - 2 - 2


# ---------------------------------------------------------------- files


def test_feature_file_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(12, 67))
    write_features(tmp_path / "a.mfeat", x, tag="t")
    back = read_features(tmp_path / "a.mfeat")
    assert np.array_equal(back.frames, x.astype(np.float32))
    header = json.loads((tmp_path / "a.mfeat").read_text())
    assert header["feature_layout"] == "tf67-v1" and header["frames"] == 12 and header["fps"] == 20
    assert (tmp_path / "a.mfeat.bin").stat().st_size == 12 * 67 * 4
    with pytest.raises(DataError):
        write_features(tmp_path / "b.afeat", x)
    (tmp_path / "a.mfeat.bin").write_bytes(b"\0" * 10)
    with pytest.raises(DataError):
        read_features(tmp_path / "a.mfeat")


def test_wav_and_beat_files(tmp_path):
    from scipy.io import wavfile

    st = (np.stack([np.full(100, 0.5), np.full(100, -0.25)], 1) * 32767).astype(np.int16)
    wavfile.write(tmp_path / "s.wav", 22050, st)
    x, sr = read_wav(tmp_path / "s.wav")
    assert sr == 22050 and np.allclose(x, 0.125, atol=1e-4)
    wavfile.write(tmp_path / "f.wav", 16000, np.full(50, 0.3, np.float32))
    assert np.allclose(read_wav(tmp_path / "f.wav")[0], 0.3)
    (tmp_path / "b.txt").write_text("0.5\n1.0\n1.5")
    assert np.array_equal(read_beat_file(tmp_path / "b.txt"), [0.5, 1.0, 1.5])
    write_beat_file(tmp_path / "c.txt", [0.25, 0.75])
    assert np.array_equal(read_beat_file(tmp_path / "c.txt"), [0.25, 0.75])
