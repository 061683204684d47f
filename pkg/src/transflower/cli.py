"""``tf``: command-line entry point for the music-to-dance pipeline.

Every subcommand takes ``--config <json>`` plus flag overrides (flags win)
and returns 0 on success, 1 on usage/config errors, 2 on data errors and 3
on numerical failures. Errors print one line ``error[<code>]: <message>``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, NumericalError, ShapeError, TransflowerError

log = logging.getLogger("transflower")

CONFIG_FORMAT = "tfcfg-1"
SECTIONS = {
    "model": None,  # TransflowerConfig fields, a preset name, or {"preset": name, ...overrides}
    "train": {"lr", "milestones", "decay", "total_steps", "batch_size", "seed", "log_every", "clip_norm", "kind"},
    "data": {"dir", "stride", "standardizer"},
    "sample": {"tau", "stride", "length"},
    "eval": {"prominence", "fps", "window", "hop", "bpm_min", "bpm_max", "songs"},
    "synth": None,  # SynthConfig fields
}


class UsageError(TransflowerError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config

def load_run_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for name, allowed in SECTIONS.items():
        if allowed is None or name not in doc:
            continue
        if not isinstance(doc[name], dict):
            raise ConfigError(f"config section {name!r} must be an object")
        bad = set(doc[name]) - allowed
        if bad:
            raise ConfigError(f"unknown keys in config section {name!r}: {sorted(bad)}")
    return doc


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_model_config(section, preset_flag: str | None):
    """Preset expansion, then overrides, then validation."""
    from .model.config import TransflowerConfig, preset

    section = section if section is not None else {}
    if isinstance(section, str):
        section = {"preset": section}
    if not isinstance(section, dict):
        raise ConfigError("model section must be a preset name or an object")
    section = dict(section)
    name = preset_flag or section.pop("preset", None)
    section.pop("preset", None)
    base = preset(name).to_dict() if name else preset("desk").to_dict()
    if name:
        base["preset"] = name
    return TransflowerConfig.from_dict(_merge(base, section))


def _pick(flag, section: dict, key: str, default=None):
    if flag is not None:
        return flag
    return section.get(key, default)


# ---------------------------------------------------------------- commands

def cmd_features_audio(args, cfg):
    from .features.audio import extract_audio_features
    from .features.io import read_wav, write_beat_file, write_features
    from .metrics.beats import audio_beats

    rate, pcm = read_wav(args.wav)
    feats = extract_audio_features(pcm, rate)
    out = _out_file(args.out, Path(args.wav).stem + ".afeat")
    write_features(out, feats, tag=f"audio {Path(args.wav).name}")
    if args.beats:
        write_beat_file(args.beats, audio_beats(feats).times)
    print(f"{out}\t{len(feats)} frames")


def cmd_features_motion(args, cfg):
    from .features.io import write_features
    from .features.motion import load_motion_json

    feats = load_motion_json(args.json)
    out = _out_file(args.out, Path(args.json).stem + ".mfeat")
    write_features(out, feats, tag=f"motion {Path(args.json).name}")
    print(f"{out}\t{len(feats)} frames")


def cmd_stats_fit(args, cfg):
    from .features.standardize import fit_standardizer
    from .synthbench import read_corpus_dir

    data = cfg.get("data", {})
    _, motion, audio = read_corpus_dir(_pick(args.data, data, "dir") or _missing("--data"))
    std = fit_standardizer(motion, audio)
    out = _out_file(args.out, "stats.json")
    std.save(out)
    print(out)


def cmd_synth_make(args, cfg):
    from .synthbench import SynthConfig, make_synthetic_corpus, write_corpus

    doc = dict(cfg.get("synth", {}))
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.clips is not None:
        doc["n_clips"] = args.clips
    try:
        scfg = SynthConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"synth section: {exc}") from None
    out = write_corpus(make_synthetic_corpus(scfg), args.out or "corpus")
    print(f"{out}\t{scfg.n_clips} clips")


def cmd_train(args, cfg):
    import torch

    from .features.standardize import Standardizer, fit_standardizer
    from .features.windows import WindowDataset
    from .model.checkpoint import load_checkpoint, save_checkpoint
    from .model.training import TrainSchedule, desk_schedule, train_loop, write_loss_csv
    from .model.transflower import build_model
    from .synthbench import read_corpus_dir

    torch.set_num_threads(max(1, args.threads))
    train = dict(cfg.get("train", {}))
    data = cfg.get("data", {})
    seed = int(_pick(args.seed, train, "seed", 0))
    kind = _pick(args.kind, train, "kind", "flow")
    if kind not in ("flow", "deterministic"):
        raise ConfigError(f"unknown model kind {kind!r}")
    _, motion, audio = read_corpus_dir(_pick(args.data, data, "dir") or _missing("--data"))

    if args.resume:
        ck = load_checkpoint(args.resume)
        model, mcfg, std, store, start = ck.model, ck.config, ck.standardizer, ck.store, ck.step
        sched = TrainSchedule(**ck.extra["schedule"]) if "schedule" in ck.extra else None
    else:
        mcfg = resolve_model_config(cfg.get("model"), args.preset)
        model = build_model(mcfg, seed=seed, kind=kind)
        std_path = data.get("standardizer")
        std = Standardizer.load(std_path) if std_path else fit_standardizer(motion, audio)
        store, start, sched = None, 0, None
    if sched is None:
        steps = int(_pick(args.steps, train, "total_steps", 3000))
        base = desk_schedule(steps, seed).to_dict() if mcfg.preset != "paper" else {}
        fields = {k: v for k, v in train.items() if k != "kind"}
        doc = _merge(base, fields)
        doc.update(total_steps=steps, seed=seed)
        if args.lr is not None:
            doc["lr"] = args.lr
        if args.batch_size is not None:
            doc["batch_size"] = args.batch_size
        try:
            sched = TrainSchedule(**doc)
        except TypeError as exc:
            raise ConfigError(f"train section: {exc}") from None
    elif args.steps is not None:
        sched.total_steps = int(args.steps)

    dataset = WindowDataset(
        [std.apply_motion(m) for m in motion], [std.apply_audio(a) for a in audio],
        mcfg.k_x, mcfg.k_m, mcfg.l_m, mcfg.n_poses, int(data.get("stride", 1)),
    )
    log.info("training %s model (%s preset) on %d windows, steps %d..%d",
             kind, mcfg.preset, len(dataset), start, sched.total_steps)

    def progress(step, value):
        if step % max(1, sched.log_every) == 0:
            log.info("step %d nll %.5f", step, value)

    result = train_loop(model, dataset, sched, store=store, start_step=start, callback=progress)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "ckpt", model, result.step, std, result.store, extra={"schedule": sched.to_dict()})
    write_loss_csv(out / "loss.csv", result.trace)
    print(f"{out / 'ckpt'}\tstep {result.step}")


def cmd_generate(args, cfg):
    import torch

    from .features.io import read_features, write_features
    from .model.checkpoint import load_checkpoint
    from .model.rollout import rollout

    torch.set_num_threads(1)
    sample = cfg.get("sample", {})
    ck = load_checkpoint(args.ckpt)
    if ck.standardizer is None:
        raise DataError("checkpoint has no standardizer; retrain with `tf train`")
    audio = read_features(args.audio).frames
    seed_motion = read_features(args.seed_motion).frames if args.seed_motion else np.zeros((0, ck.config.pose_dim))
    length = int(_pick(args.length, sample, "length", len(audio)))
    tau = float(_pick(args.tau, sample, "tau", 1.0))
    stride = int(_pick(args.stride, sample, "stride", 1))
    seed = int(args.seed if args.seed is not None else 0)
    motion = rollout(ck.model, ck.standardizer, seed_motion, audio, length, tau, stride=stride, seed=seed)
    out = _out_file(args.out, "generated.mfeat")
    write_features(out, motion, tag=f"generated seed={seed} tau={tau:g} stride={stride}")
    print(f"{out}\t{len(motion)} frames")


def _read_motion_set(paths):
    from .features.io import read_features
    from .synthbench import read_corpus_dir

    seqs = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            seqs += read_corpus_dir(p)[1]
        else:
            seqs.append(read_features(p).frames)
    return seqs


def _write_report(out_dir, rows) -> Path:
    out = Path(out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in rows:
            w.writerow([k, f"{v:.9g}" if isinstance(v, float) else v])
    for k, v in rows:
        print(f"{k}\t{v:.6g}" if isinstance(v, float) else f"{k}\t{v}")
    return path


def _music_beats(args, eval_cfg):
    from .features.io import read_features, read_wav
    from .metrics.beats import audio_beats

    if args.beats:
        return audio_beats(args.beats)
    if args.wav:
        rate, pcm = read_wav(args.wav)
        return audio_beats(pcm, rate)
    if args.audio:
        return audio_beats(read_features(args.audio).frames)
    raise UsageError("one of --beats, --wav or --audio is required")


def cmd_eval_fpd_fmd(args, cfg):
    from .metrics.frechet import fpd_fmd

    fpd, fmd = fpd_fmd(_read_motion_set(args.generated), _read_motion_set(args.reference))
    _write_report(args.out, [("fpd", fpd), ("fmd", fmd)])


def cmd_eval_beats(args, cfg):
    from .features.io import read_features
    from .metrics.beats import kinematic_beats

    ev = cfg.get("eval", {})
    beats = kinematic_beats(read_features(args.motion).frames, prominence=float(_pick(args.prominence, ev, "prominence", 0.01)))
    rows = [("count", len(beats))] + [(f"beat_{i}", float(t)) for i, t in enumerate(beats.times)]
    _write_report(args.out, rows)


def cmd_eval_align(args, cfg):
    from .features.io import read_features
    from .features.motion import FPS
    from .metrics.beats import BeatTrain, beat_alignment, kinematic_beats

    ev = cfg.get("eval", {})
    frames = read_features(args.motion).frames
    kin = kinematic_beats(frames, prominence=float(_pick(args.prominence, ev, "prominence", 0.01)))
    music = _music_beats(args, ev)
    # only beats the motion covers; a longer song would otherwise score its tail against the last pose
    inside = music.times < len(frames) / FPS
    music = BeatTrain(music.times[inside], None if music.magnitudes is None else music.magnitudes[inside], music.warning)
    if len(music) == 0:
        raise DataError(music.warning or "no musical beats within the motion")
    mean, std = beat_alignment(music, kin)
    _write_report(args.out, [("align_mean", mean), ("align_std", std),
                             ("music_beats", len(music)), ("kinematic_beats", len(kin))])


def cmd_eval_tempogram(args, cfg):
    from .features.io import read_features
    from .metrics.beats import kinematic_beats
    from .metrics.tempogram import impulse_novelty, tempogram, write_pgm, write_tempogram_csv

    ev = cfg.get("eval", {})
    if args.motion:
        frames = read_features(args.motion).frames
        train = kinematic_beats(frames, prominence=float(_pick(args.prominence, ev, "prominence", 0.01)))
    else:
        frames = None
        train = _music_beats(args, ev)
    duration = len(frames) / 20.0 if frames is not None else (train.times.max(initial=0.0) + 1.0)
    nov = impulse_novelty(train.times, train.magnitudes if args.motion else None, duration)
    mat, bpms, _ = tempogram(nov, window=float(ev.get("window", 8.0)), hop=float(ev.get("hop", 1.0)),
                             bpm_range=(int(ev.get("bpm_min", 30)), int(ev.get("bpm_max", 480))))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_tempogram_csv(out / "tempogram.csv", mat, bpms)
    write_pgm(out / "tempogram.pgm", mat)
    peak = int(bpms[np.argmax(mat.mean(0))])
    print(f"{out / 'tempogram.csv'}\tpeak {peak} bpm")


def cmd_prompt_matrix(args, cfg):
    import torch

    from .model.checkpoint import load_checkpoint
    from .model.prompting import model_generator, motion_prompt_matrix, write_prompt_csv
    from .synthbench import read_corpus_dir, read_labels

    torch.set_num_threads(1)
    sample = cfg.get("sample", {})
    ev = cfg.get("eval", {})
    data = Path(_pick(args.data, cfg.get("data", {}), "dir") or _missing("--data"))
    ck = load_checkpoint(args.ckpt)
    names, motion, audio = read_corpus_dir(data)
    labels = {r["clip"]: r["style"] for r in read_labels(data / "labels.csv")}
    styles = sorted(set(labels.values()))
    by_style = {s: [i for i, n in enumerate(names) if labels.get(n) == s] for s in styles}
    n_songs = int(_pick(args.songs, ev, "songs", 4))
    songs_idx = list(range(min(n_songs, len(names))))
    k_x = ck.config.k_x
    seeds = {s: motion[by_style[s][0]][:k_x] for s in styles}
    length = int(_pick(args.length, sample, "length", 200))
    songs = [audio[i][k_x: k_x + length + ck.config.n_poses + ck.config.l_m] for i in songs_idx]
    gen = model_generator(ck.model, ck.standardizer, length, float(_pick(args.tau, sample, "tau", 1.0)),
                          seed=int(args.seed or 0))
    refs = {s: [motion[i] for i in by_style[s]] for s in styles}
    mat, styles = motion_prompt_matrix(gen, seeds, songs, refs)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_prompt_csv(out / "report.csv", mat, styles)
    for s, row in zip(styles, mat):
        print(s, " ".join(f"{v:.4g}" for v in row))


def cmd_info_checkpoint(args, cfg):
    from .model.checkpoint import load_checkpoint
    from .numcore import parameter_count

    ck = load_checkpoint(args.ckpt)
    info = {
        "kind": ck.model.kind,
        "preset": ck.config.preset,
        "step": ck.step,
        "parameters": parameter_count(ck.model.parameters()),
        "dtype": ck.config.dtype,
        "has_standardizer": ck.standardizer is not None,
        "schedule": ck.extra.get("schedule"),
    }
    print(json.dumps(info, indent=1, sort_keys=True))


# ---------------------------------------------------------------- parser

def _missing(flag):
    raise UsageError(f"{flag} is required (or set it in the config file)")


def _out_file(out, default_name):
    if out is None:
        return Path(default_name)
    p = Path(out)
    if p.suffix in (".mfeat", ".afeat", ".json"):
        p.parent.mkdir(parents=True, exist_ok=True)
        return p
    p.mkdir(parents=True, exist_ok=True)
    return p / default_name


def version_string() -> str:
    from .features.io import FEATURE_FILE_VERSION, LAYOUTS
    from .model.checkpoint import CHECKPOINT_VERSION

    layouts = "/".join(v[0] for v in LAYOUTS.values())
    return (f"tf {__version__} (config {CONFIG_FORMAT}, checkpoint {CHECKPOINT_VERSION}, "
            f"features v{FEATURE_FILE_VERSION} {layouts}, standardizer tfstd-1)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (sections model/train/data/sample/eval/synth)")
    common.add_argument("--seed", type=int, help="seed for all randomness")
    common.add_argument("--preset", choices=["paper", "desk", "micro"], help="model preset")
    common.add_argument("--out", help="output directory (or file for single-file outputs)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="tf", description="Music-conditioned dance generation with normalizing flows.")
    p.add_argument("--version", action="version", version=version_string())
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    feat = sub.add_parser("features", help="extract feature files").add_subparsers(dest="kind", parser_class=_Parser)
    fa = feat.add_parser("audio", parents=[common], help="WAV -> .afeat")
    fa.add_argument("--wav", required=True)
    fa.add_argument("--beats", help="also write detected beat times to this file")
    fa.set_defaults(func=cmd_features_audio)
    fm = feat.add_parser("motion", parents=[common], help="motion JSON -> .mfeat")
    fm.add_argument("--json", required=True)
    fm.set_defaults(func=cmd_features_motion)

    stats = sub.add_parser("stats", help="standardization statistics").add_subparsers(dest="kind", parser_class=_Parser)
    sf = stats.add_parser("fit", parents=[common], help="fit per-channel mean/std on a corpus directory")
    sf.add_argument("--data")
    sf.set_defaults(func=cmd_stats_fit)

    synth = sub.add_parser("synth", help="synthetic benchmark").add_subparsers(dest="kind", parser_class=_Parser)
    sm = synth.add_parser("make", parents=[common], help="write a synthetic corpus")
    sm.add_argument("--clips", type=int)
    sm.set_defaults(func=cmd_synth_make)

    tr = sub.add_parser("train", parents=[common], help="train a model on a corpus directory")
    tr.add_argument("--data")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--kind", choices=["flow", "deterministic"])
    tr.add_argument("--resume", help="checkpoint directory to continue from")
    tr.add_argument("--threads", type=int, default=1, help="torch intra-op threads")
    tr.set_defaults(func=cmd_train)

    ge = sub.add_parser("generate", parents=[common], help="autoregressive rollout")
    ge.add_argument("--ckpt", required=True)
    ge.add_argument("--audio", required=True)
    ge.add_argument("--seed-motion")
    ge.add_argument("--length", type=int)
    ge.add_argument("--tau", type=float)
    ge.add_argument("--stride", type=int)
    ge.set_defaults(func=cmd_generate)

    ev = sub.add_parser("eval", help="metrics").add_subparsers(dest="kind", parser_class=_Parser)
    e1 = ev.add_parser("fpd-fmd", parents=[common], help="Frechet pose/movement distances")
    e1.add_argument("--generated", nargs="+", required=True)
    e1.add_argument("--reference", nargs="+", required=True)
    e1.set_defaults(func=cmd_eval_fpd_fmd)
    e2 = ev.add_parser("beats", parents=[common], help="kinematic beats of a motion file")
    e2.add_argument("--motion", required=True)
    e2.add_argument("--prominence", type=float)
    e2.set_defaults(func=cmd_eval_beats)
    e3 = ev.add_parser("align", parents=[common], help="music/kinematic beat alignment")
    e3.add_argument("--motion", required=True)
    e3.add_argument("--audio")
    e3.add_argument("--wav")
    e3.add_argument("--beats")
    e3.add_argument("--prominence", type=float)
    e3.set_defaults(func=cmd_eval_align)
    e4 = ev.add_parser("tempogram", parents=[common], help="tempogram of kinematic or musical beats")
    e4.add_argument("--motion")
    e4.add_argument("--audio")
    e4.add_argument("--wav")
    e4.add_argument("--beats")
    e4.add_argument("--prominence", type=float)
    e4.set_defaults(func=cmd_eval_tempogram)

    pm = sub.add_parser("prompt-matrix", parents=[common], help="style x style FMD of seeded rollouts")
    pm.add_argument("--ckpt", required=True)
    pm.add_argument("--data")
    pm.add_argument("--songs", type=int)
    pm.add_argument("--length", type=int)
    pm.add_argument("--tau", type=float)
    pm.set_defaults(func=cmd_prompt_matrix)

    info = sub.add_parser("info", help="inspect artifacts").add_subparsers(dest="kind", parser_class=_Parser)
    ic = info.add_parser("checkpoint", parents=[common], help="summarize a checkpoint")
    ic.add_argument("--ckpt", required=True)
    ic.set_defaults(func=cmd_info_checkpoint)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return 1
    if isinstance(exc, (NumericalError, ArithmeticError)):
        return 3
    if isinstance(exc, (DataError, ShapeError, OSError)):
        return 2
    return 1


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError("a subcommand is required; see `tf --help`")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        cfg = load_run_config(args.config)
        args.func(args, cfg)
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (TransflowerError, OSError, ValueError, ArithmeticError) as exc:
        code = _exit_code(exc)
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error[{code}]: {msg}", file=sys.stderr)
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
