"""``codecse`` command line: pretrain-codec, train-se, enhance, evaluate, profile, ablate.

Every subcommand accepts ``--config run.json`` plus ``--<section>.<key> VALUE``
overrides for each config key; ``--seed`` sets all seeds at once.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .checkpoint import CheckpointError, atomic_write_bytes, load_models, save_models
from .config import ConfigError, RunConfig, describe, flag_specs, parse_flag_value
from .data import SyntheticCorpus, heldout_set, read_manifest
from .dsp import si_snr
from .losses import mel_distance
from .pipeline import EnhancementPipeline
from .se_model import SEModel
from .trainer import (LOSS_KEYS, TrainingDiverged, heldout_metrics, pretrain_codec, run_ablation,
                      train_se)
from .wavio import WavFormatError, wav_read, wav_write

log = logging.getLogger("codecse")


class CliError(RuntimeError):
    pass


# output helpers

def write_csv(path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))
    return Path(path)


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if v != v else ("inf" if v > 0 else "-inf"))
    return v


def write_json(path, doc) -> Path:
    atomic_write_bytes(path, (json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n").encode())
    return Path(path)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def history_rows(rows: Sequence[dict]) -> list[list]:
    return [[r["epoch"]] + [r[k] for k in LOSS_KEYS] for r in rows]


# subcommands

def cmd_pretrain_codec(cfg: RunConfig, args) -> int:
    from .plotting import plot_codec_history

    out = Path(args.out)
    corpus = SyntheticCorpus(cfg.data)
    codec, hist = pretrain_codec(cfg.codec, corpus, cfg.train.codec_epochs, lr=cfg.train.codec_lr,
                                 batch_size=cfg.train.batch_size, seed=cfg.train.seed, mel=cfg.mel)
    keys = sorted({k for r in hist for k in r} - {"epoch"})
    write_csv(out / "codec_history.csv", ["epoch"] + keys,
              [[r["epoch"]] + [r.get(k, float("nan")) for k in keys] for r in hist])
    save_models(out / "codec.ckpt", codec=codec)
    plot_codec_history(hist, out / "codec_history.png")
    write_json(out / "manifest.json", {
        "command": "pretrain-codec", "config": cfg.to_dict(), "seed": cfg.train.seed,
        "corpus_hash": corpus.corpus_hash(), "final_metrics": hist[-1]})
    print(f"codec checkpoint: {out / 'codec.ckpt'}")
    print(f"validation mel loss {hist[0]['val_l_mel']:.4g} -> {hist[-1]['val_l_mel']:.4g}")
    return 0


def _load_codec(path):
    codec, _, _ = load_models(path)
    if codec is None:
        raise CliError(f"{path}: checkpoint has no codec parameters")
    return codec


def cmd_train_se(cfg: RunConfig, args) -> int:
    from .plotting import plot_loss_curves

    out = Path(args.out)
    codec = _load_codec(args.codec)
    corpus = SyntheticCorpus(cfg.data)
    se = SEModel(cfg.se, codec.latent_dim)

    def snapshot(model, path):
        save_models(path, codec=codec, se=model)

    se, hist = train_se(codec, se, corpus, cfg.train, cfg.mel, out_dir=out / "checkpoints", save=snapshot)
    save_models(out / "se.ckpt", codec=codec, se=se)
    write_csv(out / "history.csv", ("epoch",) + LOSS_KEYS, history_rows(hist.train))
    write_csv(out / "validation.csv", ("epoch",) + LOSS_KEYS, history_rows(hist.val))
    plot_loss_curves(hist.train, hist.val, out / "loss_curves.png", f"SE training ({cfg.train.ablation})")
    write_json(out / "manifest.json", {
        "command": "train-se", "config": cfg.to_dict(), "seed": cfg.train.seed,
        "codec_checkpoint": str(args.codec), "corpus_hash": corpus.corpus_hash(),
        "final_metrics": {"train": hist.train[-1] if hist.train else None, "val": hist.final_val}})
    print(f"SE checkpoint: {out / 'se.ckpt'}")
    print(f"validation l_emb {hist.initial_val['l_emb']:.4g} -> {hist.final_val['l_emb']:.4g}")
    return 0


def _load_pipeline(path, allow_codec_only: bool = False) -> EnhancementPipeline:
    codec, se, _ = load_models(path)
    if codec is None:
        raise CliError(f"{path}: checkpoint has no codec parameters")
    if se is None and not allow_codec_only:
        raise CliError(f"{path}: checkpoint has no SE parameters (train one with `codecse train-se`)")
    return EnhancementPipeline(codec, se)


def cmd_enhance(cfg: RunConfig, args) -> int:
    pipe = _load_pipeline(args.checkpoint, allow_codec_only=args.codec_only)
    wave, sr = wav_read(args.inp)
    if sr != pipe.sample_rate:
        raise CliError(f"{args.inp}: sample rate {sr} Hz, model expects {pipe.sample_rate} Hz")
    if wave.size == 0:
        raise CliError(f"{args.inp}: no samples")
    t0 = time.perf_counter()
    res = pipe.enhance(wave)
    wall = time.perf_counter() - t0
    wav_write(args.out, res.y_out, sr)
    dur = wave.size / sr
    stages = ", ".join(f"{k} {v * 1e3:.1f} ms" for k, v in res.stage_seconds.items())
    print(f"wrote {args.out} ({wave.size} samples, {dur:.3f} s)")
    print(f"RTF {wall / dur:.4f} ({wall:.3f} s wall; {stages})")
    return 0


EVAL_COLUMNS = ("clean", "noisy", "si_snr_noisy", "si_snr_enhanced", "si_snr_improvement",
                "mel_distance", "latent_l1")


def cmd_evaluate(cfg: RunConfig, args) -> int:
    from .plotting import plot_eval

    manifest = Path(args.manifest)
    if not manifest.exists():
        raise CliError(f"manifest not found: {manifest}")
    entries = read_manifest(manifest)
    if not entries:
        raise CliError(f"{manifest}: no entries")
    pipe = None
    need_model = any(len(e) < 3 for e in entries)
    if args.checkpoint:
        pipe = _load_pipeline(args.checkpoint, allow_codec_only=not need_model)
    elif need_model:
        raise CliError("evaluate: --checkpoint is required when the manifest has no enhanced column")
    base = manifest.parent
    rows = []
    for e in entries:
        if len(e) not in (2, 3):
            raise CliError(f"{manifest}: expected 'clean noisy [enhanced]' per line, got {e}")
        clean, sr = wav_read(base / e[0])
        noisy, sr2 = wav_read(base / e[1])
        if sr != sr2 or clean.shape != noisy.shape:
            raise CliError(f"{e[0]} / {e[1]}: sample rate or length differ")
        if len(e) == 3:
            enhanced, sr3 = wav_read(base / e[2])
            if sr3 != sr or enhanced.shape != clean.shape:
                raise CliError(f"{e[2]}: sample rate or length differ from {e[0]}")
        else:
            enhanced = pipe(noisy)
        s_noisy, s_enh = si_snr(clean, noisy), si_snr(clean, enhanced)
        lat = float("nan")
        if pipe is not None:
            z_c = pipe.encode_only(clean).data
            z_e = pipe.encode_only(enhanced).data
            lat = float(np.mean(np.abs(z_c - z_e)))
        mel = mel_distance(clean, enhanced, cfg.mel) if clean.size >= cfg.mel.n_fft else float("nan")
        rows.append({"clean": e[0], "noisy": e[1], "si_snr_noisy": s_noisy, "si_snr_enhanced": s_enh,
                     "si_snr_improvement": s_enh - s_noisy, "mel_distance": mel, "latent_l1": lat})
    out = Path(args.out)
    write_csv(out, EVAL_COLUMNS, [[r[c] for c in EVAL_COLUMNS] for r in rows])
    plot_eval(rows, out.with_suffix(".png"))
    imp = [r["si_snr_improvement"] for r in rows]
    print(f"{len(rows)} utterances; median SI-SNR improvement {np.median(imp):.2f} dB; "
          f"mean mel distance {np.nanmean([r['mel_distance'] for r in rows]):.4g}")
    return 0


def cmd_profile(cfg: RunConfig, args) -> int:
    from .codec import CodecModel
    from .perf import (TimeDomainBaseline, compare_efficiency, count_macs, efficiency_csv,
                       efficiency_table, measure_rtf)
    from .plotting import plot_efficiency

    if args.checkpoint:
        pipe = _load_pipeline(args.checkpoint)
    else:
        codec = CodecModel(cfg.codec)
        pipe = EnhancementPipeline(codec, SEModel(cfg.se, codec.latent_dim))
    out = Path(args.out)
    sr = pipe.sample_rate
    threads = cfg.perf.threads or None
    dur = args.duration
    n = int(round(dur * sr))
    se_rep = count_macs(pipe.se, n, sr, pipe.codec.hop)
    base = TimeDomainBaseline(pipe.se.config)
    base_rep = count_macs(base, n, sr)
    write_csv(out / "macs.csv", ("model", "layer", "kind", "macs"),
              [("latent_se", e.layer, e.kind, e.macs) for e in se_rep.entries]
              + [("time_domain", e.layer, e.kind, e.macs) for e in base_rep.entries])
    wave = 0.1 * np.random.default_rng(cfg.train.seed).standard_normal(n)
    rtf = measure_rtf(pipe, wave, cfg.perf.runs, sr, threads)
    write_json(out / "rtf.json", {
        "audio_seconds": rtf.audio_seconds, "wall_seconds_median": rtf.wall_seconds,
        "runs": rtf.runs, "rtf_median": rtf.rtf, "rtf_mean": rtf.rtf_mean, "rtf_min": rtf.rtf_min,
        "rtf_max": rtf.rtf_max, "stage_seconds": rtf.stage_seconds, "threads": threads or "default",
        "macs_total": se_rep.total})
    rows = compare_efficiency(pipe, base, cfg.perf.durations, cfg.perf.runs, threads,
                              cfg.perf.baseline_rtf_max_seconds, seed=cfg.train.seed)
    atomic_write_bytes(out / "efficiency.csv", efficiency_csv(rows).encode())
    plot_efficiency(rows, out / "efficiency.png")
    print(f"SE MACs for {dur:g} s: {se_rep.total:,d} (time-domain baseline {base_rep.total:,d}, "
          f"ratio {base_rep.total / se_rep.total:.1f}x)")
    print(rtf.summary())
    print(efficiency_table(rows))
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    from .plotting import plot_ablation, plot_loss_curves

    out = Path(args.out)
    codec = _load_codec(args.codec)
    corpus = SyntheticCorpus(cfg.data)
    held = heldout_set(args.heldout, cfg.data)
    rows, runs = run_ablation(codec, corpus, cfg.train, cfg.se, cfg.mel, held)
    cols = list(rows[0].keys())
    write_csv(out / "ablation.csv", cols, [[r[c] for c in cols] for r in rows])
    for arm, (se, hist) in runs.items():
        write_csv(out / f"history_{arm}.csv", ("epoch",) + LOSS_KEYS, history_rows(hist.train))
        write_csv(out / f"validation_{arm}.csv", ("epoch",) + LOSS_KEYS, history_rows(hist.val))
        plot_loss_curves(hist.train, hist.val, out / f"loss_curves_{arm}.png", f"SE training ({arm})")
    plot_ablation(rows, out / "ablation.png")
    write_json(out / "manifest.json", {
        "command": "ablate", "config": cfg.to_dict(), "seed": cfg.train.seed,
        "codec_checkpoint": str(args.codec), "corpus_hash": corpus.corpus_hash(),
        "heldout": args.heldout, "final_metrics": rows})
    for r in rows:
        print(f"{r['arm']:>15}: l_emb {r['val_l_emb_initial']:.4f} -> {r['val_l_emb_final']:.4f}, "
              f"SI-SNR impr. {r['si_snr_improvement_median']:+.2f} dB, mel {r['mel_distance_mean']:.4g}")
    return 0


COMMANDS = {
    "pretrain-codec": (cmd_pretrain_codec, "train the miniature codec on clean synthetic audio"),
    "train-se": (cmd_train_se, "train the latent SE model against a frozen codec"),
    "enhance": (cmd_enhance, "enhance one WAV file"),
    "evaluate": (cmd_evaluate, "score clean/noisy[/enhanced] WAV pairs listed in a manifest"),
    "profile": (cmd_profile, "MAC counts, RTF and the latent vs time-domain comparison"),
    "ablate": (cmd_ablate, "train the three loss-configuration arms and compare them"),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides (same keys as the JSON config file)")
    for key, hint in flag_specs():
        g.add_argument(f"--{key}", dest=f"cfg:{key}", metavar=describe(hint).upper(),
                       default=argparse.SUPPRESS, help=f"{describe(hint)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codecse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run config (flags override its values)")
        p.add_argument("--seed", type=int, help="set codec, SE, data and training seeds")
        p.add_argument("--log-level", default=os.environ.get("LOG_LEVEL", "INFO"),
                       help="logging level (default: $LOG_LEVEL or INFO)")
        if name in ("pretrain-codec", "train-se", "ablate", "profile"):
            p.add_argument("--out", required=True, help="output directory")
        if name in ("train-se", "ablate"):
            p.add_argument("--codec", required=True, help="codec checkpoint from pretrain-codec")
        if name == "ablate":
            p.add_argument("--heldout", type=int, default=50, help="held-out utterances for SI-SNR (default 50)")
        if name == "enhance":
            p.add_argument("--in", dest="inp", required=True, help="input WAV (16-bit mono)")
            p.add_argument("--out", required=True, help="output WAV")
            p.add_argument("--checkpoint", required=True, help="checkpoint from train-se")
            p.add_argument("--codec-only", action="store_true",
                           help="accept a codec-only checkpoint (plain codec round trip)")
        if name == "evaluate":
            p.add_argument("--manifest", required=True,
                           help="lines of 'clean noisy [enhanced]' WAV paths, relative to the manifest")
            p.add_argument("--checkpoint", help="checkpoint; required unless every line lists an enhanced file")
            p.add_argument("--out", required=True, help="output CSV (a histogram PNG is written next to it)")
        if name == "profile":
            p.add_argument("--checkpoint", help="checkpoint (default: untrained models from the config)")
            p.add_argument("--duration", type=float, default=10.0, help="seconds of audio for MACs/RTF (default 10)")
        _add_config_flags(p)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    hints = dict(flag_specs())
    overrides = {}
    for dest, raw in vars(args).items():
        if dest.startswith("cfg:"):
            key = dest[4:]
            overrides[key] = parse_flag_value(raw, hints[key])
    if args.seed is not None:
        for key in ("codec.seed", "se.seed", "data.seed", "train.seed"):
            overrides.setdefault(key, args.seed)
    return cfg.with_overrides(overrides) if overrides else cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = getattr(logging, str(args.log_level).upper(), None)
    if not isinstance(level, int):
        parser.error(f"unknown log level {args.log_level!r}")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        log.info("resolved config:\n%s", cfg.to_json())
        return COMMANDS[args.command][0](cfg, args)
    except (ConfigError, CheckpointError, WavFormatError, CliError, TrainingDiverged,
            FileNotFoundError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"codecse {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
