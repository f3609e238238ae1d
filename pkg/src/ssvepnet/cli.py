"""Command-line entry point.

Commands: train-global, finetune, sweep, analyze, synth, inspect.  A run is
described by one JSON config file; a few flags override config fields.  All
randomness flows from the config's single seed through derive_seed(seed, tag,
...), so identical config + seed reproduces identical output bytes.  Output
files are written atomically (temp file + rename).
"""
from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from dataclasses import dataclass, replace

import numpy as np

from .analysis import (SynthSpec, channel_importance, generate_synthetic,
                       sinusoid_distance_matrix, stepped_phase_layout)
from .dataset import (ARCHIVE_MAGIC, extract_epochs, merge_trialsets,
                      read_archive, select_channels, write_archive)
from .evaluation import confusion_to_csv, report_to_csv, report_to_json, run_protocol
from .filterbank import FilterBankSpec, subband_stacks
from .network import DropoutSpec, NetworkConfig, init_params
from .training import (CHECKPOINT_MAGIC, Checkpoint, Provenance, StageConfig,
                       derive_seed, load_checkpoint, save_checkpoint, train_stage)


@dataclass(frozen=True)
class RunConfig:
    archives: tuple
    channels: tuple | None
    n_subbands: int
    base_freq_hz: float
    margin_hz: float
    upper_cut_hz: float
    durations: tuple
    train_duration_s: float
    gaze_shift_s: float
    seed: int
    out_dir: str
    stage1: StageConfig
    stage2: StageConfig
    synth: dict | None
    analysis: dict

    @property
    def bank(self) -> FilterBankSpec:
        return FilterBankSpec(n_subbands=self.n_subbands, base_freq_hz=self.base_freq_hz,
                              margin_hz=self.margin_hz, upper_cut_hz=self.upper_cut_hz)


def _stage_from_dict(d: dict, seed: int) -> StageConfig:
    d = dict(d)
    drop = d.pop("dropout", [0.1, 0.1, 0.95])
    return StageConfig(dropout=DropoutSpec(*drop), seed=seed, **d)


def load_config(path, overrides: dict) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    seed = int(overrides.get("seed", raw.get("seed", 0)))
    channels = overrides.get("channels", raw.get("channels"))
    durations = overrides.get("durations", raw.get("durations", [0.4]))
    n_subbands = int(overrides.get("subbands", raw.get("n_subbands", 3)))
    out_dir = overrides.get("out", raw.get("out_dir", "out"))
    return RunConfig(
        archives=tuple(resolve(p) for p in raw.get("archives", [])),
        channels=tuple(channels) if channels else None,
        n_subbands=n_subbands,
        base_freq_hz=float(raw.get("base_freq_hz", 8.0)),
        margin_hz=float(raw.get("margin_hz", 2.0)),
        upper_cut_hz=float(raw.get("upper_cut_hz", 90.0)),
        durations=tuple(float(t) for t in durations),
        train_duration_s=float(raw.get("train_duration_s", durations[0])),
        gaze_shift_s=float(raw.get("gaze_shift_s", 0.5)),
        seed=seed,
        out_dir=resolve(out_dir),
        stage1=_stage_from_dict(raw["stage1"], derive_seed(seed, "stage1")),
        stage2=_stage_from_dict(raw["stage2"], derive_seed(seed, "stage2")),
        synth=raw.get("synth"),
        analysis=raw.get("analysis", {}),
    )


def _write_text(path, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_archives(cfg: RunConfig):
    if not cfg.archives:
        raise ValueError("config lists no archives")
    out = []
    for p in cfg.archives:
        if not os.path.exists(p):
            raise FileNotFoundError(f"archive not found: {p}")
        out.append(read_archive(p))
    return out


def _prepared_trials(cfg: RunConfig, archives, duration):
    """(trials, stacks) per archive at one duration, channels applied."""
    prepared = []
    for a in archives:
        trials = extract_epochs(a, duration)
        if cfg.channels is not None:
            trials = select_channels(trials, cfg.channels, a.meta)
        stacks = subband_stacks(trials.epochs, cfg.bank, a.meta.sampling_rate_hz)
        prepared.append((a, trials, stacks))
    return prepared


def cmd_synth(cfg: RunConfig) -> int:
    if not cfg.synth:
        raise ValueError("config has no synth section")
    os.makedirs(cfg.out_dir, exist_ok=True)
    shared = {k: v for k, v in cfg.synth.items()
              if k not in ("subjects", "freqs_hz", "seed")}
    freqs = cfg.synth["freqs_hz"]
    for sub in cfg.synth["subjects"]:
        fields = {**shared, **{k: v for k, v in sub.items() if k != "seed"}}
        sid = fields.pop("subject_id")
        spec = SynthSpec(subject_id=sid, seed=derive_seed(cfg.seed, "synth", sid), **fields)
        archive = generate_synthetic(spec, freqs)
        path = os.path.join(cfg.out_dir, f"{sid}.ssvep")
        write_archive(archive, path)
        read_archive(path)  # validate what landed on disk
        print(f"wrote {path}")
    return 0


def cmd_train_global(cfg: RunConfig) -> int:
    archives = _load_archives(cfg)
    prepared = _prepared_trials(cfg, archives, cfg.train_duration_s)
    merged = merge_trialsets([t for _, t, _ in prepared])
    stacks = np.concatenate([s for _, _, s in prepared], axis=0)
    net = NetworkConfig(n_channels=merged.n_channels, n_samples=merged.n_epoch_samples,
                        n_subbands=cfg.n_subbands, n_classes=merged.n_classes)
    init = init_params(net, np.random.default_rng(derive_seed(cfg.stage1.seed, "init")))
    params, history = train_stage(merged, stacks, init, cfg.stage1)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "stage1.ckpt")
    save_checkpoint(Checkpoint(
        config=net, stage_config=cfg.stage1, params=params,
        provenance=Provenance(stage="stage1", subject="global", fold_index=-1,
                              final_loss=history[-1])), ckpt_path)
    load_checkpoint(ckpt_path, expect_config=net)
    _write_text(os.path.join(cfg.out_dir, "stage1_loss.csv"),
                "epoch,mean_loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history)))
    print(f"wrote {ckpt_path}")
    return 0


def cmd_finetune(cfg: RunConfig, checkpoint_path) -> int:
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.config.n_subbands != cfg.n_subbands:
        raise ValueError(
            f"checkpoint has {ckpt.config.n_subbands} sub-bands, config wants {cfg.n_subbands}")
    archives = _load_archives(cfg)
    prepared = _prepared_trials(cfg, archives, cfg.train_duration_s)
    os.makedirs(cfg.out_dir, exist_ok=True)
    for archive, trials, stacks in prepared:
        sid = archive.meta.subject_id
        stage = replace(cfg.stage2, seed=derive_seed(cfg.stage2.seed, "subject", sid))
        if trials.n_epoch_samples != ckpt.config.n_samples or trials.n_channels != ckpt.config.n_channels:
            raise ValueError(f"subject {sid}: epochs do not match checkpoint config")
        params, history = train_stage(trials, stacks, ckpt.params, stage)
        path = os.path.join(cfg.out_dir, f"{sid}.ckpt")
        save_checkpoint(Checkpoint(
            config=ckpt.config, stage_config=stage, params=params,
            provenance=Provenance(stage="stage2", subject=sid, fold_index=-1,
                                  final_loss=history[-1])), path)
        load_checkpoint(path, expect_config=ckpt.config)
        print(f"wrote {path}")
    return 0


def cmd_sweep(cfg: RunConfig, n_jobs: int) -> int:
    archives = _load_archives(cfg)
    report = run_protocol(archives, list(cfg.durations), cfg.channels, cfg.bank,
                          cfg.stage1, cfg.stage2, cfg.gaze_shift_s, n_jobs=n_jobs)
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_text(os.path.join(cfg.out_dir, "report.csv"), report_to_csv(report))
    _write_text(os.path.join(cfg.out_dir, "report.json"), report_to_json(report))
    for row in report.rows:
        _write_text(os.path.join(cfg.out_dir, f"confusion_T{row.duration_s:g}.csv"),
                    confusion_to_csv(row.confusion))
    print(f"wrote {os.path.join(cfg.out_dir, 'report.csv')}")
    return 0


def cmd_analyze(cfg: RunConfig, mode: str) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    if mode == "distances":
        opts = cfg.analysis
        freqs = opts.get("freqs_hz") or [8.0 + 0.2 * i for i in range(40)]
        layout = stepped_phase_layout(freqs, duration_s=opts.get("distance_duration_s", 0.4),
                                      refresh_rate_hz=opts.get("refresh_rate_hz", 60.0))
        matrix = sinusoid_distance_matrix(layout)
        lines = [",".join(f"{f:g}" for f in layout.freqs_hz)]
        for row in matrix:
            lines.append(",".join(repr(float(v)) for v in row))
        _write_text(os.path.join(cfg.out_dir, "distances.csv"), "\n".join(lines) + "\n")
        print(f"wrote {os.path.join(cfg.out_dir, 'distances.csv')}")
    elif mode == "importance":
        archives = _load_archives(cfg)
        duration = cfg.analysis.get("importance_duration_s", cfg.train_duration_s)
        result = channel_importance(archives, cfg.bank, cfg.stage1, duration)
        _write_text(os.path.join(cfg.out_dir, "channel_importance.csv"), result.to_csv())
        print(f"wrote {os.path.join(cfg.out_dir, 'channel_importance.csv')}")
    elif mode == "synth":
        return cmd_synth(cfg)
    else:
        raise ValueError(f"unknown analyze mode {mode!r}")
    return 0


def cmd_inspect(path) -> int:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic not in (ARCHIVE_MAGIC, CHECKPOINT_MAGIC):
            raise ValueError(f"{path}: not an archive or checkpoint (magic {magic!r})")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
    kind = "archive" if magic == ARCHIVE_MAGIC else "checkpoint"
    print(json.dumps({"kind": kind, "header": header}, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssvepnet")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--channels", nargs="+")
        p.add_argument("--subbands", type=int)
        p.add_argument("--durations", type=float, nargs="+")
        p.add_argument("--out")

    for name in ("train-global", "sweep", "synth"):
        add_common(sub.add_parser(name))
    p = sub.add_parser("finetune")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("analyze")
    add_common(p)
    p.add_argument("--mode", choices=("distances", "importance", "synth"), required=True)
    p = sub.add_parser("inspect")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            return cmd_inspect(args.path)
        overrides = {k: v for k, v in (
            ("seed", args.seed), ("channels", args.channels), ("subbands", args.subbands),
            ("durations", args.durations), ("out", args.out)) if v is not None}
        cfg = load_config(args.config, overrides)
        if args.command == "train-global":
            return cmd_train_global(cfg)
        if args.command == "finetune":
            return cmd_finetune(cfg, args.checkpoint)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.jobs)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.mode)
        raise ValueError(f"unknown command {args.command!r}")
    except Exception as exc:  # surface a one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
