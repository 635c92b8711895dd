"""Command-line entry point: ``scdm <subcommand> ...``.

Exit codes: 0 success, 1 validation error (bad arguments, malformed inputs),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import Config, ConfigError, load_config

log = logging.getLogger("scdm")

SUBCOMMANDS = ("gen", "preprocess", "corr", "schedule-search", "train", "synthesize", "evaluate",
               "ablate", "export-plots")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2; usage problems are validation errors
        raise UsageError(f"{self.prog}: {message}")


# --- manifest ------------------------------------------------------------------------


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, argv: list[str], config: Config, inputs: list[str],
                   outputs: list[str], seed: int | None) -> Path:
    manifest = {
        "command": command,
        "argv": argv,
        "config_path": config.path,
        "config": config.to_ini(),
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        "seed": seed,
        "tool_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _out_dir(p: str) -> Path:
    out = Path(p)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _input_files(*paths) -> list[str]:
    files = []
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        if p.is_dir():
            files.extend(str(q) for q in sorted(p.iterdir()) if q.suffix == ".scdm")
        elif p.is_file():
            files.append(str(p))
        else:
            raise FileNotFoundError(f"input not found: {p}")
    return files


# --- subcommands ------------------------------------------------------------------------


def cmd_gen(args, cfg: Config) -> tuple[list[str], list[str], int]:
    from .signals import save_epochs
    from .synthetic import MINIATURE_SPEC, REFERENCE_SPEC, generate_coupled

    g = cfg.override("gen", seed=args.seed, trials=args.trials, scale=args.scale, noise=args.noise,
                     chromophore=args.chromophore).section("gen")
    if g["scale"] not in ("reference", "miniature"):
        raise ConfigError("scale must be 'reference' or 'miniature'")
    base = REFERENCE_SPEC if g["scale"] == "reference" else MINIATURE_SPEC
    spec = replace(base, noise=float(g["noise"]), chromophore=g["chromophore"])
    data = generate_coupled(int(g["seed"]), int(g["trials"]), spec)
    out = _out_dir(args.out)
    save_epochs(data.eeg, out / "eeg.scdm")
    save_epochs(data.fnirs, out / "fnirs.scdm")
    with open(out / "coupling_weights.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fnirs_channel", *data.eeg.channel_labels])
        for name, row in zip(data.fnirs.channel_labels, data.weights):
            w.writerow([name, *(f"{v:.6f}" for v in row)])
    return [], [str(out / n) for n in ("eeg.scdm", "fnirs.scdm", "coupling_weights.csv")], int(g["seed"])


def _read_onsets(path: str) -> tuple[list[float], list[int]]:
    from .signals import CLASS_NAMES

    onsets, labels = [], []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            onsets.append(float(rec["onset_seconds"]))
            lab = rec.get("label", "LMI").strip()
            labels.append(CLASS_NAMES.index(lab) if lab in CLASS_NAMES else int(lab))
    return onsets, labels


def cmd_preprocess(args, cfg: Config):
    from .signals import (FilterSpec, apply_filter, common_average_reference, design_filter, load_series,
                          resample, save_epochs, segment_epochs)

    p = cfg.section("preprocess")
    onsets, labels = _read_onsets(args.onsets)
    out = _out_dir(args.out)
    outputs = []
    if args.eeg:
        s = load_series(args.eeg)
        spec = FilterSpec(p["eeg_family"], p["eeg_order"], p["eeg_band"], p["eeg_zero_phase"],
                          p["stopband_attenuation_db"])
        s = apply_filter(s, design_filter(spec, s.sample_rate), spec.zero_phase)
        if p["car"]:
            s = common_average_reference(s)
        s = resample(s, p["eeg_target_rate"])
        ep = segment_epochs(s, onsets, args.eeg_window, labels)
        save_epochs(ep, out / "eeg.scdm")
        outputs.append(str(out / "eeg.scdm"))
    if args.fnirs:
        s = load_series(args.fnirs)
        spec = FilterSpec(p["fnirs_family"], p["fnirs_order"], p["fnirs_band"], p["fnirs_zero_phase"])
        s = apply_filter(s, design_filter(spec, s.sample_rate), spec.zero_phase)
        s = resample(s, p["fnirs_target_rate"])
        ep = segment_epochs(s, onsets, args.fnirs_window, labels)
        save_epochs(ep, out / "fnirs.scdm")
        outputs.append(str(out / "fnirs.scdm"))
    if not outputs:
        raise ConfigError("preprocess needs --eeg and/or --fnirs")
    return _input_files(args.eeg, args.fnirs, args.onsets), outputs, None


def _maps_header() -> dict:
    return {"kind": "correlation_maps", "order": ["c_e", "c_f", "c_ef", "c_fe", "grid_e", "grid_f",
                                                  "grid_ef", "grid_fe"]}


def save_maps(maps, path: Path) -> None:
    arrays = maps.arrays()
    flat = np.concatenate([arrays[k].ravel() for k in _maps_header()["order"]])
    header = _maps_header()
    header["shapes"] = {k: list(arrays[k].shape) for k in header["order"]}
    io.write(path, flat, header)


def load_maps(path: str | Path):
    from .corrmap import CorrelationMaps

    header, flat = io.read(path)
    if header.get("kind") != "correlation_maps":
        raise io.ContainerError(f"{path} is not a correlation-maps container")
    arrays, pos = {}, 0
    for k in header["order"]:
        shape = tuple(header["shapes"][k])
        n = int(np.prod(shape))
        arrays[k] = flat[pos : pos + n].reshape(shape)
        pos += n
    return CorrelationMaps.from_arrays(arrays)


def cmd_corr(args, cfg: Config):
    from .corrmap import compute_maps, most_correlated_map, write_match_report
    from .layout import load_layouts
    from .signals import load_epochs

    eeg, fnirs = load_epochs(args.eeg), load_epochs(args.fnirs)
    layouts = load_layouts(args.layout)
    maps = compute_maps(eeg, fnirs, layouts)
    out = _out_dir(args.out)
    save_maps(maps, out / "correlation_maps.scdm")
    write_match_report(most_correlated_map(maps.c_ef, layouts), out / "most_correlated.csv")
    for name in ("c_e", "c_f", "c_ef"):
        np.savetxt(out / f"{name}.csv", getattr(maps, name), delimiter=",", fmt="%.10g")
    outputs = [str(out / n) for n in ("correlation_maps.scdm", "most_correlated.csv", "c_e.csv", "c_f.csv",
                                      "c_ef.csv")]
    return _input_files(args.eeg, args.fnirs, args.layout), outputs, None


def cmd_schedule_search(args, cfg: Config):
    from .diffusion import NoiseSchedule, default_candidates, schedule_search
    from .signals import load_epochs, standardize

    d = cfg.override("diffusion", grid=args.grid, seed=args.seed).section("diffusion")
    if d["grid"] == "default":
        candidates = default_candidates()
    else:
        spec = json.loads(Path(d["grid"]).read_text())
        candidates = [NoiseSchedule.from_dict(c) for c in spec]
    e0, _ = standardize(load_epochs(args.eeg).epochs)
    f0, _ = standardize(load_epochs(args.fnirs).epochs)
    report = schedule_search(e0, f0, candidates, seed=int(d["seed"]), max_values=int(d["max_values"]))
    out = _out_dir(args.out)
    report.save(out / "schedule_search.json")
    (out / "schedule.json").write_text(json.dumps(report.best.to_dict(), indent=1, sort_keys=True) + "\n")
    inputs = _input_files(args.eeg, args.fnirs) + ([d["grid"]] if d["grid"] != "default" else [])
    return inputs, [str(out / "schedule_search.json"), str(out / "schedule.json")], int(d["seed"])


def _schedule_from(cfg: Config, path: str | None):
    from .diffusion import NoiseSchedule

    if path:
        return NoiseSchedule.from_dict(json.loads(Path(path).read_text()))
    s = cfg.section("schedule")
    if s["family"] == "cosine":
        return NoiseSchedule.cosine(int(s["steps"]))
    if s["family"] != "linear":
        raise ConfigError(f"unknown schedule family {s['family']!r}")
    return NoiseSchedule.linear(int(s["steps"]), float(s["beta_start"]), float(s["beta_end"]))


def _train_config(cfg: Config):
    from .nn.unet import UNetConfig
    from .trainer import TrainConfig

    u, t = cfg.section("unet"), cfg.section("train")
    unet = UNetConfig(width=u["width"], depth=u["depth"], activation=u["activation"],
                      attn_heads=u["attn_heads"], eeg_kernel=u["eeg_kernel"], eeg_time_map=u["eeg_time_map"])
    return TrainConfig(unet=unet, variant=t["variant"], batch_size=t["batch_size"], epochs=t["epochs"],
                       learning_rate=t["learning_rate"], weight_decay=t["weight_decay"], seed=t["seed"],
                       checkpoint_every=t["checkpoint_every"])


def cmd_train(args, cfg: Config):
    from .signals import load_epochs
    from .trainer import train

    cfg.override("train", variant=args.variant, epochs=args.epochs, seed=args.seed,
                 learning_rate=args.lr, batch_size=args.batch_size)
    cfg.override("unet", width=args.width, depth=args.depth)
    schedule = _schedule_from(cfg, args.schedule)
    eeg, fnirs = load_epochs(args.eeg), load_epochs(args.fnirs)
    out = _out_dir(args.out)
    tc = _train_config(cfg)
    maps = load_maps(args.maps) if args.maps else None
    report, _ = train(tc, eeg, fnirs, schedule, maps=maps, out_dir=out)
    outputs = [report.checkpoint_path, str(out / "train_report.json"), str(out / "loss_curve.csv"),
               *report.checkpoints]
    return _input_files(args.eeg, args.fnirs, args.schedule, args.maps), outputs, tc.seed


def cmd_synthesize(args, cfg: Config):
    from .signals import load_epochs, save_epochs
    from .trainer import load_checkpoint, synthesize

    s = cfg.override("synthesize", seed=args.seed, e_mode=args.e_mode).section("synthesize")
    ckpt = load_checkpoint(args.checkpoint)
    eeg = load_epochs(args.eeg)
    syn = synthesize(ckpt, eeg, seed=int(s["seed"]), e_mode=s["e_mode"], posterior_noise=s["posterior_noise"])
    out = _out_dir(args.out)
    save_epochs(syn, out / "fnirs_synthetic.scdm")
    return _input_files(args.checkpoint, args.eeg), [str(out / "fnirs_synthetic.scdm")], int(s["seed"])


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def cmd_evaluate(args, cfg: Config):
    from .evalkit import (METRIC_NAMES, classify_ratios, curve_rms, evoked_curve, topography)
    from .layout import load_layouts
    from .signals import CLASS_NAMES, load_epochs

    e = cfg.override("evaluate", seed=args.seed).section("evaluate")
    eeg, fnirs = load_epochs(args.eeg), load_epochs(args.fnirs)
    syn = load_epochs(args.synthetic) if args.synthetic else None
    layout = load_layouts(args.layout)["fNIRS"]
    out = _out_dir(args.out)
    outputs = []

    feature_sets = [("EEG", None), ("EEG+fNIRS", fnirs)] + ([("EEG+synthetic", syn)] if syn else [])
    path = out / "classification.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["features", "ratio", "TP", "FP", "TN", "FN", *METRIC_NAMES])
        for name, extra in feature_sets:
            for row in classify_ratios(eeg, extra, seed=int(e["seed"]), repetitions=int(e["repetitions"]),
                                       test_fraction=float(e["test_fraction"])):
                c = row["counts"]
                w.writerow([name, row["ratio"], c.tp, c.fp, c.tn, c.fn, *(_fmt(row[k]) for k in METRIC_NAMES)])
    outputs.append(str(path))

    sources = [("real", fnirs)] + ([("synthetic", syn)] if syn else [])
    groups = {r: layout.region_indices(r) for r in dict.fromkeys(layout.regions) if r}
    path = out / "evoked.csv"
    curves = {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "class", "group", "time_s", "value"])
        for src, ep in sources:
            for cls in CLASS_NAMES:
                c = evoked_curve(ep, cls, groups)
                curves[(src, cls)] = c
                for g, series in c.items():
                    for k, v in enumerate(series):
                        w.writerow([src, cls, g, f"{k / ep.sample_rate:.4f}", f"{v:.8g}"])
    outputs.append(str(path))
    if syn:
        path = out / "evoked_rms.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "group", "rms_real_vs_synthetic"])
            for cls in CLASS_NAMES:
                for g in groups:
                    w.writerow([cls, g, f"{curve_rms(curves[('real', cls)][g], curves[('synthetic', cls)][g]):.8g}"])
        outputs.append(str(path))

    for src, ep in sources:
        for cls in CLASS_NAMES:
            frames = topography(ep, layout, class_label=cls)
            rasters = np.stack([f.raster for f in frames])
            path = out / f"topography_{src}_{cls}.scdm"
            io.write(path, np.nan_to_num(rasters, nan=0.0),
                     {"kind": "topography", "windows": [list(f.window) for f in frames], "source": src,
                      "class": cls, "mask": "cells outside the channel hull are 0",
                      "hull_cells": [int(v) for v in np.flatnonzero(~np.isnan(frames[0].raster))]})
            outputs.append(str(path))
    return _input_files(args.eeg, args.fnirs, args.synthetic, args.layout), outputs, int(e["seed"])


def cmd_ablate(args, cfg: Config):
    from .evalkit import run_ablation, write_ablation_table
    from .signals import load_epochs

    a = cfg.section("ablate")
    if args.seeds:
        a["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    data = Path(args.data)
    eeg, fnirs = load_epochs(data / "eeg.scdm"), load_epochs(data / "fnirs.scdm")
    schedule = _schedule_from(cfg, args.schedule)
    rows, records = run_ablation(eeg, fnirs, _train_config(cfg), schedule, seeds=a["seeds"],
                                 train_fraction=float(a["train_fraction"]), modality=a["modality"])
    out = _out_dir(args.out)
    write_ablation_table(rows, out / "ablation.csv")
    with open(out / "ablation_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "ACC", "SPE", "PRE", "SEN", "error"])
        for r in records:
            w.writerow([r["variant"], r["seed"], *(_fmt(r.get(k)) for k in ("ACC", "SPE", "PRE", "SEN")),
                        r.get("error", "")])
    inputs = _input_files(data / "eeg.scdm", data / "fnirs.scdm", args.schedule, args.config)
    return inputs, [str(out / "ablation.csv"), str(out / "ablation_runs.csv")], None


def cmd_export_plots(args, cfg: Config):
    from .plots import export_plots

    outputs = export_plots(Path(args.input), _out_dir(args.out))
    return _input_files(*sorted(Path(args.input).glob("*.csv")), *sorted(Path(args.input).glob("*.scdm"))), \
        outputs, None


HANDLERS = {
    "gen": cmd_gen, "preprocess": cmd_preprocess, "corr": cmd_corr, "schedule-search": cmd_schedule_search,
    "train": cmd_train, "synthesize": cmd_synthesize, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
    "export-plots": cmd_export_plots,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scdm", description="Cross-modal EEG to fNIRS diffusion toolkit")
    p.add_argument("--version", action="version", version=f"scdm {__version__}")
    p.add_argument("--config", help="INI config file (flags override it)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)
        return sp

    sp = add("gen", "generate a coupled synthetic EEG/fNIRS dataset")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--scale", choices=("reference", "miniature"))
    sp.add_argument("--noise", type=float)
    sp.add_argument("--chromophore", choices=("hbr", "hbo"))
    sp.add_argument("--out", required=True)

    sp = add("preprocess", "filter, re-reference, resample and epoch continuous recordings")
    sp.add_argument("--eeg")
    sp.add_argument("--fnirs")
    sp.add_argument("--onsets", required=True, help="CSV with onset_seconds,label")
    sp.add_argument("--eeg-window", type=float, default=25.0)
    sp.add_argument("--fnirs-window", type=float, default=25.6)
    sp.add_argument("--out", required=True)

    sp = add("corr", "correlation matrices, scalp rasters and most-correlated channels")
    sp.add_argument("--eeg", required=True)
    sp.add_argument("--fnirs", required=True)
    sp.add_argument("--layout")
    sp.add_argument("--out", required=True)

    sp = add("schedule-search", "choose a noise schedule by Wasserstein distance")
    sp.add_argument("--eeg", required=True)
    sp.add_argument("--fnirs", required=True)
    sp.add_argument("--grid", help="'default' or a JSON list of schedules")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("train", "train the noise predictor")
    sp.add_argument("--eeg", required=True)
    sp.add_argument("--fnirs", required=True)
    sp.add_argument("--schedule", help="schedule JSON (defaults to the [schedule] section)")
    sp.add_argument("--maps", help="correlation-maps container (defaults to the training split's)")
    sp.add_argument("--variant")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--width", type=int)
    sp.add_argument("--depth", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("synthesize", "generate fNIRS epochs for EEG epochs")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--eeg", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--e-mode", choices=("closed", "trajectory"))
    sp.add_argument("--out", required=True)

    sp = add("evaluate", "classification ratios, evoked curves and topographies")
    sp.add_argument("--eeg", required=True)
    sp.add_argument("--fnirs", required=True)
    sp.add_argument("--synthetic")
    sp.add_argument("--layout")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("ablate", "train and evaluate all six module variants")
    sp.add_argument("--data", required=True, help="directory holding eeg.scdm and fnirs.scdm")
    sp.add_argument("--schedule")
    sp.add_argument("--seeds", help="comma-separated seeds")
    sp.add_argument("--out", required=True)

    sp = add("export-plots", "render evaluate outputs as CSV + SVG")
    sp.add_argument("--input", required=True, help="an evaluate output directory")
    sp.add_argument("--out", required=True)
    return p


def _set_threads() -> None:
    raw = os.environ.get("SCDM_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SCDM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"SCDM_THREADS must be a positive integer, got {raw!r}")
    import torch

    torch.set_num_threads(n)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(SUBCOMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _set_threads()
        args.config = args.sub_config or args.config
        cfg = load_config(args.config)
        inputs, outputs, seed = HANDLERS[args.command](args, cfg)
        if args.config:
            inputs = sorted(set(inputs) | {str(args.config)})
        write_manifest(Path(args.out), args.command, argv, cfg, inputs, outputs, seed)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
