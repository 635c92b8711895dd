"""Static figure export: tidy CSV plus standalone SVG for each evaluate output."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import io  # noqa: E402

# fixed salt and no date keep the SVG bytes reproducible
_SVG_META = {"Date": None}
matplotlib.rcParams["svg.hashsalt"] = "scdm"


def _save(fig, path: Path) -> str:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return str(path)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_classification(rows: list[dict], path: Path) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    by_feat = defaultdict(list)
    for r in rows:
        by_feat[r["features"]].append(r)
    for feat, rs in by_feat.items():
        acc = [float("nan") if r["ACC"] == "undefined" else float(r["ACC"]) for r in rs]
        ax.plot([r["ratio"] for r in rs], acc, marker="o", label=feat)
    ax.set_xlabel("LMI:RMI training ratio")
    ax.set_ylabel("accuracy")
    ax.legend()
    return _save(fig, path)


def plot_evoked(rows: list[dict], path: Path) -> str:
    curves = defaultdict(lambda: ([], []))
    for r in rows:
        xs, ys = curves[(r["source"], r["class"], r["group"])]
        xs.append(float(r["time_s"]))
        ys.append(float(r["value"]))
    classes = sorted({k[1] for k in curves})
    fig, axes = plt.subplots(1, len(classes), figsize=(5 * len(classes), 3.5), squeeze=False)
    for ax, cls in zip(axes[0], classes):
        for (src, c, group), (xs, ys) in sorted(curves.items()):
            if c == cls:
                ax.plot(xs, ys, linestyle="-" if src == "real" else "--", label=f"{src} {group}")
        ax.set_title(cls)
        ax.set_xlabel("time (s)")
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_topography(rasters: np.ndarray, windows: list, path: Path) -> str:
    n = len(rasters)
    fig, axes = plt.subplots(1, n, figsize=(1.8 * n, 2.2), squeeze=False)
    lim = float(np.max(np.abs(rasters))) or 1.0
    for ax, raster, w in zip(axes[0], rasters, windows):
        ax.imshow(raster, cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.set_title(f"{w[0]:g}-{w[1]:g} s", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)


def export_plots(input_dir: Path, out_dir: Path) -> list[str]:
    """Render every recognised file in an evaluate output directory."""
    input_dir, out_dir = Path(input_dir), Path(out_dir)
    outputs = []
    found = False
    for name, plot in (("classification", plot_classification), ("evoked", plot_evoked)):
        src = input_dir / f"{name}.csv"
        if src.is_file():
            found = True
            rows = _read_csv(src)
            dst = out_dir / f"{name}.csv"
            if dst.resolve() != src.resolve():
                dst.write_bytes(src.read_bytes())
            outputs += [str(dst), plot(rows, out_dir / f"{name}.svg")]
    for src in sorted(input_dir.glob("topography_*.scdm")):
        found = True
        header, rasters = io.read(src)
        csv_path = out_dir / f"{src.stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_start", "window_end", "row", "col", "value"])
            for (a, b), raster in zip(header["windows"], rasters):
                for r in range(raster.shape[0]):
                    for c in range(raster.shape[1]):
                        w.writerow([a, b, r, c, f"{raster[r, c]:.8g}"])
        outputs += [str(csv_path), plot_topography(rasters, header["windows"], out_dir / f"{src.stem}.svg")]
    if not found:
        raise FileNotFoundError(f"no evaluate outputs found in {input_dir}")
    return outputs
