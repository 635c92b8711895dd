"""Classification metrics, evoked curves, scalp topographies and the ablation runner."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import LinearNDInterpolator
from scipy.signal import welch
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .layout import GRID_SIZE, ChannelLayout, cell_centres
from .signals import CLASS_NAMES, EpochSet

log = logging.getLogger(__name__)

METRIC_NAMES = ("ACC", "SPE", "PRE", "SEN")  # column order of the ablation table
RATIOS = tuple((k, 10 - k) for k in range(2, 9))  # LMI:RMI in the training split
TOPOGRAPHY_WINDOWS = tuple((float(s), float(s + 2)) for s in range(3, 17, 2))
EEG_BANDS = {"mu": (8.0, 13.0), "beta": (13.0, 30.0)}


class EvaluationError(ValueError):
    pass


# --- metrics ----------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    """LMI is the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        """Labels are class indices (0 = LMI)."""
        y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
        pos_t, pos_p = y_true == 0, y_pred == 0
        return cls(tp=int(np.sum(pos_t & pos_p)), fp=int(np.sum(~pos_t & pos_p)),
                   tn=int(np.sum(~pos_t & ~pos_p)), fn=int(np.sum(pos_t & ~pos_p)))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(counts: ConfusionCounts) -> dict[str, float | None]:
    """ACC, SEN, SPE, PRE; a metric with a zero denominator is None (undefined)."""
    c = counts
    return {
        "ACC": _ratio(c.tp + c.tn, c.total),
        "SEN": _ratio(c.tp, c.tp + c.fn),
        "SPE": _ratio(c.tn, c.tn + c.fp),
        "PRE": _ratio(c.tp, c.tp + c.fp),
    }


# --- built-in classifier ------------------------------------------------------------


def _window(n: int, rate: float, span: tuple[float, float] | None) -> slice:
    if span is None:
        return slice(0, n)
    lo, hi = int(round(span[0] * rate)), int(round(span[1] * rate))
    if not 0 <= lo < hi <= n:
        raise EvaluationError(f"window {span} s outside the {n / rate:g} s epoch")
    return slice(lo, hi)


def eeg_features(eeg: EpochSet, span: tuple[float, float] | None = (3.0, 17.0)) -> np.ndarray:
    """Log band power per channel in the mu and beta bands (clipped at Nyquist)."""
    x = eeg.epochs[..., _window(eeg.n_samples, eeg.sample_rate, span)]
    nper = min(x.shape[-1], int(round(2 * eeg.sample_rate)))
    freqs, psd = welch(x, fs=eeg.sample_rate, nperseg=nper, axis=-1)
    feats = []
    for lo, hi in EEG_BANDS.values():
        sel = (freqs >= lo) & (freqs < min(hi, 0.5 * eeg.sample_rate))
        if not sel.any():
            continue
        feats.append(np.log(psd[..., sel].mean(axis=-1) + 1e-20))
    return np.concatenate(feats, axis=1)


def fnirs_features(fnirs: EpochSet, span: tuple[float, float] | None = (3.0, 17.0),
                   segments: int = 3) -> np.ndarray:
    """Per channel and segment: mean level and least-squares slope."""
    x = fnirs.epochs[..., _window(fnirs.n_samples, fnirs.sample_rate, span)]
    parts = np.array_split(x, segments, axis=-1)
    feats = []
    for p in parts:
        if p.shape[-1] < 2:
            raise EvaluationError("fNIRS window too short for slope features")
        tt = np.arange(p.shape[-1]) / fnirs.sample_rate
        tt = tt - tt.mean()
        feats.append(p.mean(axis=-1))
        feats.append((p * tt).sum(axis=-1) / (tt * tt).sum())
    return np.concatenate(feats, axis=1)


def _features(eeg: EpochSet, fnirs: EpochSet | None) -> np.ndarray:
    f = eeg_features(eeg)
    if fnirs is not None:
        if len(fnirs) != len(eeg) or not np.array_equal(fnirs.labels, eeg.labels):
            raise EvaluationError("EEG and fNIRS trials are not aligned")
        f = np.concatenate([f, fnirs_features(fnirs)], axis=1)
    return f


def ratio_split(labels: np.ndarray, ratio: tuple[int, int], rng: np.random.Generator,
                test_fraction: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced test indices, then a training split subsampled to LMI:RMI = ratio."""
    labels = np.asarray(labels)
    idx = [rng.permutation(np.flatnonzero(labels == k)) for k in (0, 1)]
    n_test = int(math.floor(min(len(i) for i in idx) * test_fraction))
    if n_test < 1:
        raise EvaluationError("too few trials for a class-balanced test split")
    test = np.concatenate([i[:n_test] for i in idx])
    pool = [i[n_test:] for i in idx]
    scale = min(len(pool[0]) / ratio[0], len(pool[1]) / ratio[1])
    n0, n1 = int(math.floor(scale * ratio[0])), int(math.floor(scale * ratio[1]))
    if n0 < 1 or n1 < 1:
        raise EvaluationError(f"a class is absent after resampling to {ratio[0]}:{ratio[1]}")
    train = np.concatenate([pool[0][:n0], pool[1][:n1]])
    return np.sort(train), np.sort(test)


def classify(eeg: EpochSet, fnirs: EpochSet | None = None, ratio: tuple[int, int] = (5, 5),
             repetitions: int = 5, seed: int = 0, test_fraction: float = 0.3,
             regularization: float = 1.0) -> ConfusionCounts:
    """Band-power (+ hemodynamic) features with an L2 logistic head; counts summed over repetitions."""
    if ratio not in RATIOS:
        raise EvaluationError(f"ratio {ratio} not in {RATIOS}")
    feats = _features(eeg, fnirs)
    total = ConfusionCounts()
    for rep in range(repetitions):
        rng = np.random.default_rng([seed, rep])
        train, test = ratio_split(eeg.labels, ratio, rng, test_fraction)
        model = make_pipeline(StandardScaler(), LogisticRegression(C=regularization, max_iter=2000))
        model.fit(feats[train], eeg.labels[train])
        total = total + ConfusionCounts.from_predictions(eeg.labels[test], model.predict(feats[test]))
    return total


def classify_ratios(eeg: EpochSet, fnirs: EpochSet | None = None, seed: int = 0,
                    **kw) -> list[dict]:
    rows = []
    for r in RATIOS:
        counts = classify(eeg, fnirs, ratio=r, seed=seed, **kw)
        rows.append({"ratio": f"{r[0]}:{r[1]}", "counts": counts, **metrics(counts)})
    return rows


# --- evoked curves and topographies ---------------------------------------------------


def _class_index(class_label) -> int:
    if isinstance(class_label, str):
        if class_label not in CLASS_NAMES:
            raise EvaluationError(f"unknown class {class_label!r}")
        return CLASS_NAMES.index(class_label)
    if class_label not in (0, 1):
        raise EvaluationError(f"unknown class {class_label!r}")
    return int(class_label)


def evoked_curve(epochs: EpochSet, class_label, groups: dict[str, Sequence[int]] | None = None):
    """Trial mean of one class: channels x samples, or {group: mean over its channels} if groups given."""
    sel = epochs.epochs[epochs.labels == _class_index(class_label)]
    if len(sel) == 0:
        raise EvaluationError(f"no epochs of class {class_label!r}")
    mean = sel.mean(axis=0)
    if groups is None:
        return mean
    return {name: mean[np.asarray(idx)].mean(axis=0) for name, idx in groups.items()}


def curve_rms(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise EvaluationError(f"curve shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass(frozen=True)
class TopographyFrame:
    window: tuple[float, float]
    channels: tuple[int, ...]  # layout indices contributing to the raster
    values: np.ndarray  # per-channel window mean
    raster: np.ndarray  # 16 x 16, NaN outside the channel hull


def topography(epochs: EpochSet, layout: ChannelLayout, windows=TOPOGRAPHY_WINDOWS,
               regions: Sequence[str] = ("motor_left", "motor_right"),
               class_label=None) -> list[TopographyFrame]:
    """Window means over the region's channels, linearly interpolated on the raster.

    Interpolation is barycentric over a Delaunay triangulation of the channel sites; cells
    holding a channel carry that channel's mean exactly.
    """
    if epochs.n_channels != len(layout):
        raise EvaluationError("epochs and layout disagree on channel count")
    data = epochs.epochs
    if class_label is not None:
        data = data[epochs.labels == _class_index(class_label)]
        if len(data) == 0:
            raise EvaluationError(f"no epochs of class {class_label!r}")
    chans = layout.region_indices(*regions) if regions else np.arange(len(layout))
    if len(chans) < 3:
        raise EvaluationError("need at least 3 channels to triangulate")
    centres = cell_centres().reshape(-1, 2)
    cells = layout.cells[chans]
    frames = []
    for w in windows:
        sl = _window(epochs.n_samples, epochs.sample_rate, w)
        values = data[:, chans, sl].mean(axis=(0, 2))
        interp = LinearNDInterpolator(layout.coords[chans], values)
        raster = interp(centres).reshape(GRID_SIZE, GRID_SIZE)
        raster[cells[:, 0], cells[:, 1]] = values
        frames.append(TopographyFrame((float(w[0]), float(w[1])), tuple(int(c) for c in chans), values, raster))
    return frames


# --- ablation ------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    modality: str
    modules: str
    acc: float | None
    spe: float | None
    pre: float | None
    sen: float | None
    acc_std: float | None = None
    note: str = ""

    def metric_values(self) -> tuple:
        return (self.acc, self.spe, self.pre, self.sen)


ABLATION_HEADER = ("Modality", "Modules", "ACC(%)", "SPE(%)", "PRE(%)", "SEN(%)", "ACC_std", "Note")


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.2f}"


def _parse(s: str) -> float | None:
    s = s.strip()
    return None if s in ("", "undefined", "NA") else float(s)


def write_ablation_table(rows: Sequence[AblationRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_HEADER)
        for r in rows:
            w.writerow([r.modality, r.modules, *(_fmt(v) for v in r.metric_values()), _fmt(r.acc_std), r.note])


def read_ablation_table(path: str | Path) -> list[AblationRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:6]) != ABLATION_HEADER[:6]:
            raise EvaluationError(f"unexpected ablation header {header}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            rec = rec + [""] * (len(ABLATION_HEADER) - len(rec))
            rows.append(AblationRow(rec[0], rec[1], *(_parse(v) for v in rec[2:7]), note=rec[7]))
    return rows


def reference_ablation_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("scdm.data").joinpath("reference_ablation.csv")))


def run_ablation(eeg: EpochSet, fnirs: EpochSet, train_config, schedule, variants=None,
                 seeds: Sequence[int] = (0,), train_fraction: float = 0.5, ratio=(5, 5),
                 repetitions: int = 5, modality: str = "HbR") -> tuple[list[AblationRow], list[dict]]:
    """Train each variant, synthesize fNIRS for held-out EEG, classify on EEG + synthetic.

    Trials are split (per seed, class-balanced) into a generator-training half and an
    evaluation half. Returns the Table-shaped rows (metrics in percent, mean over seeds)
    and the per-seed records. A failing variant is recorded in its row's note.
    """
    from dataclasses import replace

    from .trainer import VARIANTS, normalize_variant, synthesize, train

    variants = [normalize_variant(v) for v in (variants or VARIANTS)]
    records: list[dict] = []
    rows = []
    for variant in variants:
        per_seed = []
        note = ""
        for seed in seeds:
            rng = np.random.default_rng([seed, 7919])
            idx = [rng.permutation(np.flatnonzero(eeg.labels == k)) for k in (0, 1)]
            cut = [int(round(len(i) * train_fraction)) for i in idx]
            tr = np.sort(np.concatenate([i[:c] for i, c in zip(idx, cut)]))
            ev = np.sort(np.concatenate([i[c:] for i, c in zip(idx, cut)]))
            try:
                cfg = replace(train_config, variant=variant, seed=seed)
                _, ckpt = train(cfg, eeg.subset(tr), fnirs.subset(tr), schedule)
                eeg_ev = eeg.subset(ev)
                syn = synthesize(ckpt, eeg_ev, seed=seed)
                counts = classify(eeg_ev, syn, ratio=ratio, repetitions=repetitions, seed=seed)
            except Exception as exc:  # recorded, siblings continue
                log.warning("variant %s seed %d failed: %s", variant, seed, exc)
                note = f"failed: {type(exc).__name__}: {exc}"
                records.append({"variant": variant, "seed": seed, "error": note})
                continue
            m = metrics(counts)
            per_seed.append(m)
            records.append({"variant": variant, "seed": seed, "counts": counts, **m})
        if per_seed:
            mean = {k: _mean_defined([m[k] for m in per_seed]) for k in METRIC_NAMES}
            accs = [m["ACC"] for m in per_seed if m["ACC"] is not None]
            std = 100 * float(np.std(accs)) if len(accs) > 1 else None
            rows.append(AblationRow(modality, variant, *(None if mean[k] is None else 100 * mean[k]
                                                          for k in METRIC_NAMES), std, note))
        else:
            rows.append(AblationRow(modality, variant, None, None, None, None, None, note))
    return rows, records


def _mean_defined(values: list) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None
