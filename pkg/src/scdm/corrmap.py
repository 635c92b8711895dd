"""Channel correlation statistics and their projection onto the 16x16 scalp raster."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .layout import GRID_SIZE, ChannelLayout
from .signals import EpochSet


class CorrelationError(ValueError):
    pass


def pearson_matrix(epochs: EpochSet | np.ndarray, channel_labels: Sequence[str] | None = None) -> np.ndarray:
    """Pearson correlation between channels of the trial-concatenated series."""
    if isinstance(epochs, EpochSet):
        channel_labels = epochs.channel_labels
        epochs = epochs.epochs
    x = np.asarray(epochs, dtype=np.float64)
    if x.ndim == 3:
        x = np.transpose(x, (1, 0, 2)).reshape(x.shape[1], -1)
    if x.shape[1] < 2:
        raise CorrelationError("need at least 2 samples per channel")
    xc = x - x.mean(axis=1, keepdims=True)
    ss = np.einsum("ij,ij->i", xc, xc)
    flat = np.flatnonzero(ss <= 1e-300 * max(1.0, float(np.abs(x).max(initial=0.0))))
    if flat.size:
        name = channel_labels[flat[0]] if channel_labels is not None else f"#{flat[0]}"
        raise CorrelationError(f"zero-variance channel {name}")
    norm = np.sqrt(ss)
    r = (xc @ xc.T) / np.outer(norm, norm)
    r = np.clip(0.5 * (r + r.T), -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return r


def _centered_distances(x: np.ndarray) -> np.ndarray:
    """Double-centered pairwise distance matrices for a batch of 1-D samples (..., n)."""
    d = np.abs(x[..., :, None] - x[..., None, :])
    return (d - d.mean(axis=-1, keepdims=True) - d.mean(axis=-2, keepdims=True)
            + d.mean(axis=(-2, -1), keepdims=True))


def distance_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Sample distance correlation (V-statistic form) of two paired 1-D samples."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise CorrelationError(f"unequal observation counts {x.size} and {y.size}")
    if x.size < 2:
        raise CorrelationError("need at least 2 observations")
    a, b = _centered_distances(x), _centered_distances(y)
    dvar_x, dvar_y = np.mean(a * a), np.mean(b * b)
    if dvar_x <= 0 or dvar_y <= 0:
        raise CorrelationError("constant input has zero distance variance")
    dcov2 = max(float(np.mean(a * b)), 0.0)
    return float(np.sqrt(dcov2 / np.sqrt(dvar_x * dvar_y)))


def eeg_envelope(epochs: np.ndarray, eeg_rate: float, target_rate: float, n_target: int) -> np.ndarray:
    """Rectify, trailing moving average over one target period, sample at target times.

    Returns trials x channels x m with m = number of target instants covered by the EEG.
    """
    ratio = eeg_rate / target_rate
    win = max(1, int(round(ratio)))
    rect = np.abs(np.asarray(epochs, dtype=np.float64))
    csum = np.cumsum(rect, axis=-1)
    smooth = csum.copy()
    smooth[..., win:] = csum[..., win:] - csum[..., :-win]
    smooth /= np.minimum(np.arange(1, rect.shape[-1] + 1), win)
    idx = np.round(np.arange(n_target) * ratio).astype(np.int64)
    idx = idx[idx < rect.shape[-1]]
    return smooth[..., idx]


def cross_dcor_matrix(eeg: EpochSet, fnirs: EpochSet) -> tuple[np.ndarray, np.ndarray]:
    """Trial-averaged distance correlation between envelope-aligned EEG and fNIRS channels.

    Returns ``(C_ef, C_fe)`` with ``C_fe`` the exact transpose of ``C_ef``.
    """
    if len(eeg) != len(fnirs):
        raise CorrelationError(f"trial-count mismatch: {len(eeg)} EEG vs {len(fnirs)} fNIRS")
    env = eeg_envelope(eeg.epochs, eeg.sample_rate, fnirs.sample_rate, fnirs.n_samples)
    m = env.shape[-1]
    hemo = np.asarray(fnirs.epochs[..., :m], dtype=np.float64)
    total = np.zeros((eeg.n_channels, fnirs.n_channels))
    for k in range(len(eeg)):
        a = _centered_distances(env[k]).reshape(eeg.n_channels, -1)
        b = _centered_distances(hemo[k]).reshape(fnirs.n_channels, -1)
        va = np.einsum("ij,ij->i", a, a) / a.shape[1]
        vb = np.einsum("ij,ij->i", b, b) / b.shape[1]
        if np.any(va <= 0) or np.any(vb <= 0):
            raise CorrelationError(f"trial {k}: constant channel has zero distance variance")
        dcov2 = np.maximum(a @ b.T / a.shape[1], 0.0)
        total += np.sqrt(dcov2 / np.sqrt(np.outer(va, vb)))
    c_ef = total / len(eeg)
    return c_ef, c_ef.T.copy()


def project_to_grid(matrix: np.ndarray, target_layout: ChannelLayout,
                    source_layout: ChannelLayout | None = None) -> np.ndarray:
    """Scatter each row onto a 16x16 plane at the target channels' cells."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != len(target_layout):
        raise CorrelationError(
            f"matrix columns ({matrix.shape[-1]}) do not match target layout ({len(target_layout)})"
        )
    if source_layout is not None and matrix.shape[0] != len(source_layout):
        raise CorrelationError(
            f"matrix rows ({matrix.shape[0]}) do not match source layout ({len(source_layout)})"
        )
    planes = np.zeros((matrix.shape[0], GRID_SIZE, GRID_SIZE))
    rows, cols = target_layout.cells[:, 0], target_layout.cells[:, 1]
    planes[:, rows, cols] = matrix
    return planes


@dataclass(frozen=True)
class CorrelationMaps:
    c_e: np.ndarray
    c_f: np.ndarray
    c_ef: np.ndarray
    c_fe: np.ndarray
    grid_e: np.ndarray
    grid_f: np.ndarray
    grid_ef: np.ndarray
    grid_fe: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in
                ("c_e", "c_f", "c_ef", "c_fe", "grid_e", "grid_f", "grid_ef", "grid_fe")}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "CorrelationMaps":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def compute_maps(eeg: EpochSet, fnirs: EpochSet, layouts: dict[str, ChannelLayout]) -> CorrelationMaps:
    """All correlation matrices and their raster projections for one training split."""
    eeg_lay, nirs_lay = layouts["EEG"], layouts["fNIRS"]
    c_e = pearson_matrix(eeg)
    c_f = pearson_matrix(fnirs)
    c_ef, c_fe = cross_dcor_matrix(eeg, fnirs)
    return CorrelationMaps(
        c_e=c_e, c_f=c_f, c_ef=c_ef, c_fe=c_fe,
        grid_e=project_to_grid(c_e, eeg_lay, eeg_lay),
        grid_f=project_to_grid(c_f, nirs_lay, nirs_lay),
        grid_ef=project_to_grid(c_ef, nirs_lay, eeg_lay),
        grid_fe=project_to_grid(c_fe, eeg_lay, nirs_lay),
    )


@dataclass(frozen=True)
class ChannelMatch:
    fnirs_channel: str
    eeg_channel: str
    eeg_index: int
    coefficient: float
    grid_distance: int
    same_region: bool


def most_correlated_map(c_ef: np.ndarray, layouts: dict[str, ChannelLayout]) -> list[ChannelMatch]:
    """For every fNIRS channel, the EEG channel with the highest coefficient (lowest index on ties)."""
    c_ef = np.asarray(c_ef, dtype=np.float64)
    eeg_lay, nirs_lay = layouts["EEG"], layouts["fNIRS"]
    if c_ef.shape != (len(eeg_lay), len(nirs_lay)):
        raise CorrelationError(f"C_ef shape {c_ef.shape} does not match layouts")
    if not np.all(np.isfinite(c_ef)):
        raise CorrelationError("C_ef contains non-finite values")
    out = []
    for j in range(len(nirs_lay)):
        i = int(np.argmax(c_ef[:, j]))  # first maximum
        out.append(ChannelMatch(
            fnirs_channel=nirs_lay.names[j],
            eeg_channel=eeg_lay.names[i],
            eeg_index=i,
            coefficient=float(c_ef[i, j]),
            grid_distance=int(np.max(np.abs(eeg_lay.cells[i] - nirs_lay.cells[j]))),
            same_region=_region_of(eeg_lay, i) == _region_of(nirs_lay, j),
        ))
    return out


def _region_of(layout: ChannelLayout, i: int) -> str:
    return layout.regions[i] if layout.regions else ""


def write_match_report(matches: Sequence[ChannelMatch], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fnirs_channel", "eeg_channel", "eeg_index", "coefficient", "grid_distance", "same_region"])
        for m in matches:
            w.writerow([m.fnirs_channel, m.eeg_channel, m.eeg_index, f"{m.coefficient:.6f}",
                        m.grid_distance, int(m.same_region)])


def region_agreement(real: Sequence[ChannelMatch], synthetic: Sequence[ChannelMatch],
                     layouts: dict[str, ChannelLayout]) -> list[dict]:
    """Per fNIRS channel: do real and synthetic signals pick EEG channels in the same region?"""
    eeg_lay = layouts["EEG"]
    rows = []
    for a, b in zip(real, synthetic):
        rows.append({
            "fnirs_channel": a.fnirs_channel,
            "real_eeg": a.eeg_channel,
            "synthetic_eeg": b.eeg_channel,
            "same_channel": a.eeg_index == b.eeg_index,
            "same_region": eeg_lay.regions[a.eeg_index] == eeg_lay.regions[b.eeg_index],
        })
    return rows
