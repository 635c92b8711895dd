"""Multichannel containers and preprocessing: filters, re-referencing, resampling, epoching.

Inputs are assumed to be artifact-cleaned already (no ocular-artifact removal
happens here) and fNIRS inputs are assumed to be hemoglobin series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from . import io

CLASS_NAMES = ("LMI", "RMI")


class SignalError(ValueError):
    """Raised when a preprocessing precondition is violated."""


@dataclass(frozen=True)
class MultichannelSeries:
    channel_labels: tuple[str, ...]
    sample_rate: float
    data: np.ndarray  # channels x samples

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        if data.ndim != 2:
            raise SignalError(f"series data must be 2-D, got shape {data.shape}")
        if len(self.channel_labels) != data.shape[0]:
            raise SignalError(
                f"shape mismatch: {len(self.channel_labels)} labels for {data.shape[0]} rows"
            )
        if not self.sample_rate > 0:
            raise SignalError("sample_rate must be positive")
        if not np.all(np.isfinite(data)):
            raise SignalError("series contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray, sample_rate: float | None = None) -> "MultichannelSeries":
        return MultichannelSeries(
            self.channel_labels, self.sample_rate if sample_rate is None else sample_rate, data
        )


@dataclass(frozen=True)
class EpochSet:
    """Trials x channels x samples with one class label (0 = LMI, 1 = RMI) per trial."""

    epochs: np.ndarray
    labels: np.ndarray
    sample_rate: float
    channel_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        epochs = np.asarray(self.epochs)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        if epochs.ndim != 3:
            raise SignalError(f"epochs must be 3-D, got shape {epochs.shape}")
        if labels.shape[0] != epochs.shape[0]:
            raise SignalError(
                f"{labels.shape[0]} labels for {epochs.shape[0]} trials"
            )
        if len(self.channel_labels) != epochs.shape[1]:
            raise SignalError(
                f"shape mismatch: {len(self.channel_labels)} labels for {epochs.shape[1]} channels"
            )
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise SignalError("labels must be 0 (LMI) or 1 (RMI)")
        if not self.sample_rate > 0:
            raise SignalError("sample_rate must be positive")
        if not np.all(np.isfinite(epochs)):
            raise SignalError("epochs contain non-finite values")
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.epochs.shape[0]

    @property
    def n_channels(self) -> int:
        return self.epochs.shape[1]

    @property
    def n_samples(self) -> int:
        return self.epochs.shape[2]

    def subset(self, index) -> "EpochSet":
        index = np.asarray(index)
        return EpochSet(self.epochs[index], self.labels[index], self.sample_rate, self.channel_labels)

    def with_epochs(self, epochs: np.ndarray) -> "EpochSet":
        return EpochSet(epochs, self.labels, self.sample_rate, self.channel_labels)


def concat_epochs(sets: Sequence[EpochSet]) -> EpochSet:
    if not sets:
        raise SignalError("nothing to concatenate")
    first = sets[0]
    for other in sets[1:]:
        if other.channel_labels != first.channel_labels or other.sample_rate != first.sample_rate:
            raise SignalError("epoch sets disagree on channels or sample rate")
    return EpochSet(
        np.concatenate([s.epochs for s in sets]),
        np.concatenate([s.labels for s in sets]),
        first.sample_rate,
        first.channel_labels,
    )


# --- interchange files ------------------------------------------------------


def save_series(series: MultichannelSeries, path: str | Path, dtype: str = "f64") -> None:
    arr = series.data.astype(np.float32 if dtype == "f32" else np.float64)
    io.write(path, arr, {
        "kind": "series",
        "sample_rate": float(series.sample_rate),
        "channel_labels": list(series.channel_labels),
    })


def _header_labels(header: dict, n_rows: int) -> tuple[str, ...]:
    labels = header.get("channel_labels")
    if not isinstance(labels, list) or not all(isinstance(s, str) for s in labels):
        raise io.ContainerError("malformed header: channel_labels must be a list of strings")
    if len(labels) != n_rows:
        raise io.ContainerError(
            f"shape mismatch: header declares {len(labels)} labels but payload has {n_rows} rows"
        )
    return tuple(labels)


def load_series(path: str | Path) -> MultichannelSeries:
    header, data = io.read(path)
    if data.ndim != 2:
        raise io.ContainerError(f"series payload must be 2-D, got dims {list(data.shape)}")
    labels = _header_labels(header, data.shape[0])
    rate = header.get("sample_rate")
    if not isinstance(rate, (int, float)) or rate <= 0:
        raise io.ContainerError("malformed header: sample_rate must be a positive number")
    return MultichannelSeries(labels, float(rate), data)


def save_epochs(epochs: EpochSet, path: str | Path, dtype: str = "f64") -> None:
    arr = epochs.epochs.astype(np.float32 if dtype == "f32" else np.float64)
    io.write(path, arr, {
        "kind": "epochs",
        "sample_rate": float(epochs.sample_rate),
        "channel_labels": list(epochs.channel_labels),
        "labels": [CLASS_NAMES[int(k)] for k in epochs.labels],
    })


def load_epochs(path: str | Path) -> EpochSet:
    header, data = io.read(path)
    if data.ndim != 3:
        raise io.ContainerError(f"epoch payload must be 3-D, got dims {list(data.shape)}")
    channels = _header_labels(header, data.shape[1])
    names = header.get("labels")
    if not isinstance(names, list) or len(names) != data.shape[0]:
        raise io.ContainerError("shape mismatch: trial labels do not match payload trials")
    try:
        labels = np.array([CLASS_NAMES.index(n) for n in names], dtype=np.int64)
    except ValueError as exc:
        raise io.ContainerError(f"unknown class label in header: {exc}") from exc
    rate = header.get("sample_rate")
    if not isinstance(rate, (int, float)) or rate <= 0:
        raise io.ContainerError("malformed header: sample_rate must be a positive number")
    return EpochSet(data, labels, float(rate), channels)


# --- filters ----------------------------------------------------------------


@dataclass(frozen=True)
class FilterSpec:
    family: str  # "chebyshev2" | "butterworth"
    order: int
    band: tuple[float, float]
    zero_phase: bool = True
    stopband_attenuation_db: float = 40.0

    def __post_init__(self) -> None:
        if self.family not in ("chebyshev2", "butterworth"):
            raise SignalError(f"unknown filter family {self.family!r}")
        if int(self.order) != self.order or self.order < 1:
            raise SignalError("filter order must be an integer >= 1")
        low, high = self.band
        if not 0 < low < high:
            raise SignalError(f"invalid band {self.band}: need 0 < low < high")
        if self.family == "chebyshev2" and self.stopband_attenuation_db <= 0:
            raise SignalError("stopband attenuation must be positive")


# Reference preprocessing from the EEG/fNIRS pipeline this package targets.
EEG_FILTER = FilterSpec("chebyshev2", 4, (0.5, 50.0), zero_phase=False, stopband_attenuation_db=40.0)
FNIRS_FILTER = FilterSpec("butterworth", 6, (0.01, 0.1), zero_phase=True)


@dataclass(frozen=True)
class FilterCoefficients:
    sos: np.ndarray
    sample_rate: float
    order: int

    def response(self, freqs: np.ndarray) -> np.ndarray:
        """Complex frequency response at ``freqs`` (Hz)."""
        _, h = sps.sosfreqz(self.sos, worN=np.asarray(freqs, dtype=float), fs=self.sample_rate)
        return h


def design_filter(spec: FilterSpec, sample_rate: float) -> FilterCoefficients:
    low, high = spec.band
    if not high < sample_rate / 2:
        raise SignalError(f"band edge {high} Hz must lie below Nyquist ({sample_rate / 2} Hz)")
    if spec.family == "butterworth":
        sos = sps.butter(spec.order, [low, high], btype="bandpass", output="sos", fs=sample_rate)
    else:
        # scipy/MATLAB convention: band edges are where the stopband attenuation is reached.
        sos = sps.cheby2(spec.order, spec.stopband_attenuation_db, [low, high],
                         btype="bandpass", output="sos", fs=sample_rate)
    poles = np.concatenate([np.roots(section[3:]) for section in sos])
    if poles.size and np.max(np.abs(poles)) >= 1.0:
        raise SignalError("unstable filter design: pole on or outside the unit circle")
    return FilterCoefficients(sos, float(sample_rate), int(spec.order))


def apply_filter(series: MultichannelSeries, coefficients: FilterCoefficients,
                 zero_phase: bool = True) -> MultichannelSeries:
    """Filter every channel; zero-phase uses forward-backward passes with odd extension."""
    if coefficients.sample_rate != series.sample_rate:
        raise SignalError("filter designed for a different sample rate")
    padlen = 3 * coefficients.order
    if series.n_samples <= padlen:
        raise SignalError(
            f"series of {series.n_samples} samples is too short for edge handling "
            f"(needs more than {padlen})"
        )
    if zero_phase:
        out = sps.sosfiltfilt(coefficients.sos, series.data, axis=-1, padtype="odd", padlen=padlen)
    else:
        out = sps.sosfilt(coefficients.sos, series.data, axis=-1)
    return series.with_data(out)


def common_average_reference(series: MultichannelSeries) -> MultichannelSeries:
    if series.n_channels < 2:
        raise SignalError("common average reference needs at least 2 channels")
    return series.with_data(series.data - series.data.mean(axis=0, keepdims=True))


def _rational_ratio(source: float, target: float, max_term: int = 1000) -> Fraction:
    ratio = Fraction(target).limit_denominator(10**6) / Fraction(source).limit_denominator(10**6)
    approx = ratio.limit_denominator(max_term)
    if approx.numerator > max_term or abs(float(approx) - target / source) > 1e-9 * (target / source):
        raise SignalError(f"resampling ratio {target}/{source} is not a small rational")
    return approx


def resample(series: MultichannelSeries, target_rate: float) -> MultichannelSeries:
    """Polyphase rational resampling with a Kaiser-windowed (beta 10) anti-alias filter."""
    if not target_rate > 0:
        raise SignalError("target_rate must be positive")
    ratio = _rational_ratio(series.sample_rate, target_rate)
    if ratio == 1:
        return series.with_data(series.data.copy())
    up, down = ratio.numerator, ratio.denominator
    n_out = int(math.floor(series.n_samples * up / down + 0.5))
    # beta 10 keeps passband ripple near 1e-5 (scipy's default 5.0 gives ~1e-3)
    out = sps.resample_poly(series.data, up, down, axis=-1, window=("kaiser", 10.0))
    if out.shape[-1] < n_out:
        out = np.pad(out, ((0, 0), (0, n_out - out.shape[-1])), mode="edge")
    return series.with_data(out[:, :n_out], sample_rate=float(target_rate))


def segment_epochs(series: MultichannelSeries, trial_onsets: Sequence[float],
                   window_seconds: float, labels: Sequence[int] | None = None) -> EpochSet:
    """Cut one fixed-length window per onset (seconds from recording start)."""
    n_win = int(round(window_seconds * series.sample_rate))
    if n_win < 1:
        raise SignalError("window must span at least one sample")
    onsets = list(trial_onsets)
    if labels is None:
        labels = [0] * len(onsets)
    if len(labels) != len(onsets):
        raise SignalError("one label per onset required")
    out = np.empty((len(onsets), series.n_channels, n_win), dtype=series.data.dtype)
    for i, onset in enumerate(onsets):
        start = int(round(onset * series.sample_rate))
        if start < 0 or start + n_win > series.n_samples:
            raise SignalError(
                f"trial {i}: window [{start}, {start + n_win}) falls outside the "
                f"recording of {series.n_samples} samples"
            )
        out[i] = series.data[:, start : start + n_win]
    return EpochSet(out, np.asarray(labels, dtype=np.int64), series.sample_rate, series.channel_labels)


def standardize(epochs: np.ndarray, stats: tuple[np.ndarray, np.ndarray] | None = None):
    """Per-channel z-score over trials and time; returns (scaled, (mean, std))."""
    if stats is None:
        mean = epochs.mean(axis=(0, 2), keepdims=True)
        std = epochs.std(axis=(0, 2), keepdims=True)
        std = np.where(std > 0, std, 1.0)
        stats = (mean, std)
    mean, std = stats
    return (epochs - mean) / std, stats
