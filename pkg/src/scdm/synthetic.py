"""Desk-scale coupled EEG/fNIRS generator.

EEG trials are band-limited noise whose amplitude carries a slow per-channel
fluctuation plus a class-dependent lateralized task modulation (desynchronization
over the motor strip contralateral to the imagined hand). Each fNIRS channel is
produced from the EEG it sits over: weighted mix of the nearest EEG channels,
rectified, low-pass smoothed with a causal kernel (a trailing boxcar by default,
or a gamma-shaped haemodynamic response), downsampled, plus noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import fftconvolve

from .layout import ChannelLayout, reference_layouts
from .signals import EpochSet


@dataclass(frozen=True)
class CouplingSpec:
    eeg_rate: float = 160.0
    eeg_seconds: float = 25.0
    fnirs_rate: float = 10.0
    fnirs_seconds: float = 25.6
    band: tuple[float, float] = (8.0, 30.0)
    fluctuation: float = 0.6  # std of log-amplitude
    fluctuation_seconds: float = 2.0
    task_window: tuple[float, float] = (5.0, 15.0)
    erd_depth: float = 0.5
    global_gain: float = 0.3
    neighbours: int = 3
    mixing_width: float = 0.08
    # "boxcar" (trailing window) or "hrf" (gamma kernel peaking at smoothing_seconds);
    # the lagged hrf kernel weakens zero-lag channel correspondence
    smoothing: str = "boxcar"
    smoothing_seconds: float = 1.5
    noise: float = 0.1
    chromophore: str = "hbr"
    balanced: bool = True

    def __post_init__(self) -> None:
        if self.eeg_rate <= 0 or self.fnirs_rate <= 0:
            raise ValueError("sample rates must be positive")
        if self.eeg_seconds <= 0 or self.fnirs_seconds <= 0:
            raise ValueError("durations must be positive")
        if not 0 < self.band[0] < self.band[1]:
            raise ValueError(f"invalid carrier band {self.band}")
        if self.noise < 0 or self.fluctuation < 0:
            raise ValueError("noise and fluctuation must be non-negative")
        if not 0 <= self.erd_depth < 1:
            raise ValueError("erd_depth must be in [0, 1)")
        if self.neighbours < 1:
            raise ValueError("neighbours must be >= 1")
        if self.smoothing not in ("hrf", "boxcar") or self.smoothing_seconds <= 0:
            raise ValueError("smoothing must be 'hrf' or 'boxcar' with a positive time scale")
        if self.chromophore not in ("hbr", "hbo"):
            raise ValueError("chromophore must be 'hbr' or 'hbo'")

    @property
    def n_eeg(self) -> int:
        return int(round(self.eeg_seconds * self.eeg_rate))

    @property
    def n_fnirs(self) -> int:
        return int(round(self.fnirs_seconds * self.fnirs_rate))

    def to_dict(self) -> dict:
        return asdict(self)


REFERENCE_SPEC = CouplingSpec()
# 40 Hz EEG (1000 samples) and 1.25 Hz fNIRS (32 samples) over the same trial span.
MINIATURE_SPEC = CouplingSpec(eeg_rate=40.0, fnirs_rate=1.25, band=(6.0, 16.0))


class CoupledData(NamedTuple):
    eeg: EpochSet
    fnirs: EpochSet
    weights: np.ndarray  # fNIRS x EEG mixing matrix (rows sum to 1)


def mixing_weights(eeg: ChannelLayout, fnirs: ChannelLayout, neighbours: int,
                   width: float) -> np.ndarray:
    d = np.linalg.norm(fnirs.coords[:, None, :] - eeg.coords[None, :, :], axis=-1)
    w = np.zeros_like(d)
    for j in range(len(fnirs)):
        near = np.argsort(d[j], kind="stable")[:neighbours]
        w[j, near] = np.exp(-0.5 * (d[j, near] / width) ** 2)
        w[j] /= w[j].sum()
    return w


def _bandlimited(rng: np.random.Generator, shape: tuple[int, ...], rate: float,
                 band: tuple[float, float]) -> np.ndarray:
    x = rng.standard_normal(shape)
    spec = np.fft.rfft(x, axis=-1)
    freqs = np.fft.rfftfreq(shape[-1], 1.0 / rate)
    hi = min(band[1], 0.45 * rate)
    spec[..., (freqs < band[0]) | (freqs > hi)] = 0
    y = np.fft.irfft(spec, n=shape[-1], axis=-1)
    return y / y.std(axis=-1, keepdims=True)


def smoothing_kernel(spec: CouplingSpec) -> np.ndarray:
    """Causal kernel at the EEG rate (scale is irrelevant: the output is re-standardized)."""
    if spec.smoothing == "boxcar":
        return np.full(max(1, int(round(spec.smoothing_seconds * spec.eeg_rate))), 1.0)
    # gamma density with shape 6 peaks at 5 * scale
    scale = spec.smoothing_seconds / 5.0
    tk = np.arange(int(math.ceil(4 * spec.smoothing_seconds * spec.eeg_rate))) / spec.eeg_rate
    k = (tk / scale) ** 5 * np.exp(-tk / scale)
    return k / k.sum()


def _task_envelope(t: np.ndarray, window: tuple[float, float], ramp: float = 1.0) -> np.ndarray:
    rise = np.clip((t - window[0]) / ramp, 0, 1)
    fall = np.clip((window[1] - t) / ramp, 0, 1)
    return 0.5 - 0.5 * np.cos(np.pi * np.minimum(rise, fall))


def task_gains(eeg: ChannelLayout, spec: CouplingSpec) -> np.ndarray:
    """Per-class, per-channel amplitude gain during the task window, shape (2, n_eeg)."""
    x, y = eeg.coords[:, 0], eeg.coords[:, 1]
    motor = np.exp(-((y / 0.3) ** 2))
    side = np.clip(x / 0.3, -1, 1)
    gains = np.empty((2, len(eeg)))
    for label, contra_sign in ((0, 1.0), (1, -1.0)):  # LMI -> right hemisphere
        contra = motor * np.clip(contra_sign * side, 0, 1)
        ipsi = motor * np.clip(-contra_sign * side, 0, 1)
        gains[label] = spec.global_gain * (1 - motor) - spec.erd_depth * contra + 0.3 * spec.erd_depth * ipsi
    return gains


def generate_coupled(seed: int, n_trials: int, coupling_spec: CouplingSpec | None = None,
                     layouts: dict[str, ChannelLayout] | None = None) -> CoupledData:
    """Pure function of (seed, n_trials, coupling_spec)."""
    spec = coupling_spec or REFERENCE_SPEC
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError("seed must be a non-negative integer")
    if n_trials < 2:
        raise ValueError("n_trials must be >= 2")
    layouts = layouts or reference_layouts()
    eeg_lay, nirs_lay = layouts["EEG"], layouts["fNIRS"]
    rng = np.random.default_rng(seed)

    if spec.balanced:
        labels = np.tile([0, 1], n_trials // 2 + 1)[:n_trials]
        labels = rng.permutation(labels)
    else:
        labels = rng.integers(0, 2, n_trials)

    kernel = smoothing_kernel(spec)
    lead = len(kernel)  # simulated pre-trial period so the causal smoother is fully warmed up
    span = max(spec.eeg_seconds, spec.fnirs_seconds) + 1.0
    n_int = lead + int(math.ceil(span * spec.eeg_rate))
    t = (np.arange(n_int) - lead) / spec.eeg_rate
    n_ch = len(eeg_lay)

    carrier = _bandlimited(rng, (n_trials, n_ch, n_int), spec.eeg_rate, spec.band)
    slow = rng.standard_normal((n_trials, n_ch, n_int))
    slow = gaussian_filter1d(slow, spec.fluctuation_seconds * spec.eeg_rate, axis=-1, mode="reflect")
    slow /= slow.std(axis=-1, keepdims=True)
    amp = np.exp(spec.fluctuation * slow - 0.5 * spec.fluctuation**2)
    gains = task_gains(eeg_lay, spec)[labels]  # trials x channels
    amp *= 1.0 + gains[:, :, None] * _task_envelope(t, spec.task_window)[None, None, :]
    eeg_full = carrier * amp

    weights = mixing_weights(eeg_lay, nirs_lay, spec.neighbours, spec.mixing_width)
    drive = np.einsum("fc,ncl->nfl", weights, np.abs(eeg_full))
    smooth = fftconvolve(drive, kernel[None, None, :], axes=-1)[..., :n_int]
    idx = lead + np.round(np.arange(spec.n_fnirs) * spec.eeg_rate / spec.fnirs_rate).astype(np.int64)
    hemo = smooth[..., idx]
    hemo = (hemo - hemo.mean(axis=(0, 2), keepdims=True)) / hemo.std(axis=(0, 2), keepdims=True)
    hemo = hemo + spec.noise * rng.standard_normal(hemo.shape)
    if spec.chromophore == "hbr":
        hemo = -0.5 * hemo

    eeg = EpochSet(eeg_full[..., lead : lead + spec.n_eeg], labels, spec.eeg_rate, eeg_lay.names)
    fnirs = EpochSet(hemo, labels, spec.fnirs_rate,
                     tuple(f"{n} {spec.chromophore.upper()}" for n in nirs_lay.names))
    return CoupledData(eeg, fnirs, weights)
