"""Noise-prediction training loop, checkpoints and ablation-variant assembly."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import io
from .corrmap import CorrelationMaps, compute_maps
from .diffusion import NoiseSchedule, q_sample, shared_noise
from .layout import ChannelLayout, reference_layouts
from .nn.unet import UNet, UNetConfig, maps_to_tensors, parameter_count
from .signals import EpochSet, standardize

log = logging.getLogger(__name__)

# Row order of the ablation table.
VARIANTS = (
    "ATTN+COV",
    "ATTN+MTR",
    "SCG(EEG)+COV",
    "SCG(EEG)+MTR",
    "SCG(fNIRS)+COV",
    "SCG(fNIRS)+MTR",
)
_CHANNEL_STAGES = {"ATTN": ("attn", "map"), "SCG(EEG)": ("scg", "map"), "SCG(fNIRS)": ("scg", "spatial_fnirs")}


class TrainingDiverged(RuntimeError):
    pass


def normalize_variant(name: str) -> str:
    key = re.sub(r"\s+", "", name)
    for v in VARIANTS:
        if key.lower() == v.lower():
            return v
    raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")


def variant_config(variant: str, base: UNetConfig | None = None) -> UNetConfig:
    channel, length = normalize_variant(variant).split("+")
    stage, mode = _CHANNEL_STAGES[channel]
    return replace(base or UNetConfig(), channel_stage=stage, scg_mode=mode, length_stage=length.lower())


def build_variant(variant: str, base: UNetConfig | None = None) -> UNet:
    net = UNet(variant_config(variant, base))
    log.info("built %s with %d parameters", normalize_variant(variant), parameter_count(net))
    return net


@dataclass
class TrainConfig:
    unet: UNetConfig = field(default_factory=UNetConfig)
    variant: str = "SCG(EEG)+MTR"
    batch_size: int = 8
    epochs: int = 30
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 writes only the final checkpoint

    def __post_init__(self) -> None:
        self.variant = normalize_variant(self.variant)
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("batch_size >= 1, epochs >= 0 and learning_rate > 0 are required")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unet = d.pop("unet", {})
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(unet=UNetConfig.from_dict(unet) if isinstance(unet, dict) else unet, **d)


def miniature_setup(width: int = 64) -> tuple[TrainConfig, NoiseSchedule]:
    """Desk-scale training recipe for ``MINIATURE_SPEC`` data (1000/32 samples)."""
    cfg = TrainConfig(unet=UNetConfig(width=width, depth=2), batch_size=4, epochs=30,
                      learning_rate=3e-3, seed=1)
    return cfg, NoiseSchedule.linear(50, 1e-4, 0.2)


# --- checkpoints ------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: TrainConfig
    schedule: NoiseSchedule
    state: dict[str, np.ndarray]
    maps: CorrelationMaps
    norm: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)  # sample rates and channel labels of the training data

    def build_net(self) -> UNet:
        net = UNet(variant_config(self.config.variant, self.config.unet))
        net.load_state_dict({k: torch.as_tensor(v, dtype=torch.float32) for k, v in self.state.items()})
        return net


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    tables = [("model." + k, v) for k, v in ckpt.state.items()]
    tables += [("maps." + k, v) for k, v in ckpt.maps.arrays().items()]
    tables += [("norm." + k, v) for k, v in sorted(ckpt.norm.items())]
    entries, chunks, offset = [], [], 0
    for name, arr in tables:
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.ravel())
        offset += arr.size
    payload = np.concatenate(chunks) if chunks else np.zeros(0)
    io.write(path, payload, {
        "kind": "checkpoint",
        "tensors": entries,
        "config": ckpt.config.to_dict(),
        "schedule": ckpt.schedule.to_dict(),
        "meta": ckpt.meta,
    })


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, flat = io.read(path)
    if header.get("kind") != "checkpoint" or "tensors" not in header:
        raise io.ContainerError(f"{path} is not a checkpoint container")
    groups: dict[str, dict[str, np.ndarray]] = {"model": {}, "maps": {}, "norm": {}}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = flat[entry["offset"] : entry["offset"] + size].reshape(entry["shape"])
        group, _, name = entry["name"].partition(".")
        groups[group][name] = arr
    return Checkpoint(
        config=TrainConfig.from_dict(header["config"]),
        schedule=NoiseSchedule.from_dict(header["schedule"]),
        state=groups["model"],
        maps=CorrelationMaps.from_arrays(groups["maps"]),
        norm=groups["norm"],
        meta=header.get("meta", {}),
    )


# --- training ----------------------------------------------------------------------


def noise_loss(eps_true, eps_hat):
    """Mean squared error over all elements."""
    if tuple(eps_true.shape) != tuple(eps_hat.shape):
        raise ValueError(f"shape mismatch {tuple(eps_true.shape)} vs {tuple(eps_hat.shape)}")
    diff = eps_hat - eps_true
    return (diff * diff).mean()


@dataclass
class TrainReport:
    epoch_losses: list[float]
    wall_clock: float
    checkpoint_path: str | None
    config: dict
    parameter_count: int
    checkpoints: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        d = self.to_dict()
        del d["wall_clock"]  # kept off disk so reruns are byte-identical
        # file names only, so the report does not depend on where the run directory lives
        if d["checkpoint_path"] is not None:
            d["checkpoint_path"] = Path(d["checkpoint_path"]).name
        d["checkpoints"] = [Path(p).name for p in d["checkpoints"]]
        (directory / "train_report.json").write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
        with open(directory / "loss_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_loss"])
            for i, v in enumerate(self.epoch_losses, 1):
                w.writerow([i, repr(v)])


def fit_config_to_data(cfg: UNetConfig, eeg: EpochSet, fnirs: EpochSet) -> UNetConfig:
    return replace(cfg, eeg_channels=eeg.n_channels, eeg_length=eeg.n_samples,
                   fnirs_channels=fnirs.n_channels, length=fnirs.n_samples)


def train(config: TrainConfig, eeg: EpochSet, fnirs: EpochSet, schedule: NoiseSchedule,
          maps: CorrelationMaps | None = None, layouts: dict[str, ChannelLayout] | None = None,
          out_dir: str | Path | None = None, on_epoch=None) -> tuple[TrainReport, Checkpoint]:
    """Train the noise predictor on trial-aligned EEG/fNIRS pairs.

    Per step: draw a batch, one uniform t per trial, one shared noise draw for the EEG and
    fNIRS of each trial, diffuse both in closed form, and regress the fNIRS noise.
    Correlation maps default to those of the (unstandardized) training split.
    """
    if len(eeg) != len(fnirs):
        raise ValueError(f"trial-count mismatch: {len(eeg)} EEG vs {len(fnirs)} fNIRS")
    if not np.array_equal(eeg.labels, fnirs.labels):
        raise ValueError("EEG and fNIRS trials are not aligned (labels differ)")
    if config.unet.max_steps != schedule.T:
        config = replace(config, unet=replace(config.unet, max_steps=schedule.T))
    config = replace(config, unet=fit_config_to_data(config.unet, eeg, fnirs))
    if maps is None:
        maps = compute_maps(eeg, fnirs, layouts or reference_layouts())

    start = time.perf_counter()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    net = build_variant(config.variant, config.unet)
    grids = maps_to_tensors(maps)
    e_all, e_stats = standardize(eeg.epochs)
    f_all, f_stats = standardize(fnirs.epochs)
    norm = {"e_mean": e_stats[0].ravel(), "e_std": e_stats[1].ravel(),
            "f_mean": f_stats[0].ravel(), "f_std": f_stats[1].ravel()}
    meta = {"eeg_rate": eeg.sample_rate, "fnirs_rate": fnirs.sample_rate,
            "eeg_labels": list(eeg.channel_labels), "fnirs_labels": list(fnirs.channel_labels)}
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate, betas=config.adam_betas,
                           eps=config.adam_eps, weight_decay=config.weight_decay)

    def snapshot() -> Checkpoint:
        state = {k: v.detach().double().numpy().copy() for k, v in net.state_dict().items()}
        return Checkpoint(config, schedule, state, maps, norm, meta)

    out = Path(out_dir) if out_dir is not None else None
    saved: list[str] = []
    losses: list[float] = []
    n = len(eeg)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            e0, f0 = e_all[idx], f_all[idx]
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            eps_e, eps_f = shared_noise(rng, e0.shape, f0.shape)
            e_t = torch.as_tensor(q_sample(e0, t, eps_e, schedule), dtype=torch.float32)
            f_t = torch.as_tensor(q_sample(f0, t, eps_f, schedule), dtype=torch.float32)
            target = torch.as_tensor(eps_f, dtype=torch.float32)
            pred = net(e_t, f_t, grids, torch.as_tensor(t))
            loss = noise_loss(target, pred)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {lo}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            for name, p in net.named_parameters():
                if not torch.isfinite(p).all():
                    raise TrainingDiverged(f"parameter {name} became non-finite at epoch {epoch}")
            total += value * len(idx)
            count += len(idx)
        losses.append(total / count)
        log.info("epoch %d/%d loss %.5f", epoch, config.epochs, losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, losses[-1])
        if out is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            path = out / f"checkpoint_epoch{epoch:04d}.scdm"
            save_checkpoint(snapshot(), path)
            saved.append(str(path))

    ckpt = snapshot()
    final_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        final_path = str(out / "checkpoint.scdm")
        save_checkpoint(ckpt, final_path)
    report = TrainReport(losses, time.perf_counter() - start, final_path, config.to_dict(),
                         parameter_count(net), saved)
    if out is not None:
        report.save(out)
    return report, ckpt


def synthesize(ckpt: Checkpoint, eeg: EpochSet, seed: int, e_mode: str = "closed",
               posterior_noise: bool = False) -> EpochSet:
    """Generate fNIRS epochs for EEG epochs with a trained checkpoint (template maps, no fNIRS input)."""
    from .diffusion import sample

    net = ckpt.build_net()
    e_mean = ckpt.norm["e_mean"].reshape(1, -1, 1)
    e_std = ckpt.norm["e_std"].reshape(1, -1, 1)
    e0 = (eeg.epochs - e_mean) / e_std
    f_hat = sample(net, e0, maps_to_tensors(ckpt.maps), ckpt.schedule, np.random.default_rng(seed),
                   e_mode=e_mode, posterior_noise=posterior_noise)
    f_hat = f_hat * ckpt.norm["f_std"].reshape(1, -1, 1) + ckpt.norm["f_mean"].reshape(1, -1, 1)
    n_ch = ckpt.config.unet.fnirs_channels
    labels = ckpt.meta.get("fnirs_labels") or [f"fNIRS{i + 1}" for i in range(n_ch)]
    return EpochSet(f_hat, eeg.labels, float(ckpt.meta.get("fnirs_rate", 1.0)), labels)
