"""Noise-prediction U-Net conditioned on EEG and correlation rasters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import Tensor, nn

from .layers import (SCG_MODES, Adapter, AttnLayer, CovDown, CovUp, MtrDown, MtrUp, ScgLayer,
                     TimeEmbed)

CHANNEL_STAGES = ("scg", "attn")
LENGTH_STAGES = ("mtr", "cov")
GRID_PLANES = {"grid_ef": "eeg", "grid_fe": "fnirs", "grid_e": "eeg", "grid_f": "fnirs"}


@dataclass(frozen=True)
class UNetConfig:
    eeg_channels: int = 30
    eeg_length: int = 4000
    fnirs_channels: int = 36
    length: int = 256
    width: int = 32
    depth: int = 3
    channel_stage: str = "scg"
    scg_mode: str = "map"
    length_stage: str = "mtr"
    max_steps: int = 1000
    attn_heads: int = 4
    time_dim: int = 32
    eeg_kernel: int = 9
    eeg_time_map: str = "pool"
    activation: str = "silu"

    def __post_init__(self) -> None:
        if self.channel_stage not in CHANNEL_STAGES:
            raise ValueError(f"channel_stage must be one of {CHANNEL_STAGES}")
        if self.length_stage not in LENGTH_STAGES:
            raise ValueError(f"length_stage must be one of {LENGTH_STAGES}")
        if self.scg_mode not in SCG_MODES:
            raise ValueError(f"scg_mode must be one of {tuple(SCG_MODES)}")
        scale = 2**self.depth
        if self.depth < 1 or self.width % scale or self.length % scale:
            raise ValueError(f"width {self.width} and length {self.length} must be divisible by 2**depth")
        if self.length_stage == "mtr" and self.length // 2 ** (self.depth - 1) < 9:
            raise ValueError("deepest MTR down stage would see fewer than 9 samples")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def trajectory(self) -> list[tuple[int, int]]:
        """(channels, length) after fusion and after each of the 2*depth blocks."""
        c, n = self.width, self.length
        out = [(c, n)]
        for _ in range(self.depth):
            c, n = c // 2, n // 2
            out.append((c, n))
        for _ in range(self.depth):
            c, n = c * 2, n * 2
            out.append((c, n))
        return out


class SampleBlock(nn.Module):
    def __init__(self, cfg: UNetConfig, c_in: int, direction: str):
        super().__init__()
        c_out = c_in // 2 if direction == "down" else c_in * 2
        self.direction = direction
        self.time_embed = TimeEmbed(cfg.max_steps, c_in, cfg.time_dim, cfg.activation)
        if cfg.channel_stage == "scg":
            q_name, k_name = SCG_MODES[cfg.scg_mode]
            planes = {"eeg": cfg.eeg_channels, "fnirs": cfg.fnirs_channels}
            self.channel = ScgLayer(c_in, c_out, cfg.scg_mode, planes[GRID_PLANES[q_name]],
                                    planes[GRID_PLANES[k_name]])
        else:
            self.channel = AttnLayer(c_in, c_out, cfg.attn_heads)
        if cfg.length_stage == "mtr":
            self.length = MtrDown(c_out, cfg.activation) if direction == "down" else MtrUp(c_out, cfg.activation)
        else:
            self.length = CovDown(c_out, cfg.activation) if direction == "down" else CovUp(c_out, cfg.activation)
        # up blocks fuse the mirrored skip (same shape as their output) back to c_out
        self.skip_fuse = nn.Conv1d(2 * c_out, c_out, 1) if direction == "up" else None

    def forward(self, x: Tensor, temb_t: Tensor, maps: dict[str, Tensor], skip: Tensor | None = None) -> Tensor:
        h = x + self.time_embed(temb_t)[:, :, None]
        h = self.length(self.channel(h, maps))
        if self.skip_fuse is not None:
            h = self.skip_fuse(torch.cat([h, skip], dim=1))
        return h


class UNet(nn.Module):
    def __init__(self, cfg: UNetConfig | None = None):
        super().__init__()
        cfg = cfg or UNetConfig()
        self.cfg = cfg
        self.eeg_adapter = Adapter(cfg.eeg_channels, cfg.eeg_length, cfg.width, cfg.length,
                                   kernel_size=cfg.eeg_kernel, act=cfg.activation,
                                   time_map=cfg.eeg_time_map)
        self.fnirs_adapter = Adapter(cfg.fnirs_channels, cfg.length, cfg.width, cfg.length, kernel_size=3)
        self.fusion = nn.Conv1d(2 * cfg.width, cfg.width, 1)
        self.down = nn.ModuleList(SampleBlock(cfg, cfg.width // 2**i, "down") for i in range(cfg.depth))
        self.up = nn.ModuleList(
            SampleBlock(cfg, cfg.width // 2 ** (cfg.depth - i), "up") for i in range(cfg.depth)
        )
        self.head = nn.Conv1d(cfg.width, cfg.fnirs_channels, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        # step-dependent per-channel pass-through of f_t: the trunk is narrower than the
        # fNIRS montage, so without it some noise directions could never be predicted
        self.passthrough = TimeEmbed(cfg.max_steps, cfg.fnirs_channels, cfg.time_dim, cfg.activation)
        nn.init.zeros_(self.passthrough.proj[-1].weight)
        nn.init.zeros_(self.passthrough.proj[-1].bias)
        self.trace: list[tuple[int, ...]] | None = None

    def forward(self, e_t: Tensor, f_t: Tensor, maps: dict[str, Tensor], t: Tensor) -> Tensor:
        cfg = self.cfg
        if tuple(e_t.shape[1:]) != (cfg.eeg_channels, cfg.eeg_length):
            raise ValueError(f"e_t must be N x {cfg.eeg_channels} x {cfg.eeg_length}, got {tuple(e_t.shape)}")
        if tuple(f_t.shape[1:]) != (cfg.fnirs_channels, cfg.length):
            raise ValueError(f"f_t must be N x {cfg.fnirs_channels} x {cfg.length}, got {tuple(f_t.shape)}")
        if e_t.shape[0] != f_t.shape[0]:
            raise ValueError("e_t and f_t batch sizes differ")
        if cfg.channel_stage == "scg" and not maps:
            raise ValueError("correlation maps are required by the SCG stage")
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(e_t.shape[0])
        h = self.fusion(torch.cat([self.eeg_adapter(e_t), self.fnirs_adapter(f_t)], dim=1))
        trace = [tuple(h.shape[1:])]
        skips = []
        for block in self.down:
            skips.append(h)
            h = block(h, t, maps)
            trace.append(tuple(h.shape[1:]))
        for block in self.up:
            h = block(h, t, maps, skip=skips.pop())
            trace.append(tuple(h.shape[1:]))
        self.trace = trace
        return self.head(h) + self.passthrough(t)[:, :, None] * f_t


def maps_to_tensors(maps, dtype=torch.float32) -> dict[str, Tensor]:
    """Pick the raster planes out of a CorrelationMaps (or dict) as constant tensors."""
    src = maps.arrays() if hasattr(maps, "arrays") else dict(maps)
    return {k: torch.as_tensor(np.asarray(src[k]), dtype=dtype) for k in GRID_PLANES if k in src}


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
