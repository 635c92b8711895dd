"""Network building blocks: MTR temporal stages, SCG correlation attention, controls, adapters."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

SCG_MODES = {
    # mode: (query grid, key grid)
    "map": ("grid_ef", "grid_fe"),
    "spatial_eeg": ("grid_e", "grid_e"),
    "spatial_fnirs": ("grid_f", "grid_f"),
}


def activation(name: str = "silu") -> nn.Module:
    if name == "silu":
        return nn.SiLU()
    if name == "gelu":
        return nn.GELU()
    if name == "relu":
        return nn.ReLU()
    raise ValueError(f"unknown activation {name!r}")


# --- MTR pieces ---------------------------------------------------------------


class DepthwiseMultiscale(nn.Module):
    """Per-channel convolutions with kernels 3, 5, 7, 9 (stride 1, same length), summed."""

    kernel_sizes = (3, 5, 7, 9)

    def __init__(self, channels: int, act: str = "silu"):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(channels, channels, k, stride=1, padding=k // 2, groups=channels, bias=False)
            for k in self.kernel_sizes
        )
        self.act = activation(act)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] < max(self.kernel_sizes):
            raise ValueError(f"sequence length {x.shape[-1]} shorter than largest kernel 9")
        out = self.act(self.convs[0](x))
        for conv in self.convs[1:]:
            out = out + self.act(conv(x))
        return out


class CausalDilatedChain(nn.Module):
    """Three kernel-2 convolutions with dilations 1, 2, 4 and left zero-padding.

    With ``stride=2`` only the first convolution is strided, so output position p
    sees inputs 0..2p+1 and the length halves exactly.
    """

    def __init__(self, channels: int, stride: int = 2, act: str = "silu"):
        super().__init__()
        self.stride = stride
        self.convs = nn.ModuleList(
            nn.Conv1d(channels, channels, 2, stride=stride if d == 1 else 1, dilation=d)
            for d in (1, 2, 4)
        )
        self.act = activation(act)

    def forward(self, x: Tensor) -> Tensor:
        if self.stride == 2 and x.shape[-1] % 2:
            raise ValueError(f"sequence length {x.shape[-1]} is not divisible by 2")
        for conv, d in zip(self.convs, (1, 2, 4)):
            pad = 0 if (d == 1 and self.stride == 2) else d
            x = self.act(conv(F.pad(x, (pad, 0))))
        return x


class PointwiseBank(nn.Module):
    """Four kernel-1, stride-2 convolutions: two unpadded (even samples), two left-padded (odd)."""

    def __init__(self, channels: int, act: str = "silu"):
        super().__init__()
        self.convs = nn.ModuleList(nn.Conv1d(channels, channels, 1, stride=2) for _ in range(4))
        self.act = activation(act)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 2:
            raise ValueError(f"sequence length {x.shape[-1]} is not divisible by 2")
        shifted = F.pad(x, (1, 0))
        outs = []
        for i, conv in enumerate(self.convs):
            if i < 2:
                outs.append(self.act(conv(x)))
            else:
                # the leading output only sees the pad value; dropping it keeps length L/2
                outs.append(self.act(conv(shifted)[..., 1:]))
        return torch.stack(outs).mean(dim=0)


def interpolate_midpoint(x: Tensor) -> Tensor:
    """Linear x2 upsampling on sample positions: originals kept, midpoints inserted, edge replicated."""
    nxt = torch.cat([x[..., 1:], x[..., -1:]], dim=-1)
    mid = 0.5 * (x + nxt)
    return torch.stack([x, mid], dim=-1).flatten(-2)


def interpolate_centered(x: Tensor) -> Tensor:
    """Linear x2 upsampling on cell centres (half-sample offset grid)."""
    return F.interpolate(x, scale_factor=2, mode="linear", align_corners=False)


class MtrDown(nn.Module):
    """Sum of depthwise-multiscale (pooled), causal dilated and pointwise-bank branches."""

    def __init__(self, channels: int, act: str = "silu"):
        super().__init__()
        self.depthwise = DepthwiseMultiscale(channels, act)
        self.causal = CausalDilatedChain(channels, stride=2, act=act)
        self.pointwise = PointwiseBank(channels, act)
        self.act = activation(act)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 2:
            raise ValueError(f"MTR down needs an even length, got {x.shape[-1]}")
        a = self.act(F.avg_pool1d(self.depthwise(x), 2))
        return a + self.causal(x) + self.pointwise(x)


class MtrUp(nn.Module):
    """Average of two transposed convolutions and two linear interpolators, each doubling length."""

    def __init__(self, channels: int, act: str = "silu"):
        super().__init__()
        self.tconvs = nn.ModuleList(nn.ConvTranspose1d(channels, channels, 2, stride=2) for _ in range(2))
        self.act = activation(act)

    def forward(self, x: Tensor) -> Tensor:
        outs = [self.act(t(x)) for t in self.tconvs]
        outs += [interpolate_midpoint(x), interpolate_centered(x)]
        return torch.stack(outs).mean(dim=0)


class CovDown(nn.Module):
    def __init__(self, channels: int, act: str = "silu"):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, 3, stride=2, padding=1)
        self.act = activation(act)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 2:
            raise ValueError(f"COV down needs an even length, got {x.shape[-1]}")
        return self.act(self.conv(x))


class CovUp(nn.Module):
    def __init__(self, channels: int, act: str = "silu"):
        super().__init__()
        self.conv = nn.ConvTranspose1d(channels, channels, 4, stride=2, padding=1)
        self.act = activation(act)

    def forward(self, x: Tensor) -> Tensor:
        return self.act(self.conv(x))


# --- channel stages ---------------------------------------------------------------


class ScgLayer(nn.Module):
    """Correlation-grid attention: Q and K come from 2-D convolutions over scalp rasters,
    V is the incoming representation, and Score mixes V's channels."""

    def __init__(self, d_in: int, d_out: int, mode: str, query_planes: int, key_planes: int,
                 kernel_size: int = 3):
        super().__init__()
        if mode not in SCG_MODES:
            raise ValueError(f"unknown SCG mode {mode!r}")
        self.d_in, self.d_out, self.mode = d_in, d_out, mode
        pad = kernel_size // 2
        self.query_conv = nn.Conv2d(query_planes, d_in, kernel_size, padding=pad)
        self.key_conv = nn.Conv2d(key_planes, d_out, kernel_size, padding=pad)

    def score(self, maps: dict[str, Tensor]) -> Tensor:
        q_name, k_name = SCG_MODES[self.mode]
        if q_name not in maps or k_name not in maps:
            raise KeyError(f"SCG mode {self.mode!r} needs {q_name} and {k_name}")
        gq, gk = maps[q_name], maps[k_name]
        if gq.shape[0] != self.query_conv.in_channels or gk.shape[0] != self.key_conv.in_channels:
            raise ValueError(f"grid planes {gq.shape[0]}/{gk.shape[0]} do not match layer "
                             f"({self.query_conv.in_channels}/{self.key_conv.in_channels})")
        q = self.query_conv(gq.unsqueeze(0)).reshape(self.d_in, -1)
        k = self.key_conv(gk.unsqueeze(0)).reshape(self.d_out, -1)
        logits = q @ k.T / math.sqrt(self.d_out)
        return torch.softmax(logits, dim=0)  # each output channel: distribution over inputs

    def forward(self, v: Tensor, maps: dict[str, Tensor], score: Tensor | None = None) -> Tensor:
        if v.shape[1] != self.d_in:
            raise ValueError(f"expected {self.d_in} input channels, got {v.shape[1]}")
        if score is None:
            score = self.score(maps)
        return torch.einsum("io,nil->nol", score, v)


class AttnLayer(nn.Module):
    """Multi-head self-attention over time steps followed by a linear channel head."""

    def __init__(self, d_in: int, d_out: int, heads: int = 4):
        super().__init__()
        heads = next(h for h in (heads, 4, 2, 1) if d_in % h == 0)
        self.d_in, self.d_out = d_in, d_out
        self.attn = nn.MultiheadAttention(d_in, heads, batch_first=True)
        self.head = nn.Linear(d_in, d_out)
        self.last_weights: Tensor | None = None

    def forward(self, x: Tensor, maps: dict[str, Tensor] | None = None) -> Tensor:
        if x.shape[1] != self.d_in:
            raise ValueError(f"expected {self.d_in} input channels, got {x.shape[1]}")
        tokens = x.transpose(1, 2)
        mixed, weights = self.attn(tokens, tokens, tokens, need_weights=True, average_attn_weights=False)
        self.last_weights = weights.detach()
        return self.head(tokens + mixed).transpose(1, 2)


# --- conditioning and adapters ---------------------------------------------------


def sinusoidal(t: Tensor, dim: int) -> Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    ang = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class TimeEmbed(nn.Module):
    """Sinusoidal step code through a learned two-layer projection."""

    def __init__(self, max_steps: int, width: int, base_dim: int = 32, act: str = "silu"):
        super().__init__()
        self.max_steps, self.width, self.base_dim = max_steps, width, base_dim
        hidden = max(width, base_dim)
        self.proj = nn.Sequential(nn.Linear(base_dim, hidden), activation(act), nn.Linear(hidden, width))

    def forward(self, t: Tensor) -> Tensor:
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() and (int(t.min()) < 1 or int(t.max()) > self.max_steps):
            raise ValueError(f"time step out of range [1, {self.max_steps}]")
        dtype = self.proj[0].weight.dtype
        return self.proj(sinusoidal(t, self.base_dim).to(dtype))


def pooling_matrix(n_in: int, n_out: int) -> Tensor:
    """Rows average the input samples whose positions fall in each output cell."""
    w = torch.zeros(n_out, n_in)
    cell = torch.arange(n_in) * n_out // n_in
    w[cell, torch.arange(n_in)] = 1.0
    return w / w.sum(dim=1, keepdim=True).clamp_min(1.0)


class Adapter(nn.Module):
    """Convolution followed by a linear map over time (skipped when lengths agree).

    When the time axis is reduced the convolution output passes through the activation
    first, so the time map pools rectified (power-like) features. ``time_map="pool"``
    keeps that map fixed at window-average decimation; ``"learned"`` trains a full
    linear layer initialized the same way.
    """

    def __init__(self, in_channels: int, in_length: int, width: int, length: int,
                 kernel_size: int = 1, act: str = "silu", time_map: str = "pool"):
        super().__init__()
        if time_map not in ("pool", "learned"):
            raise ValueError(f"unknown time_map {time_map!r}")
        self.in_channels, self.in_length = in_channels, in_length
        self.conv = nn.Conv1d(in_channels, width, kernel_size, padding=kernel_size // 2)
        self.act, self.time = None, None
        if in_length != length:
            self.act = activation(act)
            if time_map == "learned":
                self.time = nn.Linear(in_length, length)
                with torch.no_grad():
                    self.time.weight.copy_(pooling_matrix(in_length, length))
                    self.time.bias.zero_()
            else:
                self.register_buffer("pool", pooling_matrix(in_length, length), persistent=False)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1:] != (self.in_channels, self.in_length):
            raise ValueError(f"adapter expects N x {self.in_channels} x {self.in_length}, "
                             f"got {tuple(x.shape)}")
        h = self.conv(x)
        if self.act is None:
            return h
        h = self.act(h)
        if self.time is not None:
            return self.time(h)
        return h @ self.pool.to(h.dtype).T
