"""Differentiable network components (torch autograd engine)."""

from .autodiff import backward
from .layers import (AttnLayer, CausalDilatedChain, CovDown, CovUp, DepthwiseMultiscale, MtrDown,
                     MtrUp, PointwiseBank, ScgLayer, TimeEmbed, interpolate_centered,
                     interpolate_midpoint)
from .unet import UNet, UNetConfig, maps_to_tensors, parameter_count

__all__ = [
    "AttnLayer", "CausalDilatedChain", "CovDown", "CovUp", "DepthwiseMultiscale", "MtrDown", "MtrUp",
    "PointwiseBank", "ScgLayer", "TimeEmbed", "UNet", "UNetConfig", "backward",
    "interpolate_centered", "interpolate_midpoint", "maps_to_tensors", "parameter_count",
]
