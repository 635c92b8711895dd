"""Reverse-mode differentiation entry point.

Arrays are torch tensors; torch's autograd tape supplies the backward pass.
"""

from __future__ import annotations

from torch import Tensor


def backward(output: Tensor, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from a scalar output."""
    if not isinstance(output, Tensor):
        raise TypeError("backward expects a tensor")
    if output.numel() != 1:
        raise ValueError(f"backward needs a scalar output, got shape {tuple(output.shape)}")
    if not output.requires_grad:
        raise ValueError("output does not depend on any differentiable leaf")
    output.reshape(()).backward(retain_graph=retain_graph)


def zero_grad(params) -> None:
    for p in params:
        p.grad = None
