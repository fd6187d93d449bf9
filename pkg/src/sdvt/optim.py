"""Decoupled-weight-decay adaptive optimizer.

The update is the standard bias-corrected two-moment rule with weight decay
applied directly to the parameter (not through the gradient).  All math is
float32 and elementwise, so identical inputs produce bitwise-identical
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from .errors import GraphStateError, InvalidArgumentError
from .tensor import Tensor


@dataclass
class AdamWHyper:
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def validate(self) -> "AdamWHyper":
        for name, v in (("learning_rate", self.learning_rate), ("beta1", self.beta1),
                        ("beta2", self.beta2), ("eps", self.eps),
                        ("weight_decay", self.weight_decay)):
            if not np.isfinite(v):
                raise InvalidArgumentError(f"{name} must be finite, got {v}")
        return self


class OptimState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self, params: Dict[str, Tensor], hyper: Optional[AdamWHyper] = None):
        self.hyper = (hyper or AdamWHyper()).validate()
        self.step_count = 0
        self.first_moment = {
            name: np.zeros_like(p.data) for name, p in params.items()
        }
        self.second_moment = {
            name: np.zeros_like(p.data) for name, p in params.items()
        }


def clip_grad_norm(params: Dict[str, Tensor], names: Iterable[str], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    names = list(names)
    for name in names:
        g = params[name].grad
        if g is not None:
            total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = np.float32(max_norm / norm)
        for name in names:
            g = params[name].grad
            if g is not None:
                np.multiply(g, scale, out=g)
    return norm


def adamw_step(params: Dict[str, Tensor], state: OptimState,
               trainable: Optional[Iterable[str]] = None) -> None:
    """Apply one optimizer step in place to ``trainable`` (default: all) params."""
    h = state.hyper
    names = sorted(trainable) if trainable is not None else list(params.keys())
    for name in names:
        if params[name].grad is None:
            raise GraphStateError(f"parameter '{name}' has no gradient; run backward first")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - h.beta1 ** t
    bc2 = 1.0 - h.beta2 ** t
    for name in names:
        p = params[name]
        g = p.grad
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= np.float32(h.beta1)
        m += np.float32(1.0 - h.beta1) * g
        v *= np.float32(h.beta2)
        v += np.float32(1.0 - h.beta2) * (g * g)
        m_hat = m / np.float32(bc1)
        v_hat = v / np.float32(bc2)
        update = m_hat / (np.sqrt(v_hat) + np.float32(h.eps))
        if h.weight_decay != 0.0:
            update = update + np.float32(h.weight_decay) * p.data
        p.data -= np.float32(h.learning_rate) * update
