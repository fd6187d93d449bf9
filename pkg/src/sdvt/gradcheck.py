"""Finite-difference oracle for the autodiff engine.

Inputs are promoted to float64 copies so the central differences are not
drowned by float32 rounding; the analytic gradients are computed by running
the same graph at float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .tensor import Tensor, no_grad


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map the given tensors to a scalar tensor and be pure.  The
    error for each element is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8); the max over all elements of all inputs is returned.
    """
    if not 0.0 < eps < 0.1:
        raise InvalidArgumentError(f"eps must lie in (0, 0.1), got {eps}")

    probes = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]
    loss = f(*probes)
    if loss.size != 1:
        raise InvalidArgumentError(f"f must be scalar-valued, got shape {loss.shape}")
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        for p in probes
    ]

    max_rel = 0.0
    with no_grad():
        for p, ana in zip(probes, analytic):
            flat = p.data.reshape(-1)
            ana_flat = ana.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f(*probes).data)
                flat[i] = orig - eps
                lo = float(f(*probes).data)
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                denom = max(abs(ana_flat[i]), abs(numeric), 1e-8)
                rel = abs(ana_flat[i] - numeric) / denom
                if rel > max_rel:
                    max_rel = rel
    return float(max_rel)
