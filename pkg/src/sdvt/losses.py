"""Loss primitives shared by every training regime.

All functions accept ``Tensor`` or array-like inputs and return scalar
tensors (except ``softmax``), so they compose into the autodiff graph.
Hard-label cross entropy is the soft form evaluated on a one-hot target,
so the two are identical by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError, NumericInputError
from .tensor import Tensor

LOG_EPS = 1e-8
NORM_FLOOR = 1e-8


@dataclass
class LossSpec:
    """Weights and temperature for the linear loss combination."""

    w_task: float = 1.0
    w_distil_ce: float = 0.5
    w_cosine: float = 0.0
    w_mse: float = 0.0
    w_kl: float = 0.0
    temperature: float = 1.0

    def validate(self) -> "LossSpec":
        weights = (self.w_task, self.w_distil_ce, self.w_cosine, self.w_mse, self.w_kl)
        for name, w in zip(("w_task", "w_distil_ce", "w_cosine", "w_mse", "w_kl"), weights):
            if not np.isfinite(w) or w < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {w}")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise InvalidArgumentError(f"temperature must be > 0, got {self.temperature}")
        return self


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def softmax(logits, temperature: float = 1.0) -> Tensor:
    """Row-wise temperature softmax over the last axis."""
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {temperature}")
    t = _as_tensor(logits)
    if np.isnan(t.data).any():
        raise NumericInputError("softmax input contains NaN")
    return T.softmax(t, axis=-1, temperature=temperature)


def cross_entropy(logits, target, temperature: float = 1.0) -> Tensor:
    """Mean over the batch of -sum(target * log softmax(logits / T)).

    ``target`` is either integer class labels of shape [batch] or soft
    distributions of shape [batch, classes].
    """
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {temperature}")
    t = _as_tensor(logits)
    if t.ndim != 2:
        raise InvalidArgumentError(f"logits must be [batch, classes], got shape {t.shape}")
    batch, classes = t.shape

    soft = target
    if not isinstance(target, Tensor):
        arr = np.asarray(target)
        if arr.ndim == 1 and np.issubdtype(arr.dtype, np.integer):
            if arr.shape[0] != batch:
                raise InvalidArgumentError(
                    f"label count {arr.shape[0]} does not match batch size {batch}")
            if arr.min(initial=0) < 0 or arr.max(initial=0) >= classes:
                raise InvalidArgumentError(
                    f"labels must lie in [0, {classes}), got range "
                    f"[{arr.min()}, {arr.max()}]")
            one_hot = np.zeros((batch, classes), dtype=t.dtype)
            one_hot[np.arange(batch), arr] = 1.0
            soft = Tensor(one_hot)
        else:
            soft = Tensor(arr.astype(t.dtype))
    if soft.shape != t.shape:
        raise InvalidArgumentError(
            f"target shape {soft.shape} does not match logits shape {t.shape}")
    row_sums = soft.data.sum(axis=-1)
    if np.abs(row_sums - 1.0).max(initial=0.0) > 1e-5:
        raise InvalidArgumentError("soft target rows must sum to 1 within 1e-5")

    log_probs = T.log_softmax(t, axis=-1, temperature=temperature)
    return -(soft * log_probs).sum(axis=-1).mean()


def kl_divergence(p, q) -> Tensor:
    """Mean over the batch of sum(p * (log p - log q)), entries clamped at 1e-8."""
    pt, qt = _as_tensor(p), _as_tensor(q)
    if pt.shape != qt.shape:
        raise InvalidArgumentError(f"shape mismatch: {pt.shape} vs {qt.shape}")
    for name, t in (("p", pt), ("q", qt)):
        row_sums = t.data.sum(axis=-1)
        if np.abs(row_sums - 1.0).max(initial=0.0) > 1e-5:
            raise InvalidArgumentError(f"{name} rows must sum to 1 within 1e-5")
    log_p = pt.clamp_min(LOG_EPS).log()
    log_q = qt.clamp_min(LOG_EPS).log()
    return (pt * (log_p - log_q)).sum(axis=-1).mean()


def cosine_distance_loss(a, b) -> Tensor:
    """Mean over the batch of 1 - cos(a_i, b_i); rows must be non-degenerate."""
    at, bt = _as_tensor(a), _as_tensor(b)
    if at.shape != bt.shape or at.ndim != 2:
        raise InvalidArgumentError(
            f"expected matching [batch, dim] inputs, got {at.shape} and {bt.shape}")
    for name, t in (("a", at), ("b", bt)):
        norms = np.sqrt((t.data.astype(np.float64) ** 2).sum(axis=-1))
        if norms.min(initial=np.inf) < NORM_FLOOR:
            raise NumericInputError(f"{name} contains a zero-norm row")
    dot = (at * bt).sum(axis=-1)
    norm_a = (at * at).sum(axis=-1).sqrt().clamp_min(NORM_FLOOR)
    norm_b = (bt * bt).sum(axis=-1).sqrt().clamp_min(NORM_FLOOR)
    return (1.0 - dot / (norm_a * norm_b)).mean()


def mse_loss(a, b) -> Tensor:
    """Mean squared elementwise difference."""
    at, bt = _as_tensor(a), _as_tensor(b)
    if at.shape != bt.shape:
        raise InvalidArgumentError(f"shape mismatch: {at.shape} vs {bt.shape}")
    diff = at - bt
    return (diff * diff).mean()
