"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array (float32 by default, float64 allowed for the
finite-difference oracle) plus an optional gradient buffer.  Operations on
tensors that require gradients record a graph node (op name, parents,
backward closure); ``backward()`` on a scalar walks the graph in reverse
topological order, accumulating gradients additively across fan-out and
writing each reachable tensor's ``grad`` exactly once per call.  The graph
is consumed by backward; a second call without a fresh forward raises
``GraphStateError``.

Values are immutable once created except for ``grad`` and in-place
parameter updates performed by the optimizer between graphs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import GraphStateError, InvalidArgumentError, NumericInputError

_GRAD_ENABLED = True

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


class no_grad:
    """Context manager that disables graph recording (teacher passes, eval)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class _Node:
    """Graph provenance: op id, parent tensors, backward closure."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[_Node] = None
        self._backward_done = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad, dtype=self.data.dtype)
        return t

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction ---------------------------------------------------

    def _child(self, data: np.ndarray, op: str, parents: tuple, backward_fn) -> "Tensor":
        out = Tensor(data, dtype=data.dtype)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.node = _Node(op, parents, backward_fn)
        return out

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out_data = self.data + other.data

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return self._child(out_data, "add", (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            return (-g,)

        return self._child(-self.data, "neg", (self,), backward)

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        out_data = self.data - other.data

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return self._child(out_data, "sub", (self, other), backward)

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other
        out_data = a.data * b.data

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return self._child(out_data, "mul", (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other
        out_data = a.data / b.data

        def backward(g):
            ga = _unbroadcast(g / b.data, a.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            return ga, gb

        return self._child(out_data, "div", (a, b), backward)

    def pow_const(self, exponent: float) -> "Tensor":
        out_data = self.data ** exponent

        def backward(g):
            return (g * exponent * self.data ** (exponent - 1.0),)

        return self._child(out_data, "pow", (self,), backward)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a, b = self, other
        out_data = np.matmul(a.data, b.data)

        def backward(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            if ga.shape != a.shape:
                ga = _unbroadcast(ga, a.shape)
            if gb.shape != b.shape:
                gb = _unbroadcast(gb, b.shape)
            return ga, gb

        return self._child(out_data, "matmul", (a, b), backward)

    __matmul__ = matmul

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        in_shape = self.shape
        out_data = self.data.reshape(shape)

        def backward(g):
            return (g.reshape(in_shape),)

        return self._child(out_data, "reshape", (self,), backward)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out_data = np.transpose(self.data, axes)

        def backward(g):
            return (np.transpose(g, inv),)

        return self._child(out_data, "transpose", (self,), backward)

    def expand(self, shape: Sequence[int]) -> "Tensor":
        shape = tuple(shape)
        in_shape = self.shape
        out_data = np.broadcast_to(self.data, shape)

        def backward(g):
            return (_unbroadcast(g, in_shape),)

        return self._child(np.ascontiguousarray(out_data), "expand", (self,), backward)

    def __getitem__(self, key) -> "Tensor":
        out_data = self.data[key]
        in_shape = self.shape
        in_dtype = self.dtype

        def backward(g):
            full = np.zeros(in_shape, dtype=in_dtype)
            np.add.at(full, key, g)
            return (full,)

        return self._child(np.ascontiguousarray(out_data), "getitem", (self,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        in_shape = self.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, in_shape).astype(self.dtype, copy=True),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, in_shape).astype(self.dtype, copy=True),)

        return self._child(np.asarray(out_data), "sum", (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else _axis_count(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- pointwise nonlinearities ----------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g):
            return (g * out_data,)

        return self._child(out_data, "exp", (self,), backward)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def backward(g):
            return (g / self.data,)

        return self._child(out_data, "log", (self,), backward)

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def backward(g):
            return (g * 0.5 / out_data,)

        return self._child(out_data, "sqrt", (self,), backward)

    def clamp_min(self, floor: float) -> "Tensor":
        out_data = np.maximum(self.data, floor)
        mask = self.data > floor

        def backward(g):
            return (g * mask,)

        return self._child(out_data.astype(self.dtype, copy=False), "clamp_min", (self,), backward)

    def gelu(self) -> "Tensor":
        x = self.data
        phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        out_data = x * phi

        def backward(g):
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            return (g * (phi + x * pdf),)

        return self._child(out_data.astype(self.dtype, copy=False), "gelu", (self,), backward)

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; populates grads of reachable tensors."""
        if self.size != 1:
            raise InvalidArgumentError(f"backward() requires a scalar, got shape {self.shape}")
        if self._backward_done:
            raise GraphStateError("backward() called twice on the same graph; re-run forward first")
        if self.node is None and not self.requires_grad:
            raise GraphStateError("backward() on a tensor with no recorded graph")
        self._backward_done = True

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                topo.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for p in t.node.parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t.grad = g
            if t.node is None:
                continue
            parent_grads = t.node.backward_fn(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
            t.node = None  # graph consumed


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gdim, sdim) in enumerate(zip(grad.shape, shape)) if sdim == 1 and gdim != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _axis_count(shape: tuple, axis) -> int:
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis`` with gradient splitting."""
    parts = tuple(tensors)
    out_data = np.concatenate([t.data for t in parts], axis=axis)
    sizes = [t.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    ref = parts[0]
    return ref._child(out_data, "concat", parts, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        gy = g * gamma.data
        mean_gy = gy.mean(axis=-1, keepdims=True)
        mean_gy_xhat = (gy * xhat).mean(axis=-1, keepdims=True)
        gx = (gy - mean_gy - xhat * mean_gy_xhat) * inv_std
        reduce_axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=reduce_axes)
        gbeta = g.sum(axis=reduce_axes)
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    return x._child(out_data.astype(x.dtype, copy=False), "layer_norm", (x, gamma, beta), backward)


def dropout(x: Tensor, prob: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when prob == 0."""
    if prob <= 0.0:
        return x
    if not 0.0 <= prob < 1.0:
        raise InvalidArgumentError(f"dropout prob must be in [0, 1), got {prob}")
    keep = (rng.random(x.shape) >= prob).astype(x.dtype)
    scale = 1.0 / (1.0 - prob)
    mask = keep * np.asarray(scale, dtype=x.dtype)

    def backward(g):
        return (g * mask,)

    return x._child(x.data * mask, "dropout", (x,), backward)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    parts = tuple(tensors)
    out_data = np.stack([t.data for t in parts], axis=0)

    def backward(g):
        return tuple(g[i] for i in range(len(parts)))

    return parts[0]._child(out_data, "stack", parts, backward)


def softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Temperature softmax along ``axis``, max-subtracted for stability."""
    inv_t = 1.0 / float(temperature)
    z = x.data * inv_t
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return ((s * (g - inner) * inv_t).astype(x.dtype, copy=False),)

    return x._child(s.astype(x.dtype, copy=False), "softmax", (x,), backward)


def log_softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """log(softmax(x / temperature)) along ``axis``."""
    inv_t = 1.0 / float(temperature)
    z = x.data * inv_t
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward(g):
        gsum = g.sum(axis=axis, keepdims=True)
        return (((g - s * gsum) * inv_t).astype(x.dtype, copy=False),)

    return x._child(out.astype(x.dtype, copy=False), "log_softmax", (x,), backward)


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericInputError(f"{what} contains non-finite values")


def as_parameter(data: np.ndarray) -> Tensor:
    """Wrap an array as a trainable leaf tensor."""
    return Tensor(np.ascontiguousarray(data, dtype=np.float32), requires_grad=True)
