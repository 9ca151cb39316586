"""Dense tensor engine with tape-based reverse-mode differentiation.

Tensors wrap row-major numpy arrays (f32 or f64). Every differentiable
operation records an explicit backward rule; Tensor.backward() replays the
recorded sequence in reverse. There is no graph optimizer: the model zoo is
small and fixed, so per-op rules are the whole story.

Non-finite values are an error surface: any op that produces NaN/Inf raises
immediately (toggle with `finite_checks`). The engine also keeps two global
instrumentation counters used by the benchmark harness: multiply-accumulate
counts for matmuls, and a high-water mark of live buffer bytes.
"""

from __future__ import annotations

import weakref
from typing import Callable, Iterable, Sequence

import numpy as np

F32 = np.dtype(np.float32)
F64 = np.dtype(np.float64)

_DTYPE_NAMES = {F32: "f32", F64: "f64"}
_NAME_DTYPES = {"f32": F32, "f64": F64}


class NumericsError(RuntimeError):
    """Raised on shape violations or non-finite results."""


# ---------------------------------------------------------------------------
# instrumentation

class _AllocTracker:
    """High-water accounting of live, owning numpy buffers."""

    def __init__(self):
        self.live_bytes = 0
        self.peak_bytes = 0
        self.enabled = True

    def register(self, arr: np.ndarray) -> None:
        if not self.enabled or arr.base is not None:
            return  # views share an already-counted buffer
        n = arr.nbytes
        self.live_bytes += n
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes
        weakref.finalize(arr, self._release, n)

    def _release(self, n: int) -> None:
        self.live_bytes -= n

    def reset_peak(self) -> None:
        self.peak_bytes = self.live_bytes


alloc_tracker = _AllocTracker()

#: running multiply-accumulate count over all matmuls
mac_counter = {"macs": 0}


class count_macs:
    """Context manager capturing the matmul MAC delta of a code region."""

    def __enter__(self):
        self._start = mac_counter["macs"]
        self.macs = 0
        return self

    def __exit__(self, *exc):
        self.macs = mac_counter["macs"] - self._start
        return False


finite_checks = True


class no_finite_checks:
    def __enter__(self):
        global finite_checks
        self._saved = finite_checks
        finite_checks = False

    def __exit__(self, *exc):
        global finite_checks
        finite_checks = self._saved
        return False


_grad_enabled = True


class no_grad:
    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


# ---------------------------------------------------------------------------
# core

def _as_array(data, dtype) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (F32, F64):
        arr = arr.astype(F64)
    return arr


class Tensor:
    """N-dimensional real array with optional gradient support."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(dtype, str):
            dtype = _NAME_DTYPES[dtype]
        self.data = _as_array(data, dtype)
        alloc_tracker.register(self.data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- metadata ----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self.data.dtype]

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        if isinstance(dtype, str):
            dtype = _NAME_DTYPES[dtype]
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse pass from this tensor, accumulating into `.grad` fields."""
        if grad is None:
            if self.size != 1:
                raise NumericsError("backward() without a seed requires a scalar")
            grad = np.ones_like(self.data)
        # iterative topo sort of the recorded sequence
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if pg is None:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NumericsError("tensor/tensor division not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise NumericsError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype} (no mixed precision)")


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    if finite_checks and not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")


def _make(out_data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    _finite_or_raise(out_data, op)
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Invert numpy broadcasting: reduce g back to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise

def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_same_dtype(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return ((a, _sum_to_shape(g, a.shape)), (b, _sum_to_shape(g, b.shape)))

    return _make(out, (a, b), backward, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_same_dtype(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return ((a, _sum_to_shape(g, a.shape)), (b, -_sum_to_shape(g, b.shape)))

    return _make(out, (a, b), backward, "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        scale = float(b)
        out = a.data * scale

        def backward_s(g):
            return ((a, g * scale),)

        return _make(out, (a,), backward_s, "mul")
    _check_same_dtype(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return ((a, _sum_to_shape(g * bd, a.shape)), (b, _sum_to_shape(g * ad, b.shape)))

    return _make(out, (a, b), backward, "mul")


def square(a: Tensor) -> Tensor:
    out = a.data * a.data
    ad = a.data

    def backward(g):
        return ((a, 2.0 * g * ad),)

    return _make(out, (a,), backward, "square")


def absolute(a: Tensor) -> Tensor:
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def backward(g):
        return ((a, g * sign),)

    return _make(out, (a,), backward, "absolute")


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()

    def backward(g):
        return ((a, _sum_to_shape(g, a.shape)),)

    return _make(out, (a,), backward, "broadcast_to")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard (optionally batch-broadcast) matrix product."""
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise NumericsError("matmul requires rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise NumericsError(f"matmul: inner extents disagree {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    batch = int(np.prod(out.shape[:-2], dtype=np.int64)) if out.ndim > 2 else 1
    mac_counter["macs"] += batch * m * k * n
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ((a, _sum_to_shape(ga, a.shape)), (b, _sum_to_shape(gb, b.shape)))

    return _make(out, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# shape reorganization

def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = a.data.reshape(shape)
    in_shape = a.shape

    def backward(g):
        return ((a, g.reshape(in_shape)),)

    return _make(out, (a,), backward, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def backward(g):
        return ((a, np.transpose(g, inv)),)

    return _make(out, (a,), backward, "transpose")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    for t in ts[1:]:
        _check_same_dtype(ts[0], t, "concat")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        return tuple((t, p) for t, p in zip(ts, parts))

    return _make(out, ts, backward, "concat")


def gather_rows(x: Tensor, index_map) -> Tensor:
    """out[..., i, :] = x[..., index_map[i], :].

    The gather runs along the second-to-last axis so batched token tables
    share one index list. Backward scatters, accumulating on duplicates.
    """
    idx = np.asarray(index_map, dtype=np.int64)
    if idx.ndim != 1:
        raise NumericsError("gather_rows expects a flat index list")
    n = x.shape[-2]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise NumericsError(f"gather_rows: index out of range for {n} rows")
    out = np.take(x.data, idx, axis=-2)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (..., idx, slice(None)), g)
        return ((x, gx),)

    return _make(out, (x,), backward, "gather_rows")


# ---------------------------------------------------------------------------
# reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    in_shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g, in_shape).copy()),)

    return _make(out, (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)
    in_shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g / count, in_shape).copy()),)

    return _make(out, (a,), backward, "mean")


# ---------------------------------------------------------------------------
# transformer nonlinearities

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along `axis`."""
    ax = axis % x.ndim
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)
    y = out

    def backward(g):
        dot = (g * y).sum(axis=ax, keepdims=True)
        return ((x, y * (g - dot)),)

    return _make(out, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise NumericsError("layer_norm: gamma/beta must match the last-axis extent")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def backward(g):
        sum_axes = tuple(range(g.ndim - 1))
        gbeta = g.sum(axis=sum_axes)
        ggamma = (g * xhat).sum(axis=sum_axes)
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return ((x, gx), (gamma, ggamma), (beta, gbeta))

    return _make(out, (x, gamma, beta), backward, "layer_norm")


_GELU_C = float(np.sqrt(2.0 / np.pi))  # Python float: no f32->f64 promotion


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t ** 2) * dinner
        return ((x, g * dx),)

    return _make(out, (x,), backward, "gelu")


# ---------------------------------------------------------------------------
# channel/space rearrangement

def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """[..., C*r*r, H, W] -> [..., C, H*r, W*r] channel-to-space move.

    Exact inverse of pixel_unshuffle for the same r.
    """
    cr, h, w = x.shape[-3:]
    if cr % (r * r) != 0:
        raise NumericsError(f"pixel_shuffle: channels {cr} not divisible by r^2={r * r}")
    c = cr // (r * r)
    lead = x.shape[:-3]
    nl = len(lead)
    t = reshape(x, lead + (c, r, r, h, w))
    # [..., C, r, r, H, W] -> [..., C, H, r, W, r]
    t = transpose(t, tuple(range(nl)) + (nl, nl + 3, nl + 1, nl + 4, nl + 2))
    return reshape(t, lead + (c, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """[..., C, H*r, W*r] -> [..., C*r*r, H, W]; inverse of pixel_shuffle."""
    c, hr, wr = x.shape[-3:]
    if hr % r != 0 or wr % r != 0:
        raise NumericsError("pixel_unshuffle: spatial extents not divisible by r")
    h, w = hr // r, wr // r
    lead = x.shape[:-3]
    nl = len(lead)
    t = reshape(x, lead + (c, h, r, w, r))
    # [..., C, H, r, W, r] -> [..., C, r, r, H, W]
    t = transpose(t, tuple(range(nl)) + (nl, nl + 2, nl + 4, nl + 1, nl + 3))
    return reshape(t, lead + (c * r * r, h, w))
