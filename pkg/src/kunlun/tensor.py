"""Dense float64 tensors with a define-by-run reverse-mode tape.

Everything downstream (attention kernels, summarizers, the full model) is
built from the primitive ops in this module. Ops executed while a Tape is
active record a node holding a vector-Jacobian closure; ``backward`` replays
the nodes in reverse. Tensors are immutable once created by an op; the
trainer is the only writer of parameter data between steps.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class NumericsError(ArithmeticError):
    """An op produced NaN/Inf, or training diverged."""


def _ensure_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values produced by {where}")


class Tensor:
    """Row-major float64 array plus a requires_grad flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        _ensure_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; all routed through the taped ops below.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(data) -> Tensor:
    """Tensor that never receives gradients."""
    return Tensor(data, requires_grad=False)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


class Params:
    """Ordered registry of named learnable tensors."""

    def __init__(self):
        self._store: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._store:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self._store[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __len__(self) -> int:
        return len(self._store)

    def names(self) -> list[str]:
        return list(self._store)

    def items(self):
        return self._store.items()

    def count(self) -> int:
        """Total learnable scalars."""
        return sum(t.size for t in self._store.values())

    def set(self, name: str, data: np.ndarray) -> None:
        """Replace a parameter's value (trainer-only, between steps)."""
        t = self._store[name]
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.shape != t.shape:
            raise ShapeError(f"parameter {name!r} has shape {t.shape}, got {arr.shape}")
        _ensure_finite(arr, f"parameter update of {name!r}")
        t.data = arr


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Op graph recorded during one forward pass.

    Holds the parameter registry it differentiates against; ``backward``
    fills ``grads`` (name -> Tensor) for every registered parameter,
    zeros for parameters the loss never touched.
    """

    def __init__(self, params: Params | None = None):
        self.params = params if params is not None else Params()
        self.nodes: list[_Node] = []
        self.grads: dict[str, Tensor] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tapes must unwind in LIFO order"


def _active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def record(out: Tensor, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Attach a custom node to the active tape.

    ``vjp(grad_out)`` must return one gradient array (or None) per parent.
    Used by ops in this module and by fused kernels elsewhere.
    """
    out.requires_grad = any(p.requires_grad for p in parents)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(_Node(out, tuple(parents), vjp))
    return out


def backward(tape: Tape, loss: Tensor) -> dict[str, Tensor]:
    """Reverse sweep from a scalar loss; returns the gradient store."""
    if loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    keep: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = adjoint.pop(id(node.out), None)
        keep.pop(id(node.out), None)
        if g is None:
            continue
        partials = node.vjp(g)
        for parent, pg in zip(node.parents, partials):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in adjoint:
                adjoint[pid] = adjoint[pid] + pg
            else:
                adjoint[pid] = pg
                keep[pid] = parent
    tape.grads = {}
    for name, p in tape.params.items():
        g = adjoint.get(id(p))
        if g is None:
            g = np.zeros(p.shape, dtype=np.float64)
        tape.grads[name] = Tensor(g)
    return tape.grads


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    _ensure_finite(out.data, "add")
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    _ensure_finite(out.data, "sub")
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    _ensure_finite(out.data, "mul")
    return record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)
    _ensure_finite(out.data, "div")

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return record(out, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    _ensure_finite(out.data, "scale")
    return record(out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D product; gradients dA = g @ B^T, dB = A^T @ g."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs (m,k)x(k,n), got {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    _ensure_finite(out.data, "matmul")
    return record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def matvec(a: Tensor, x: Tensor) -> Tensor:
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec needs (m,k)x(k,), got {a.shape} x {x.shape}")
    out = Tensor(a.data @ x.data)
    _ensure_finite(out.data, "matvec")
    return record(out, (a, x), lambda g: (np.outer(g, x.data), a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    out = Tensor(a.data.T)
    return record(out, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(out, tuple(ts), vjp)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    vs = list(vectors)
    if not vs:
        raise ShapeError("stack_rows of zero vectors")
    for v in vs:
        if v.ndim != 1:
            raise ShapeError(f"stack_rows expects vectors, got shape {v.shape}")
    out = Tensor(np.stack([v.data for v in vs], axis=0))

    def vjp(g):
        return tuple(g[i] for i in range(len(vs)))

    return record(out, tuple(vs), vjp)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"slice_rows expects a matrix, got shape {a.shape}")
    out = Tensor(a.data[start:stop].copy())

    def vjp(g):
        full = np.zeros(a.shape, dtype=np.float64)
        full[start:stop] = g
        return (full,)

    return record(out, (a,), vjp)


def lookup_row(table: Tensor, index: int) -> Tensor:
    """Row gather with scatter-add backward (embedding lookup)."""
    n = table.shape[0]
    if not 0 <= index < n:
        raise IndexError(f"row index {index} out of range for table with {n} rows")
    out = Tensor(table.data[index].copy())

    def vjp(g):
        full = np.zeros(table.shape, dtype=np.float64)
        full[index] = g
        return (full,)

    return record(out, (table,), vjp)


def lookup_rows(table: Tensor, indices) -> Tensor:
    """Gather many rows at once; backward scatter-adds duplicate indices."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"lookup_rows expects a 1-D index array, got shape {idx.shape}")
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row indices out of range for table with {n} rows")
    out = Tensor(table.data[idx].copy() if idx.size else np.zeros((0, table.shape[1])))

    def vjp(g):
        full = np.zeros(table.shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return record(out, (table,), vjp)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    return record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(out, (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


def mean_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return scale(sum_axis(a, axis, keepdims), 1.0 / a.shape[axis])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


def _dsilu(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


# name -> (forward, derivative(x, y)); derivative may use input and/or output.
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "identity": (lambda x: x, lambda x, y: np.ones_like(x)),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64)),
    "silu": (_silu, _dsilu),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "exp": (np.exp, lambda x, y: y),
    "sqrt": (np.sqrt, lambda x, y: 0.5 / y),
    "log": (np.log, lambda x, y: 1.0 / x),
}


def activation(a: Tensor, kind: str) -> Tensor:
    try:
        fwd, dfn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    out = Tensor(fwd(a.data))
    _ensure_finite(out.data, f"activation({kind})")
    return record(out, (a,), lambda g: (g * dfn(a.data, out.data),))


def silu(a: Tensor) -> Tensor:
    return activation(a, "silu")


def relu(a: Tensor) -> Tensor:
    return activation(a, "relu")


def tanh(a: Tensor) -> Tensor:
    return activation(a, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    return activation(a, "sigmoid")


def softmax_lastdim(a: Tensor) -> Tensor:
    """Stable softmax over the last axis; rows sum to 1 within 1e-12."""
    if a.shape[-1] < 1:
        raise ShapeError("softmax over an empty last axis")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return record(out, (a,), vjp)


def masked_softmax_lastdim(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over entries where ``mask`` is True; fully-masked rows give 0.

    The mask is a plain boolean array (non-differentiable aux input)
    broadcastable to ``a``'s shape.
    """
    m = np.broadcast_to(mask, a.shape)
    neg = np.where(m, a.data, -np.inf)
    rowmax = neg.max(axis=-1, keepdims=True) if a.shape[-1] else np.zeros(a.shape[:-1] + (1,))
    # Fully-masked rows have rowmax = -inf; substitute 0 to keep exp finite.
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(np.where(m, a.data - rowmax, -np.inf))
    denom = e.sum(axis=-1, keepdims=True)
    y = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    out = Tensor(y)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return record(out, (a,), vjp)


def rotate_pairs(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Apply per-pair plane rotations along the last axis.

    ``x`` has even last extent d; ``cos``/``sin`` carry the rotation angles for
    the d/2 planes (shape broadcastable to x[..., ::2]). Norm-preserving;
    backward rotates the gradient by the negative angles.
    """
    if x.shape[-1] % 2 != 0:
        raise ShapeError(f"rotate_pairs needs an even last extent, got {x.shape}")
    even = x.data[..., 0::2]
    odd = x.data[..., 1::2]
    out_data = np.empty_like(x.data)
    out_data[..., 0::2] = even * cos - odd * sin
    out_data[..., 1::2] = even * sin + odd * cos
    out = Tensor(out_data)

    def vjp(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (gx,)

    return record(out, (x,), vjp)


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy in nats, stable for large |logit|."""
    z = logits.data
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError(f"logits shape {z.shape} != labels shape {y.shape}")
    n = max(z.size, 1)
    loss = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(loss.sum() / n)
    _ensure_finite(out.data, "bce_with_logits")

    def vjp(g):
        return ((_sigmoid(z) - y) * (float(g) / n),)

    return record(out, (logits,), vjp)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Scale-only RMS normalization over the last axis: x / rms(x) * gain."""
    ms = mean_axis(mul(x, x), axis=x.ndim - 1, keepdims=True)
    inv = div(constant(np.ones(ms.shape)), activation(add(ms, constant(np.full(ms.shape, eps))), "sqrt"))
    return mul(mul(x, inv), gain)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    """Plain-array stable sigmoid for non-differentiated outputs."""
    return _sigmoid(np.asarray(x, dtype=np.float64))
