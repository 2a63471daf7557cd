"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable primitive produces a :class:`Tensor` that remembers its
parents and a closure mapping the output adjoint to the parents' adjoints.
``backward`` linearises that graph into a :class:`Tape` (a deterministic
topological order) and replays the adjoints in reverse.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from .exceptions import RankError, ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, oracles)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """n-dimensional float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    # ------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), bw)


def tabs(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # Branch form 1/(1+e^-x) for x >= 0 and e^x/(1+e^x) for x < 0, written
    # without data-dependent branches: exp(min(x, 0)) / (1 + exp(-|x|)).
    # Neither exponent is positive, so nothing overflows.  The clamp keeps
    # saturated values strictly inside (0, 1).
    d = np.abs(x)
    np.negative(d, out=d)
    np.exp(d, out=d)
    d += 1.0
    s = np.minimum(x, 0.0)
    np.exp(s, out=s)
    s /= d
    np.clip(s, _SIG_LO, _SIG_HI, out=s)
    return s


def sigmoid(x) -> Tensor:
    """Logistic function, computed in the overflow-free branch form."""
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)

    def bw(g):
        d = 1.0 - s
        d *= s
        d *= g
        return (d,)

    return _make(s, (x,), bw)


def swish(x) -> Tensor:
    """``x * sigmoid(x)``."""
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)
    y = x.data * s

    def bw(g):
        # d/dx x*s(x) = s + y*(1 - s)
        d = 1.0 - s
        d *= y
        d += s
        d *= g
        return (d,)

    return _make(y, (x,), bw)


# ------------------------------------------------------------------ reductions
def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axes(axis, x.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(tsum(x, axis=axes, keepdims=keepdims), 1.0 / count)


# ------------------------------------------------------------------ structural
def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, old),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    sizes = [t.shape[ax] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as err:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}") from err
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return _make(data, tensors, bw)


def _has_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    advanced = _has_advanced(index)

    def bw(g):
        full = np.zeros(shape)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(np.array(x.data[index]), (x,), bw)


def index_add(x, index: np.ndarray, size: int, axis: int = 1) -> Tensor:
    """Scatter-sum slices of ``x`` along ``axis`` into ``size`` buckets.

    ``out[..., index[e], ...] += x[..., e, ...]``; the adjoint is a gather.
    """
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    ax = axis % x.ndim
    if x.shape[ax] != len(index):
        raise ShapeError(f"index of length {len(index)} does not match axis {axis} of {x.shape}")
    moved = np.moveaxis(x.data, ax, 0)
    out = np.zeros((size,) + moved.shape[1:])
    np.add.at(out, index, moved)
    out = np.moveaxis(out, 0, ax)
    return _make(out, (x,), lambda g: (np.take(g, index, axis=ax),))


# -------------------------------------------------------------------- algebra
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise RankError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


def linear(x, W, b=None) -> Tensor:
    """``x @ W + b`` over the trailing dimension of ``x``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {W.shape}")
    n_in, n_out = W.shape
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, n_in)
    y = x2 @ W.data
    parents = [x, W]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (n_out,):
            raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {W.shape}")
        y = y + b.data
        parents.append(b)

    def bw(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = x2.T @ g2 if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return _make(y.reshape(lead + (n_out,)), parents, bw)


def conv1d_output_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def conv1d(x, K, b=None, stride: int = 1) -> Tensor:
    """Valid (unpadded) 1-D cross-correlation.

    x: [B, C_in, L], K: [C_out, C_in, k], b: [C_out] -> [B, C_out, L_out].
    """
    x, K = as_tensor(x), as_tensor(K)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.ndim != 3 or K.ndim != 3:
        raise RankError(f"conv1d expects rank-3 input and kernel, got {x.shape} and {K.shape}")
    B, c_in, L = x.shape
    c_out, kc_in, k = K.shape
    if kc_in != c_in:
        raise ShapeError(f"conv1d: input channels {c_in} do not match kernel {K.shape}")
    if L < k:
        raise ShapeError(f"conv1d: input length {L} is shorter than kernel size {k}")
    L_out = conv1d_output_length(L, k, stride)
    # windows: [B, C_in, L_out, k]
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]
    y = np.einsum("bclk,ock->bol", windows, K.data, optimize=True)
    parents = [x, K]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (c_out,):
            raise ShapeError(f"conv1d: bias shape {b.shape} does not match {c_out} output channels")
        y = y + b.data[None, :, None]
        parents.append(b)

    def bw(g):
        gK = np.einsum("bol,bclk->ock", g, windows, optimize=True) if K.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = np.zeros(x.shape)
            stop = (L_out - 1) * stride + 1
            for j in range(k):
                gx[:, :, j:j + stop:stride] += np.einsum("bol,oc->bcl", g, K.data[:, :, j])
        if b is None:
            return gx, gK
        return gx, gK, g.sum(axis=(0, 2))

    return _make(y, parents, bw)


# -------------------------------------------------------------------- backward
class Tape:
    """Ordered record of the operations that produced a tensor.

    ``entries`` is a topological order (inputs before outputs); replaying the
    adjoint closures in reverse order yields the gradients.  Traversal order
    is fully determined by the graph, so replays are bitwise reproducible.
    """

    def __init__(self, entries: list[Tensor]):
        self.entries = entries

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.entries)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        adjoints: dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.entries):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = adjoints.get(key)
                adjoints[key] = pg if prev is None else prev + pg


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` of every tensor upstream of the scalar ``loss``.

    Gradients accumulate into existing ``.grad`` buffers.  The graph is
    released afterwards (one tape per step, no higher-order gradients).
    """
    if loss.size != 1:
        raise RankError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RankError("loss does not depend on any tensor that requires grad")
    tape = Tape.record(loss)
    tape.replay(loss, np.ones_like(loss.data))
    for node in tape.entries:
        if node._parents:
            node._parents = ()
            node._backward = None
    return tape


def finite_diff_grad(f: Callable, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)

    def value(arr):
        with no_grad():
            out = f(Tensor(arr) if isinstance(x, Tensor) else arr)
        return float(out.data if isinstance(out, Tensor) else out)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = value(base)
        flat[i] = orig - h
        fm = value(base)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
