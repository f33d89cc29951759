"""Tape-based reverse-mode differentiation over numpy arrays.

Operations record themselves on the innermost active :class:`Tape` when at
least one input has ``requires_grad``.  Outside a tape nothing is recorded,
which is how inference runs.

    >>> x = Tensor([2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     f = x * Tensor([5.0])
    >>> backward(f.sum(), tape)
    >>> x.grad
    array([5.])
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class EvaluationError(ArithmeticError):
    pass


class SeededRng:
    """PCG64 stream keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std=1.0, dtype=np.float64):
        return (self.gen.standard_normal(shape) * std).astype(dtype)

    def uniform(self, shape, low, high, dtype=np.float64):
        return self.gen.uniform(low, high, shape).astype(dtype)

    def keep_mask(self, shape, keep: float) -> np.ndarray:
        return (self.gen.random(shape) < keep).astype(np.float64)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def spawn(self, key: int) -> "SeededRng":
        seq = np.random.SeedSequence([self.seed, int(key)])
        return SeededRng(int(seq.generate_state(1, np.uint64)[0]))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

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
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self, tape: "Tape"):
        backward(self, tape)


class _Node:
    __slots__ = ("out", "inputs", "fn")

    def __init__(self, out, inputs, fn):
        self.out = out
        self.inputs = inputs
        self.fn = fn


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations, used as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


class no_record:
    """Suspend recording, e.g. for evaluation inside a training step."""

    def __enter__(self):
        self._saved = list(_TAPES)
        _TAPES.clear()

    def __exit__(self, *exc):
        _TAPES.extend(self._saved)
        return False


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _record(data: np.ndarray, inputs: tuple, fn: Callable) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.nodes.append(_Node(out, inputs, fn))
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def _broadcast_check(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = float(b)
        return _record(a.data * s, (a,), lambda g: (g * s,))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return mul(b, a)
    a, b = _pair(a, b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        if b == 0:
            raise DomainError("div: division by zero scalar")
        return mul(a, 1.0 / float(b))
    a, b = _pair(a, b)
    _broadcast_check("div", a, b)
    if np.any(b.data == 0):
        raise DomainError(f"div: zero in divisor of shape {b.shape}")
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape)))


# --- linear algebra and shape ----------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    a2 = ad[None, :] if ad.ndim == 1 else ad
    b2 = bd[:, None] if bd.ndim == 1 else bd
    if a2.shape[-1] != b2.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out2 = a2 @ b2
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    out = out2
    if ad.ndim == 1:
        out = out[..., 0, :]
    if bd.ndim == 1:
        out = out[..., 0]

    def fn(g):
        g2 = g.reshape(out2.shape)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(bd.shape)
        return ga, gb

    return _record(out, (a, b), fn)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        if a.ndim < 2:
            return a
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {src} to {tuple(shape)}") from None
    return _record(out, (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"stack: incompatible shapes {shapes}") from None
    n = len(tensors)
    return _record(out, tensors,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def _is_fancy(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    try:
        out = a.data[index]
    except IndexError as e:
        raise DimensionError(f"getitem: {e} for shape {a.shape}") from None
    fancy = _is_fancy(index)
    shape, dtype = a.shape, a.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _record(np.array(out), (a,), fn)


# --- nonlinearities ---------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive operand in tensor of shape {a.shape}")
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


# --- reductions -------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.asarray(out), (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), fn)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis; every row sums to one."""
    return softmax(a, axis=-1)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse
    p = np.exp(out)
    return _record(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# --- lookup and regularization ---------------------------------------------

def embedding(table: Tensor, ids, padding_idx: int | None = 0) -> Tensor:
    """Row lookup; the padding row never receives gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)][0]
        raise IndexError(f"embedding: token id {bad} outside table of {n} rows")
    shape, dtype = table.shape, table.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        if padding_idx is not None:
            full[padding_idx] = 0.0
        return (full,)

    return _record(table.data[ids], (table,), fn)


def dropout(a: Tensor, keep_mask: np.ndarray, keep: float) -> Tensor:
    """Inverted dropout: zero dropped units, scale survivors by 1/keep."""
    if keep >= 1.0:
        return a
    scale = np.asarray(keep_mask, dtype=a.dtype) / keep
    return _record(a.data * scale, (a,), lambda g: (g * scale,))


# --- backward pass ----------------------------------------------------------

def backward(output: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad tensor recorded on ``tape``.

    Gradients are summed over fan-out.  Each call starts from fresh gradient
    slots; recorded tensors outside the ancestry of ``output`` get zeros.
    """
    if output.data.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.requires_grad:
                leaves[id(t)] = t
        g = grads.pop(id(node.out), None)
        if g is None:
            node.out.grad = np.zeros_like(node.out.data)
            continue
        node.out.grad = g
        for t, gi in zip(node.inputs, node.fn(g)):
            if gi is None or not t.requires_grad:
                continue
            k = id(t)
            prev = grads.get(k)
            grads[k] = gi if prev is None else prev + gi
    produced = {id(n.out) for n in tape.nodes}
    for k, t in leaves.items():
        if k in produced:
            continue
        g = grads.get(k)
        t.grad = np.zeros_like(t.data) if g is None else g
    if id(output) not in produced and output.requires_grad:
        output.grad = np.ones_like(output.data)


def finite_difference_check(f: Callable, x, eps: float = 1e-6,
                            max_components: int | None = None,
                            rng: SeededRng | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``x`` is a Tensor or a sequence of Tensors; ``f(x)`` must return a scalar
    Tensor.  With ``max_components`` only a random subset of entries per
    tensor is probed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
    with Tape() as tape:
        out = f(x)
    backward(out, tape)
    analytic = [t.grad.copy() for t in xs]

    def evaluate() -> float:
        with no_record():
            v = float(np.asarray(f(x).data).reshape(-1)[0])
        if not math.isfinite(v):
            raise EvaluationError("non-finite function value during finite differences")
        return v

    worst = 0.0
    for t, ga in zip(xs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_components is not None and flat.size > max_components:
            rng = rng or SeededRng(0)
            idx = np.sort(rng.gen.choice(flat.size, max_components, replace=False))
        gflat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = evaluate()
            flat[i] = orig - eps
            fm = evaluate()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = float(gflat[i])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst = max(worst, err)
    return worst
