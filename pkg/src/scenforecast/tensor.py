"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records a backward rule written in terms of other ops, so gradients
can themselves be differentiated (``grad(..., create_graph=True)``). That is
what the discriminator's input-gradient penalty needs.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor", "Tape", "AdamState", "NumericError",
    "tensor", "const", "no_grad", "enable_grad", "is_grad_enabled",
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt",
    "matmul", "sum", "mean", "reshape", "transpose", "swapaxes",
    "broadcast_to", "sum_to", "getitem", "scatter", "concat", "stack",
    "amax", "softmax", "lrelu", "relu", "clip", "unfold1d", "conv1d",
    "grad", "backward", "adam_step", "global_norm",
]


class NumericError(FloatingPointError):
    """Raised when an op produces NaN/Inf or an update sees a non-finite gradient."""


_state = threading.local()
_seq = itertools.count()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def _grad_mode(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq", "_op")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple = ()
        self._backward = None
        self._seq = -1
        self._op = "leaf"

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
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, key): return getitem(self, key)

    def sum(self, axis=None, keepdims=False): return sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _raw(fn, *args):
    # invalid/overflow results are reported by _make as NumericError instead of warnings
    with np.errstate(all="ignore"):
        return fn(*args)


def _make(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{op}' (shape {np.shape(data)})")
    out = Tensor(data)
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._seq = next(_seq)
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (sum_to(g * b, a.shape) if a.requires_grad else None,
                            sum_to(g * a, b.shape) if b.requires_grad else None), "mul")


def div(a, b) -> Tensor:
    a, b = const(a), const(b)

    def bw(g):
        ga = sum_to(g / b, a.shape) if a.requires_grad else None
        gb = sum_to(neg(g * a) / (b * b), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(_raw(np.divide, a.data, b.data), (a, b), bw, "div")


def neg(a) -> Tensor:
    a = const(a)
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def power(a, p: float) -> Tensor:
    a = const(a)
    p = float(p)
    return _make(_raw(np.power, a.data, p), (a,), lambda g: (g * (p * power(a, p - 1.0)),), "power")


def exp(a) -> Tensor:
    a = const(a)
    out = _raw(np.exp, a.data)

    def bw(g):
        y = exp(a) if is_grad_enabled() else Tensor(out)
        return (g * y,)

    return _make(out, (a,), bw, "exp")


def log(a) -> Tensor:
    a = const(a)
    return _make(_raw(np.log, a.data), (a,), lambda g: (g / a,), "log")


def sqrt(a) -> Tensor:
    """Square root with a zero subgradient at 0 (keeps std/norm of constants at exactly 0)."""
    a = const(a)
    out = _raw(np.sqrt, a.data)

    def bw(g):
        pos = out > 0
        if is_grad_enabled():
            m = Tensor(pos.astype(np.float64))
            y = sqrt(a)
            return (g * 0.5 * m / (y + (1.0 - m)),)
        scale = np.where(pos, 0.5 / np.where(pos, out, 1.0), 0.0)
        return (g * Tensor(scale),)

    return _make(out, (a,), bw, "sqrt")


def lrelu(x, slope: float = 0.2) -> Tensor:
    x = const(x)
    m = np.where(x.data >= 0, 1.0, slope)
    return _make(x.data * m, (x,), lambda g: (g * Tensor(m),), "lrelu")


def relu(x) -> Tensor:
    return lrelu(x, 0.0)


def clip(x, lo: float, hi: float) -> Tensor:
    x = const(x)
    m = ((x.data >= lo) & (x.data <= hi)).astype(np.float64)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * Tensor(m),), "clip")


# ---------------------------------------------------------------- shapes

def sum_to(a, shape) -> Tensor:
    """Reduce a broadcast result back to ``shape`` (adjoint of broadcast_to)."""
    a = const(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, s in enumerate(shape) if s == 1 and a.shape[i + lead] != 1)
    out = a.data.sum(axis=axes, keepdims=True) if axes else a.data
    out = out.reshape(shape)
    return _make(out, (a,), lambda g: (broadcast_to(g, a.shape),), "sum_to")


def broadcast_to(a, shape) -> Tensor:
    a = const(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (sum_to(g, a.shape),), "broadcast_to")


def reshape(a, shape) -> Tensor:
    a = const(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = const(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = const(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = const(a)
    axes = _norm_axis(axis, a.ndim)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return _make(np.asarray(out), (a,),
                 lambda g: (broadcast_to(reshape(g, kept), a.shape),), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = const(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum(a, axes, keepdims) * (1.0 / n)


def getitem(a, key) -> Tensor:
    a = const(a)
    return _make(np.array(a.data[key]), (a,), lambda g: (scatter(g, key, a.shape),), "getitem")


def scatter(a, key, shape) -> Tensor:
    """Zeros of ``shape`` with ``a`` added at ``key`` (adjoint of getitem)."""
    a = const(a)
    out = np.zeros(shape)
    np.add.at(out, key, a.data)
    return _make(out, (a,), lambda g: (getitem(g, key),), "scatter")


def concat(ts, axis: int = 0) -> Tensor:
    ts = [const(t) for t in ts]
    axis = axis % ts[0].ndim
    sizes = [t.shape[axis] for t in ts]
    edges = np.cumsum([0] + sizes)

    def bw(g):
        outs = []
        for k in range(len(ts)):
            key = (slice(None),) * axis + (slice(int(edges[k]), int(edges[k + 1])),)
            outs.append(getitem(g, key))
        return tuple(outs)

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bw, "concat")


def stack(ts, axis: int = 0) -> Tensor:
    ts = [const(t) for t in ts]
    shape = list(ts[0].shape)
    ax = axis % (len(shape) + 1)
    shape.insert(ax, 1)
    return concat([reshape(t, tuple(shape)) for t in ts], axis=ax)


def amax(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    a = const(a)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    onehot = np.zeros_like(a.data)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)
    out = np.max(a.data, axis=axis, keepdims=keepdims)
    kept = tuple(1 if i == axis else s for i, s in enumerate(a.shape))

    def bw(g):
        return (broadcast_to(reshape(g, kept), a.shape) * Tensor(onehot),)

    return _make(out, (a,), bw, "amax")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = const(a), const(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ≥2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = sum_to(matmul(g, swapaxes(b, -1, -2)), a.shape) if a.requires_grad else None
        gb = sum_to(matmul(swapaxes(a, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(_raw(np.matmul, a.data, b.data), (a, b), bw, "matmul")


def softmax(x, axis: int = -1) -> Tensor:
    x = const(x)
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        y = softmax(x, axis) if is_grad_enabled() else Tensor(out)
        gy = g * y
        return (gy - y * sum(gy, axis, keepdims=True),)

    return _make(out, (x,), bw, "softmax")


# ---------------------------------------------------------------- convolution

def _fold1d(a, length: int, k: int, stride: int) -> Tensor:
    """Adjoint of unfold1d: (..., C, L', k) -> (..., C, L) by overlap-add."""
    a = const(a)
    lout = a.shape[-2]
    out = np.zeros(a.shape[:-2] + (length,))
    for j in range(k):
        out[..., j:j + stride * (lout - 1) + 1:stride] += a.data[..., j]
    return _make(out, (a,), lambda g: (unfold1d(g, k, stride),), "fold1d")


def unfold1d(x, k: int, stride: int = 1) -> Tensor:
    """Sliding windows over the last axis: (..., C, L) -> (..., C, L', k)."""
    x = const(x)
    length = x.shape[-1]
    if k > length:
        raise ValueError(f"kernel size {k} exceeds padded length {length}")
    lout = (length - k) // stride + 1
    idx = np.arange(lout)[:, None] * stride + np.arange(k)[None, :]
    return _make(x.data[..., idx], (x,), lambda g: (_fold1d(g, length, k, stride),), "unfold1d")


def conv1d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (..., C_in, L) with (C_out, C_in, k) kernels -> (..., C_out, L')."""
    x, kernels = const(x), const(kernels)
    c_out, c_in, k = kernels.shape
    if x.shape[-2] != c_in:
        raise ValueError(f"conv1d expects {c_in} input channels, got {x.shape[-2]}")
    length = x.shape[-1]
    if k > length + 2 * padding:
        raise ValueError(f"kernel size {k} exceeds padded length {length + 2 * padding}")
    if padding:
        key = (Ellipsis, slice(padding, padding + length))
        x = scatter(x, key, x.shape[:-1] + (length + 2 * padding,))
    cols = unfold1d(x, k, stride)                       # (..., C_in, L', k)
    cols = swapaxes(cols, -3, -2)                       # (..., L', C_in, k)
    cols = reshape(cols, cols.shape[:-2] + (c_in * k,))
    w = transpose(reshape(kernels, (c_out, c_in * k)))  # (C_in*k, C_out)
    out = matmul(cols, w)                               # (..., L', C_out)
    if bias is not None:
        out = out + bias
    return swapaxes(out, -1, -2)


# ---------------------------------------------------------------- differentiation

@dataclass
class Tape:
    """Ops reachable from an output, in execution order."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen, stack_, nodes = set(), [out], []
        while stack_:
            t = stack_.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            if t._backward is not None:
                nodes.append(t)
            stack_.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)


def grad(output: Tensor, inputs, grad_output=None, create_graph: bool = False,
         tape: Tape | None = None) -> list:
    """Gradients of ``output`` w.r.t. each of ``inputs`` (zeros when disconnected).

    With ``create_graph=True`` the returned gradients are themselves on a tape.
    """
    if grad_output is None:
        if output.size != 1:
            raise ValueError(f"gradient of a non-scalar output (shape {output.shape}) needs grad_output")
        grad_output = np.ones_like(output.data)
    tape = tape or Tape.from_output(output)
    wanted = {id(x) for x in inputs}
    grads: dict[int, Tensor] = {id(output): const(grad_output)}
    with _grad_mode(create_graph):
        for node in reversed(tape.nodes):
            g = grads.get(id(node))
            if g is None:
                continue
            if id(node) not in wanted:
                del grads[id(node)]
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
    return [grads.get(id(x), Tensor(np.zeros(x.shape))) for x in inputs]


def backward(loss: Tensor, tape: Tape | None = None, params=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` for every reachable leaf.

    Leaves listed in ``params`` but not reached get zero gradients.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or Tape.from_output(loss)
    leaves, seen = [], set()
    for node in tape.nodes + [loss]:
        for p in node._parents:
            if p.requires_grad and p._backward is None and id(p) not in seen:
                seen.add(id(p))
                leaves.append(p)
    if loss._backward is None and loss.requires_grad:
        leaves.append(loss)
    for leaf in params or ():
        if id(leaf) not in seen:
            seen.add(id(leaf))
            leaves.append(leaf)
    gs = grad(loss, leaves, tape=tape)
    for leaf, g in zip(leaves, gs):
        leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data


# ---------------------------------------------------------------- optimisation

@dataclass
class AdamState:
    lr: float = 0.0008
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(np.sum([np.sum(g * g) for g in grads.values()])))


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """Bias-corrected Adam update; replaces each ``params[name].data`` and returns params."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericError(f"non-finite gradient for '{name}' ({bad} entries) at Adam step {state.step + 1}")
        if np.shape(g) != params[name].shape:
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {params[name].shape} for '{name}'")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
