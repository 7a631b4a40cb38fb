"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every tensor is a float64 matrix.  Operations executed while a :class:`Tape`
is active are appended to it in call order; :meth:`Tape.backward` walks the
record in reverse and accumulates gradients into the leaves.

    >>> w = Tensor([[1.0, -2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = reduce_sum(square(w))
    >>> tape.backward(loss)[w]
    array([[ 2., -4.]])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "NonFiniteError",
    "matmul", "add", "sub", "mul", "neg", "scale", "exp", "log", "tanh", "relu",
    "square", "xlogx", "clip", "row_softmax", "reduce_sum", "mean", "mse",
    "sample_gaussian_reparam", "sample_gumbel_softmax",
    "AdamState", "adam_step", "save_params", "load_params",
]


class ShapeError(ValueError):
    """Incompatible operand shapes for a primitive."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: produced non-finite values")


class Tensor:
    __slots__ = ("value", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        v = np.array(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ShapeError("Tensor", v.shape, detail="only 2-D values are supported")
        self.value = v
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError("item", self.shape, detail="not a scalar")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731


# -- tape ---------------------------------------------------------------------

_ACTIVE: list["Tape"] = []


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive applications."""

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def backward(self, loss: Tensor,
                 wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. grad-requiring leaves.

        With ``wrt`` given, exactly those tensors are returned; any the loss
        does not depend on get zero gradients.
        """
        if loss.value.shape != (1, 1):
            raise ShapeError("backward", loss.shape, detail="loss must be a 1x1 scalar")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        leaves: dict[int, Tensor] = {}
        produced = {id(n.out) for n in self.nodes}
        for node in reversed(self.nodes):
            for t in node.inputs:
                if t.requires_grad and id(t) not in produced:
                    leaves[id(t)] = t
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if id(t) in grads:
                    grads[id(t)] = grads[id(t)] + gi
                else:
                    grads[id(t)] = gi
        if loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
        if wrt is not None:
            leaves = {id(t): t for t in wrt}
        return {t: grads.get(k, np.zeros_like(t.value)) for k, t in leaves.items()}


def _record(out_value: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(out_value)):
        raise NonFiniteError(op)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.value = out_value
    out.requires_grad = needs
    out.name = None
    if needs and _ACTIVE:
        _ACTIVE[-1].nodes.append(_Node(out, inputs, backward))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(op, a.shape, b.shape)


# -- primitives ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return _record(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.value + b.value, "add", (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(a.value - b.value, "sub", (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _record(av * bv, "mul", (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return _record(a.value * c, "scale", (a,), lambda g: (g * c,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        v = np.exp(a.value)
    return _record(v, "exp", (a,), lambda g: (g * v,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    av = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.log(av)
    return _record(v, "log", (a,), lambda g: (g / av,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    v = np.tanh(a.value)
    return _record(v, "tanh", (a,), lambda g: (g * (1.0 - v * v),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), "relu", (a,), lambda g: (g * mask,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    av = a.value
    return _record(av * av, "square", (a,), lambda g: (2.0 * g * av,))


def xlogx(a) -> Tensor:
    """Elementwise ``x log x`` with the continuous extension ``0 log 0 = 0``."""
    a = _as_tensor(a)
    av = a.value
    if np.any(av < 0):
        raise NonFiniteError("xlogx")
    safe = np.maximum(av, np.finfo(np.float64).tiny)
    v = np.where(av > 0, av * np.log(safe), 0.0)
    return _record(v, "xlogx", (a,), lambda g: (g * (np.log(safe) + 1.0),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes only where the input is inside."""
    a = _as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _record(np.clip(a.value, lo, hi), "clip", (a,), lambda g: (g * inside,))


def row_softmax(a) -> Tensor:
    a = _as_tensor(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _record(s, "row_softmax", (a,), back)


def reduce_sum(a, axis: int | None = None) -> Tensor:
    """Sum all entries (1x1 result) or along ``axis`` keeping 2-D shape."""
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        v = np.array([[a.value.sum()]])
    elif axis in (0, 1):
        v = a.value.sum(axis=axis, keepdims=True)
    else:
        raise ShapeError("reduce_sum", shape, detail=f"bad axis {axis}")
    return _record(v, "reduce_sum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / n)


def mse(a, b) -> Tensor:
    """Mean squared error over all entries."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mse", a.shape, b.shape)
    return mean(square(sub(a, b)))


# -- stochastic nodes ---------------------------------------------------------

def sample_gaussian_reparam(mu, log_var, rng: np.random.Generator | None = None,
                            eps: np.ndarray | None = None) -> Tensor:
    """``mu + exp(log_var / 2) * eps`` with ``eps ~ N(0, I)`` held constant."""
    mu, log_var = _as_tensor(mu), _as_tensor(log_var)
    if mu.shape != log_var.shape:
        raise ShapeError("sample_gaussian_reparam", mu.shape, log_var.shape)
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    return add(mu, mul(exp(scale(log_var, 0.5)), Tensor(eps)))


def sample_gumbel_softmax(logits, tau: float, rng: np.random.Generator | None = None,
                          noise: np.ndarray | None = None) -> Tensor:
    """Relaxed one-hot sample ``softmax((logits + g) / tau)``, ``g ~ Gumbel(0, 1)``."""
    if not tau > 0:
        raise ValueError(f"gumbel temperature must be positive, got {tau}")
    logits = _as_tensor(logits)
    if noise is None:
        noise = rng.gumbel(size=logits.shape)
    return row_softmax(scale(add(logits, Tensor(noise)), 1.0 / tau))


# -- optimiser ----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError("adam_step", p.shape, g.shape, detail=name)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = "MOBCLUST-PARAMS"
CHECKPOINT_VERSION = 1


def save_params(path: str | Path, params: dict[str, np.ndarray]) -> None:
    """Write a versioned text checkpoint.

    Layout: ``MOBCLUST-PARAMS 1 <count>`` then, per parameter, a header line
    ``<name> <rows> <cols>`` followed by one line of ``repr`` floats (exact
    round trip) in row-major order.
    """
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {len(params)}"]
    for name, arr in params.items():
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError("save_params", a.shape, detail=name)
        lines.append(f"{name} {a.shape[0]} {a.shape[1]}")
        lines.append(" ".join(repr(float(x)) for x in a.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split()
    if len(head) != 3 or head[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}:1: not a parameter checkpoint")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}:1: unsupported checkpoint version {head[1]}")
    out: dict[str, np.ndarray] = {}
    for k in range(int(head[2])):
        lineno = 2 + 2 * k
        try:
            name, rows, cols = lines[lineno - 1].split()
            vals = np.array([float(x) for x in lines[lineno].split()], dtype=np.float64)
            out[name] = vals.reshape(int(rows), int(cols))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed parameter record ({exc})") from None
    return out

