"""Minimal reverse-mode automatic differentiation over dense 2-D arrays.

A ``Tape`` records primitive operations in insertion order, which is a
valid topological order, so the backward pass is a single reverse sweep.
Gradients accumulate additively across fan-out. Every value is a float64
numpy array of shape (rows, cols); scalars are (1, 1).

Tapes are single-threaded and single-use: build a graph, call
``backward`` once, read ``Var.grad`` off the leaves, discard the tape.
"""

from __future__ import annotations

import numpy as np

from .specialmath import DomainError, digamma as _psi, trigamma as _psi1


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


def _as2d(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {arr.ndim}")
    return arr


class Tape:
    """Append-only record of operations; insertion order is topological."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value) -> "Var":
        return Var(self, _as2d(value))

    def const(self, value) -> "Var":
        # Constants are ordinary nodes; their accumulated grads are ignored.
        return Var(self, _as2d(value))


class Var:
    """Handle to one tape node: forward value plus the backward rule."""

    __slots__ = ("tape", "value", "parents", "vjp", "grad")

    def __init__(self, tape: Tape, value: np.ndarray, parents=(), vjp=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


def _same_shape(a: Var, b: Var, op: str):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a: Var, b: Var) -> Var:
    _same_shape(a, b, "add")
    return Var(a.tape, a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same_shape(a, b, "sub")
    return Var(a.tape, a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Var, b: Var) -> Var:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return Var(a.tape, av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a: Var, b: Var) -> Var:
    _same_shape(a, b, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise DomainError("div: zero denominator")
    return Var(a.tape, av / bv, (a, b),
               lambda g: (g / bv, -g * av / (bv * bv)))


def matmul(a: Var, b: Var) -> Var:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    return Var(a.tape, av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def scale(a: Var, c: float) -> Var:
    return Var(a.tape, a.value * c, (a,), lambda g: (g * c,))


def add_const(a: Var, c: float) -> Var:
    return Var(a.tape, a.value + c, (a,), lambda g: (g,))


def scalar_mul(s: Var, a: Var) -> Var:
    """Multiply by a (1, 1) scalar node, broadcasting over ``a``."""
    if s.value.shape != (1, 1):
        raise ShapeError(f"scalar_mul: scalar operand has shape {s.value.shape}")
    sv, av = s.value, a.value
    return Var(
        a.tape, sv * av, (s, a),
        lambda g: (np.sum(g * av).reshape(1, 1), sv * g),
    )


def scalar_add(s: Var, a: Var) -> Var:
    """Add a (1, 1) scalar node, broadcasting over ``a``."""
    if s.value.shape != (1, 1):
        raise ShapeError(f"scalar_add: scalar operand has shape {s.value.shape}")
    return Var(
        a.tape, s.value + a.value, (s, a),
        lambda g: (np.sum(g).reshape(1, 1), g),
    )


def total(a: Var) -> Var:
    shape = a.value.shape
    return Var(
        a.tape, np.sum(a.value).reshape(1, 1), (a,),
        lambda g: (np.full(shape, g[0, 0]),),
    )


def mean(a: Var) -> Var:
    shape = a.value.shape
    n = a.value.size
    return Var(
        a.tape, np.mean(a.value).reshape(1, 1), (a,),
        lambda g: (np.full(shape, g[0, 0] / n),),
    )


def sum_cols(a: Var) -> Var:
    """Row-wise sum: (n, m) -> (n, 1)."""
    m = a.value.shape[1]
    return Var(
        a.tape, np.sum(a.value, axis=1, keepdims=True), (a,),
        lambda g: (np.repeat(g, m, axis=1),),
    )


def sum_rows(a: Var) -> Var:
    """Column-wise sum: (n, m) -> (1, m)."""
    n = a.value.shape[0]
    return Var(
        a.tape, np.sum(a.value, axis=0, keepdims=True), (a,),
        lambda g: (np.repeat(g, n, axis=0),),
    )


def sin(a: Var) -> Var:
    av = a.value
    return Var(a.tape, np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a: Var) -> Var:
    av = a.value
    return Var(a.tape, np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return Var(a.tape, out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return Var(a.tape, out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.value
    if np.any(av <= 0.0):
        raise DomainError("log: non-positive argument")
    return Var(a.tape, np.log(av), (a,), lambda g: (g / av,))


def square(a: Var) -> Var:
    av = a.value
    return Var(a.tape, av * av, (a,), lambda g: (2.0 * av * g,))


def lgamma(a: Var) -> Var:
    av = a.value
    if np.any(av <= 0.0):
        raise DomainError("lgamma: non-positive argument")
    from .specialmath import log_gamma as _lg

    return Var(a.tape, np.asarray(_lg(av)), (a,), lambda g: (g * _psi(av),))


def digamma(a: Var) -> Var:
    av = a.value
    if np.any(av <= 0.0):
        raise DomainError("digamma: non-positive argument")
    return Var(a.tape, np.asarray(_psi(av)), (a,), lambda g: (g * _psi1(av),))


def concat_rows(parts: list[Var]) -> Var:
    if not parts:
        raise ShapeError("concat_rows: empty input")
    cols = parts[0].value.shape[1]
    for p in parts:
        if p.value.shape[1] != cols:
            raise ShapeError("concat_rows: column counts differ")
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return Var(parts[0].tape, np.concatenate([p.value for p in parts], axis=0),
               tuple(parts), vjp)


def concat_cols(parts: list[Var]) -> Var:
    if not parts:
        raise ShapeError("concat_cols: empty input")
    rows = parts[0].value.shape[0]
    for p in parts:
        if p.value.shape[0] != rows:
            raise ShapeError("concat_cols: row counts differ")
    sizes = [p.value.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return Var(parts[0].tape, np.concatenate([p.value for p in parts], axis=1),
               tuple(parts), vjp)


def slice_cols(a: Var, start: int, stop: int) -> Var:
    rows, cols = a.value.shape
    if not (0 <= start <= stop <= cols):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {cols} cols")

    def vjp(g):
        out = np.zeros((rows, cols))
        out[:, start:stop] = g
        return (out,)

    return Var(a.tape, a.value[:, start:stop].copy(), (a,), vjp)


def gather_rows(a: Var, idx: np.ndarray) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    rows = a.value.shape[0]
    if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= rows):
        raise ShapeError("gather_rows: index out of range")
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Var(a.tape, a.value[idx], (a,), vjp)


def broadcast_row(a: Var, n: int) -> Var:
    if a.value.shape[0] != 1:
        raise ShapeError(f"broadcast_row: expected (1, m), got {a.value.shape}")
    return Var(
        a.tape, np.repeat(a.value, n, axis=0), (a,),
        lambda g: (np.sum(g, axis=0, keepdims=True),),
    )


def backward(loss: Var) -> None:
    """Reverse sweep from a scalar loss; leaf gradients land in ``Var.grad``."""
    if loss.value.shape != (1, 1):
        raise ShapeError(f"backward: loss must be (1, 1), got {loss.value.shape}")
    loss.grad = np.ones((1, 1))
    for node in reversed(loss.tape.nodes):
        g = node.grad
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg


def grad_of(leaf: Var) -> np.ndarray:
    """Gradient of the last backward pass, zeros for unreached leaves."""
    if leaf.grad is None:
        return np.zeros_like(leaf.value)
    return leaf.grad
