"""Dense float64 arrays with tape-based reverse-mode differentiation.

A :class:`Tape` records every primitive applied to a tracked tensor while it
is active.  Parameters are always tracked; other inputs can be tracked with
:meth:`Tape.watch`.  :func:`backward` walks the tape in reverse and returns a
``{parameter name: gradient}`` mapping.

    with Tape() as tape:
        loss = sum_all(mul(w, w))
    grads = backward(loss, [w])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class NumcoreError(Exception):
    pass


class ShapeError(NumcoreError):
    def __init__(self, kind: str, *shapes):
        self.kind = kind
        self.shapes = shapes
        rendered = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{kind}: incompatible operand shapes {rendered}")


class NonFiniteError(NumcoreError):
    pass


class Tensor:
    """Immutable float64 array, optionally tied to a tape node."""

    __slots__ = ("data", "_tape", "_tracked")

    def __init__(self, data, *, _owned: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not _owned:
            arr = arr.copy()
        arr.flags.writeable = False
        self.data = arr
        self._tape: Tape | None = None
        self._tracked = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={self.data!r})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor; gradients are reported under its name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data)
        self.name = name


@dataclass
class TapeNode:
    kind: str
    inputs: tuple
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Records primitives applied to tracked tensors, in execution order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.watched: set[int] = set()
        self.consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def watch(self, t: Tensor) -> Tensor:
        """Track a non-parameter tensor so gradients can flow to it."""
        self.watched.add(id(t))
        t._tracked = True
        return t

    def is_tracked(self, t: Tensor) -> bool:
        if isinstance(t, Parameter):
            return True
        return t._tape is self or id(t) in self.watched

    def reset(self):
        self.nodes.clear()
        self.watched.clear()
        self.consumed = False


class no_tape:
    """Suspend recording (inference mode)."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(kind: str, value: np.ndarray, inputs: tuple, vjp) -> Tensor:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{kind}: produced non-finite values")
    out = Tensor(value, _owned=True)
    tape = active_tape()
    if tape is not None and any(tape.is_tracked(t) for t in inputs):
        out._tape = tape
        tape.consumed = False
        tape.nodes.append(TapeNode(kind, inputs, out, vjp))
    return out


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    return _result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def silu(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    s = _sigmoid(a.data)
    x = a.data
    return _result("silu", x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):  # overflow is reported by _result
        y = np.exp(a.data)
    return _result("exp", y, (a,), lambda g: (g * y,))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _result("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_square(a) -> Tensor:
    """Mean of the squared entries."""
    a = as_tensor(a)
    if a.size == 0:
        raise ShapeError("mean_square", a.shape)
    x = a.data
    n = x.size
    return _result("mean_square", np.asarray(np.mean(x * x)), (a,), lambda g: (x * (2.0 * float(g) / n),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _result("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_row(a, row) -> Tensor:
    """Add a length-F vector to every row of a (B, F) matrix."""
    a, row = as_tensor(a), as_tensor(row)
    if a.data.ndim != 2 or row.data.ndim != 1 or row.shape[0] != a.shape[1]:
        raise ShapeError("add_row", a.shape, row.shape)
    return _result("add_row", a.data + row.data, (a, row), lambda g: (g, g.sum(axis=0)))


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError("concat_cols", a.shape, b.shape)
    k = a.shape[1]
    return _result(
        "concat_cols", np.concatenate([a.data, b.data], axis=1), (a, b), lambda g: (g[:, :k], g[:, k:])
    )


def concat_rows(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("concat_rows", a.shape, b.shape)
    k = a.shape[0]
    return _result(
        "concat_rows", np.concatenate([a.data, b.data], axis=0), (a, b), lambda g: (g[:k], g[k:])
    )


def take_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2 or not 0 <= start <= stop <= a.shape[0]:
        raise ShapeError("take_rows", a.shape, (start, stop))
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _result("take_rows", a.data[start:stop].copy(), (a,), vjp)


def pairwise_sqdist(a, b) -> Tensor:
    """(m, n) matrix of squared Euclidean distances between rows of a and b."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("pairwise_sqdist", a.shape, b.shape)
    diff = a.data[:, None, :] - b.data[None, :, :]
    value = np.einsum("ijk,ijk->ij", diff, diff)

    def vjp(g):
        gd = 2.0 * g[:, :, None] * diff
        return gd.sum(axis=1), -gd.sum(axis=0)

    return _result("pairwise_sqdist", value, (a, b), vjp)


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "silu": silu,
    "exp": exp,
    "sum": sum_all,
    "mean_square": mean_square,
    "matmul": matmul,
    "add_row": add_row,
    "concat_cols": concat_cols,
    "concat_rows": concat_rows,
    "take_rows": take_rows,
    "pairwise_sqdist": pairwise_sqdist,
}


def primitive(kind: str, *operands, **kwargs) -> Tensor:
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise NumcoreError(f"unknown primitive {kind!r}") from None
    return fn(*operands, **kwargs)


# ------------------------------------------------------------------ backward


def backward(loss: Tensor, params: Iterable[Tensor], *, reset: bool = True) -> dict[str, np.ndarray]:
    """Reverse-accumulate d(loss)/d(param) for every param.

    Parameters are keyed by name; watched plain tensors are keyed by
    ``str(id(tensor))``.  The tape is reset afterwards unless ``reset=False``.
    """
    if loss.data.ndim != 0:
        raise NumcoreError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or tape.consumed:
        raise NumcoreError("backward: loss was not produced on an active tape")
    params = list(params)

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not tape.is_tracked(inp):
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.array(gi, dtype=np.float64)

    out: dict[str, np.ndarray] = {}
    for p in params:
        g = grads.get(id(p))
        if g is None:
            label = getattr(p, "name", "<tensor>")
            raise NumcoreError(f"backward: parameter {label} is not on the tape")
        if g.shape != p.shape:
            g = np.broadcast_to(g, p.shape).copy()
        out[getattr(p, "name", None) or str(id(p))] = g
    if reset:
        tape.reset()
        tape.consumed = True
    return out


def value_and_grad(fn: Callable[..., Tensor], params: Sequence[Tensor], *args, **kwargs):
    """Evaluate ``fn`` on a fresh tape; return (loss value, gradient map)."""
    with Tape():
        loss = fn(*args, **kwargs)
    grads = backward(loss, params)
    return loss.item(), grads
