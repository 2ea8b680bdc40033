"""Minimal reverse-mode autodiff over float64 numpy arrays.

Operations executed while a :class:`Tape` is active, and whose inputs require
gradients, are appended to that tape in execution order. Execution order is a
valid topological order, so ``Tape.backward`` simply walks the record in
reverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "DomainError",
    "DegenerateInputError",
    "Tensor",
    "Tape",
    "matmul",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "scale",
    "reshape",
    "sum_all",
    "mean_all",
    "l2_normalize",
    "l2_normalize_np",
    "l2_normalize_vjp",
    "fused",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of executed primitive ops.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> Tape:
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(self, loss)


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{op} produced non-finite values")
    out = Tensor(value)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].nodes.append(_Node(op, tuple(inputs), out, vjp))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def vjp(g):
        return g @ B.T, A.T @ g

    return _emit("matmul", A @ B, (a, b), vjp)


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. ``b`` may also be a bias vector added to every row of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    row_bias = a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]
    if not row_bias:
        _check_same("add", a, b)

    def vjp(g):
        return g, (g.sum(axis=0) if row_bias else g)

    return _emit("add", a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("mul", a, b)
    A, B = a.data, b.data
    return _emit("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_np(a.data)
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive input; clamp before calling")
    X = a.data
    return _emit("log", np.log(X), (a,), lambda g: (g / X,))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return _emit("exp", e, (a,), lambda g: (g * e,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shp = a.shape
    return _emit("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(shp, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shp, n = a.shape, a.data.size
    return _emit("mean", np.array(a.data.mean()), (a,), lambda g: (np.full(shp, float(g) / n),))


def l2_normalize_np(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize the last axis to unit length. Returns (unit vectors, norms)."""
    norms = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if np.any(norms == 0):
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / norms, norms


def l2_normalize_vjp(unit: np.ndarray, norms: np.ndarray, g: np.ndarray) -> np.ndarray:
    # (I - u u^T) g / |v|, row by row
    return (g - unit * np.sum(unit * g, axis=-1, keepdims=True)) / norms


def l2_normalize(v: Tensor) -> Tensor:
    """Unit-normalize a vector, or each row of a matrix."""
    v = _as_tensor(v)
    unit, norms = l2_normalize_np(v.data)
    return _emit("l2_normalize", unit, (v,), lambda g: (l2_normalize_vjp(unit, norms, g),))


def fused(op: str, value, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Record an op whose value and vector-Jacobian product are computed by the caller."""
    return _emit(op, np.asarray(value, dtype=np.float64), tuple(inputs), vjp)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) through ``tape``; fills ``.grad`` on every leaf.

    Leaves are tensors that require grad but were not produced on this tape.
    Returns a mapping leaf -> gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(n.output) for n in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else np.array(gi, dtype=np.float64)
            if key not in produced:
                leaves[key] = inp
    out = {}
    for key, leaf in leaves.items():
        leaf.grad = grads[key].reshape(leaf.shape)
        out[leaf] = leaf.grad
    return out


def grad_check(
    f: Callable[[list[Tensor]], Tensor],
    params: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|).

    ``f`` maps a list of tensors (one per entry of ``params``) to a scalar tensor
    and must be deterministic.
    """
    leaves = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in params]
    with Tape() as tape:
        loss = f(leaves)
    grads = tape.backward(loss)
    worst = 0.0
    for k, leaf in enumerate(leaves):
        analytic = grads.get(leaf, np.zeros(leaf.shape))
        base = [np.array(p, dtype=np.float64) for p in params]
        flat = base[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f([Tensor(b) for b in base]).item()
            flat[i] = orig - h
            fm = f([Tensor(b) for b in base]).item()
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            err = abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst
