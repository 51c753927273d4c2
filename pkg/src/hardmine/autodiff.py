"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Tensors record the operation that produced them; calling ``backward`` on a
scalar walks the recorded graph in reverse topological order. Every operation
checks its output for NaN/Inf and raises instead of propagating.

The supported op set is deliberately small: matmul, add/sub, elementwise
multiply/divide, relu, sigmoid, tanh, exp, log, softmax/log_softmax,
sum/mean reductions, reshape, concat, plus the two task losses built on them.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.size(values) - np.count_nonzero(np.isfinite(values)))
        raise NonFiniteError(f"{op}: produced {bad} non-finite value(s)")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the autodiff graph.

    ``values`` is always a float64 ndarray. Leaves created by the user have no
    parents; op outputs keep references to their inputs and a closure mapping
    the upstream gradient to one gradient (or ``None``) per input.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, values: np.ndarray, parents: tuple["Tensor", ...], backward, op: str) -> "Tensor":
        _check_finite(values, op)
        out = cls.__new__(cls)
        out.values = values
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.size == 1 else float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(as_tensor(other), self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every requires_grad leaf."""
        grads = _backprop(self)
        for node, g in grads.items():
            if not node._parents and node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(loss: Tensor) -> dict[Tensor, np.ndarray]:
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    out: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        out[node] = g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, f"backward({node.op})")
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return out


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. ``wrt`` without touching any ``.grad``.

    Inputs that do not influence the loss get a zero array.
    """
    grads = _backprop(loss)
    return [grads[t].copy() if t in grads else np.zeros_like(t.values) for t in wrt]


# -- elementwise binary ops -------------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    return Tensor._from_op(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    return Tensor._from_op(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.values, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.values, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.values * b.values, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.values / b.values

    def backward(g):
        ga = _unbroadcast(g / b.values, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.values / (b.values * b.values), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "div")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.values.T if a.requires_grad else None
        gb = a.values.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.values @ b.values, (a, b), backward, "matmul")


# -- elementwise unary ops --------------------------------------------------


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = x.values > 0
    return Tensor._from_op(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,), "relu")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.values)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.values)
    return Tensor._from_op(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(x.values)
    return Tensor._from_op(e, (x,), lambda g: (g * e,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.values)
    return Tensor._from_op(out, (x,), lambda g: (g / x.values,), "log")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")


# -- reductions and shape ops -----------------------------------------------


def tsum(x: Tensor, axis=None) -> Tensor:
    out = np.asarray(x.values.sum(axis=axis))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis), 1.0 / count)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([p.values for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, parts, backward, "concat")


# -- losses -----------------------------------------------------------------


def cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy of (N, C) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"cross_entropy: labels outside [0, {n_classes})")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    per_sample = -tsum(log_softmax(logits) * onehot, axis=1)
    return _reduce(per_sample, reduction)


def mse(pred: Tensor, target, reduction: str = "mean") -> Tensor:
    """Squared error averaged over features; then reduced over the batch."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    sq = diff * diff
    if sq.ndim == 1:
        return _reduce(sq, reduction)
    per_sample = mean(reshape(sq, (sq.shape[0], -1)), axis=1)
    return _reduce(per_sample, reduction)


def _reduce(per_sample: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return mean(per_sample)
    if reduction == "sum":
        return tsum(per_sample)
    if reduction == "none":
        return per_sample
    raise ValueError(f"unknown reduction {reduction!r}")


# -- graph-level helpers ----------------------------------------------------


class Graph:
    """A function of named leaves, evaluated then differentiated on demand.

    >>> g = Graph(lambda x: (x * x).sum())
    >>> float(g.forward(x=[3.0, -1.0]).item())
    10.0
    >>> g.backward()["x"].tolist()
    [6.0, -2.0]
    """

    def __init__(self, fn: Callable[..., Tensor]):
        self.fn = fn
        self.leaves: dict[str, Tensor] = {}
        self.output: Tensor | None = None

    def forward(self, **bindings) -> Tensor:
        self.leaves = {
            name: v if isinstance(v, Tensor) else Tensor(v, requires_grad=True)
            for name, v in bindings.items()
        }
        self.output = self.fn(**self.leaves)
        return self.output

    def backward(self) -> dict[str, np.ndarray]:
        if self.output is None:
            raise RuntimeError("backward called before forward")
        names = [n for n, t in self.leaves.items() if t.requires_grad]
        grads = grad(self.output, [self.leaves[n] for n in names])
        return dict(zip(names, grads))


def grad_check(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-6) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``fn`` maps a Tensor to a scalar Tensor. The error per coordinate is
    ``|a - c| / max(|a|, |c|, 1e-12)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(point, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    (analytic,) = grad(fn(leaf), [leaf])
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = xp.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = fn(Tensor(xp.reshape(x0.shape))).item()
        fm = fn(Tensor(xm.reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError("grad_check: non-finite function value near point")
        flat[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
