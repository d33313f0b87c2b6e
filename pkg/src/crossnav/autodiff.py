"""Array-valued reverse-mode automatic differentiation.

Every value is a float64 numpy array wrapped in a :class:`Var`. Operators
build the computation graph eagerly; :func:`backward` walks it once in
reverse topological order and accumulates gradients into the leaves.

All internal arithmetic is 64-bit; checkpoints downcast to 32-bit on disk
(see checkpoint.py).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericError(RuntimeError):
    """Raised when a loss or intermediate value turns non-finite."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A node in the computation graph: a value plus a local backward rule."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    # make `ndarray <op> Var` dispatch to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None):
        self.value = _as_array(value)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = wrap(other)
        out = Var(self.value + other.value, (self, other))

        def bwd(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Var(-self.value, (self,))
        out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        other = wrap(other)
        out = Var(self.value - other.value, (self, other))

        def bwd(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape))

        out._backward = bwd
        return out

    def __rsub__(self, other):
        return wrap(other) - self

    def __mul__(self, other):
        other = wrap(other)
        out = Var(self.value * other.value, (self, other))

        def bwd(g):
            return (
                _unbroadcast(g * other.value, self.shape),
                _unbroadcast(g * self.value, other.shape),
            )

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = wrap(other)
        out = Var(self.value / other.value, (self, other))

        def bwd(g):
            return (
                _unbroadcast(g / other.value, self.shape),
                _unbroadcast(-g * self.value / other.value**2, other.shape),
            )

        out._backward = bwd
        return out

    def __rtruediv__(self, other):
        return wrap(other) / self

    def __matmul__(self, other):
        other = wrap(other)
        out = Var(self.value @ other.value, (self, other))

        def bwd(g):
            return (g @ other.value.T, self.value.T @ g)

        out._backward = bwd
        return out

    def __rmatmul__(self, other):
        return wrap(other) @ self

    def __getitem__(self, idx):
        out = Var(self.value[idx], (self,))

        basic = isinstance(idx, (slice, int, type(Ellipsis))) or (
            isinstance(idx, tuple)
            and all(isinstance(i, (slice, int, type(Ellipsis))) for i in idx)
        )

        def bwd(g):
            full = np.zeros_like(self.value)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)  # duplicate indices must accumulate
            return (full,)

        out._backward = bwd
        return out


def wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


# -- elementwise functions --------------------------------------------------


def tanh(x: Var) -> Var:
    x = wrap(x)
    t = np.tanh(x.value)
    out = Var(t, (x,))
    out._backward = lambda g: (g * (1.0 - t * t),)
    return out


def sigmoid(x: Var) -> Var:
    x = wrap(x)
    s = 1.0 / (1.0 + np.exp(-x.value))
    out = Var(s, (x,))
    out._backward = lambda g: (g * s * (1.0 - s),)
    return out


def exp(x: Var) -> Var:
    x = wrap(x)
    e = np.exp(x.value)
    out = Var(e, (x,))
    out._backward = lambda g: (g * e,)
    return out


def log(x: Var) -> Var:
    x = wrap(x)
    out = Var(np.log(x.value), (x,))
    out._backward = lambda g: (g / x.value,)
    return out


def square(x: Var) -> Var:
    x = wrap(x)
    out = Var(x.value**2, (x,))
    out._backward = lambda g: (g * 2.0 * x.value,)
    return out


def minimum(a: Var, b: Var) -> Var:
    a, b = wrap(a), wrap(b)
    mask = a.value <= b.value
    out = Var(np.where(mask, a.value, b.value), (a, b))

    def bwd(g):
        return (
            _unbroadcast(g * mask, a.shape),
            _unbroadcast(g * ~mask, b.shape),
        )

    out._backward = bwd
    return out


def clip(x: Var, lo: float, hi: float) -> Var:
    """Clamp with zero gradient outside [lo, hi] (PPO-style)."""
    x = wrap(x)
    inside = (x.value >= lo) & (x.value <= hi)
    out = Var(np.clip(x.value, lo, hi), (x,))
    out._backward = lambda g: (g * inside,)
    return out


def vsum(x: Var, axis=None) -> Var:
    x = wrap(x)
    out = Var(x.value.sum(axis=axis), (x,))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    out._backward = bwd
    return out


def vmean(x: Var, axis=None) -> Var:
    x = wrap(x)
    n = x.value.size if axis is None else x.value.shape[axis]
    return vsum(x, axis=axis) * (1.0 / n)


def concat(vars_: list[Var], axis: int = -1) -> Var:
    vars_ = [wrap(v) for v in vars_]
    out = Var(np.concatenate([v.value for v in vars_], axis=axis), tuple(vars_))
    sizes = [v.value.shape[axis] for v in vars_]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    out._backward = bwd
    return out


def backward(loss: Var) -> None:
    """Accumulate d(loss)/d(node) into .grad of every reachable node.

    Raises NumericError if the loss is not a finite scalar.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.value):
        raise NumericError("non-finite loss encountered during backward")

    # iterative topological sort (graphs can be thousands of nodes deep)
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)

    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g


# -- parameters -------------------------------------------------------------


@dataclass
class Parameter:
    """A named trainable array with its accumulated gradient."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = _as_array(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")


class ParameterSet:
    """Ordered collection of uniquely named parameters."""

    def __init__(self, params: list[Parameter] | None = None):
        self._params: dict[str, Parameter] = {}
        for p in params or []:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise ValueError(f"duplicate parameter name: {p.name}")
        self._params[p.name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def leaves(self) -> dict[str, Var]:
        """Fresh leaf Vars for one graph construction pass."""
        return {name: Var(p.value) for name, p in self._params.items()}

    def collect_grads(self, leaves: dict[str, Var]) -> None:
        """Copy leaf gradients back into the parameters (overwrites)."""
        for name, var in leaves.items():
            p = self._params[name]
            p.grad = var.grad if var.grad is not None else np.zeros_like(p.value)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.value)

    def copy(self, rename: dict[str, str] | None = None) -> "ParameterSet":
        out = ParameterSet()
        for p in self._params.values():
            name = (rename or {}).get(p.name, p.name)
            out.add(Parameter(name, p.value.copy()))
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self._params.items()}
