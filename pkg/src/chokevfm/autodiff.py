"""Reverse-mode automatic differentiation on numpy values.

A small define-by-run tape: every operation on a :class:`Tensor` records its
parents and a vector-Jacobian product, and :func:`backward` replays the
records in reverse topological order. Values are float64 numpy arrays of any
shape (scalars included), so a whole mini-batch flows through one graph.

The module-level math helpers (``sqrt``, ``exp``, ``maximum``, ...) dispatch
on their argument type: given plain numbers or numpy arrays they fall through
to numpy, given a Tensor they extend the graph. Model code can therefore be
written once and evaluated with or without derivative tracking.

Subgradient conventions (deterministic by design):
  * ``maximum``/``minimum`` route the gradient to the selected branch and
    break ties in favour of the first argument.
  * ``relu`` treats 0 as active (consistent with the maximum rule).
  * ``sqrt`` returns gradient 0 at exactly 0 instead of infinity.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError

__all__ = [
    "Tensor",
    "backward",
    "gradient",
    "constant",
    "parameter",
    "exp",
    "log",
    "sqrt",
    "power",
    "maximum",
    "minimum",
    "relu",
    "matmul",
    "total",
    "value_of",
    "central_difference",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """One node of the differentiation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    # make `ndarray <op> Tensor` defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        _parents: tuple = (),
        _vjp: Callable | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.value.shape
        out = Tensor(self.value.reshape(shape), _parents=(self,))
        out._vjp = lambda g: (g.reshape(src_shape),)
        return out

    def __repr__(self):
        return f"Tensor({self.value!r}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return _binary(
            self,
            other,
            np.add,
            lambda g, a, b, out: g,
            lambda g, a, b, out: g,
        )

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(
            self,
            other,
            np.subtract,
            lambda g, a, b, out: g,
            lambda g, a, b, out: -g,
        )

    def __rsub__(self, other):
        return _binary(
            other,
            self,
            np.subtract,
            lambda g, a, b, out: g,
            lambda g, a, b, out: -g,
        )

    def __mul__(self, other):
        return _binary(
            self,
            other,
            np.multiply,
            lambda g, a, b, out: g * b,
            lambda g, a, b, out: g * a,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(
            self,
            other,
            np.divide,
            lambda g, a, b, out: g / b,
            lambda g, a, b, out: -g * out / b,
        )

    def __rtruediv__(self, other):
        return _binary(
            other,
            self,
            np.divide,
            lambda g, a, b, out: g / b,
            lambda g, a, b, out: -g * out / b,
        )

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            return power(self, exponent)
        n = float(exponent)
        out = Tensor(self.value**n, _parents=(self,))
        out._vjp = lambda g: (_unbroadcast(g * n * self.value ** (n - 1.0), self.shape),)
        return out

    def __neg__(self):
        out = Tensor(-self.value, _parents=(self,))
        out._vjp = lambda g: (-g,)
        return out

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary(a, b, fwd, vjp_a, vjp_b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(fwd(a.value, b.value), _parents=(a, b))

    def vjp(g):
        ga = _unbroadcast(np.asarray(vjp_a(g, a.value, b.value, out.value)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.asarray(vjp_b(g, a.value, b.value, out.value)), b.shape) if b.requires_grad else None
        return ga, gb

    out._vjp = vjp
    return out


def constant(value) -> Tensor:
    """Wrap data that never needs a gradient."""
    return Tensor(value, requires_grad=False)


def parameter(value) -> Tensor:
    """Wrap a trainable leaf; its value may be mutated between graphs."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


# -- elementwise functions --------------------------------------------------


def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(x)
    out = Tensor(np.exp(x.value), _parents=(x,))
    out._vjp = lambda g: (g * out.value,)
    return out


def log(x):
    if not isinstance(x, Tensor):
        return np.log(x)
    out = Tensor(np.log(x.value), _parents=(x,))
    out._vjp = lambda g: (g / x.value,)
    return out


def sqrt(x):
    if not isinstance(x, Tensor):
        return np.sqrt(x)
    out = Tensor(np.sqrt(x.value), _parents=(x,))

    def vjp(g):
        # one-sided derivative 0 at exactly 0 (closed choke / zero drawdown)
        safe = np.where(out.value > 0.0, out.value, 1.0)
        return (g * np.where(out.value > 0.0, 0.5 / safe, 0.0),)

    out._vjp = vjp
    return out


def power(base, exponent):
    """General ``base ** exponent`` for positive base."""
    if not isinstance(base, Tensor) and not isinstance(exponent, Tensor):
        return np.power(base, exponent)
    a, b = _lift(base), _lift(exponent)
    out = Tensor(np.power(a.value, b.value), _parents=(a, b))

    def vjp(g):
        ga = _unbroadcast(g * b.value * np.power(a.value, b.value - 1.0), a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * out.value * np.log(a.value), b.shape) if b.requires_grad else None
        return ga, gb

    out._vjp = vjp
    return out


def maximum(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return np.where(np.asarray(a) >= np.asarray(b), a, b)
    a, b = _lift(a), _lift(b)
    mask = a.value >= b.value
    out = Tensor(np.where(mask, a.value, b.value), _parents=(a, b))

    def vjp(g):
        ga = _unbroadcast(g * mask, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ~mask, b.shape) if b.requires_grad else None
        return ga, gb

    out._vjp = vjp
    return out


def minimum(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return np.where(np.asarray(a) <= np.asarray(b), a, b)
    a, b = _lift(a), _lift(b)
    mask = a.value <= b.value
    out = Tensor(np.where(mask, a.value, b.value), _parents=(a, b))

    def vjp(g):
        ga = _unbroadcast(g * mask, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ~mask, b.shape) if b.requires_grad else None
        return ga, gb

    out._vjp = vjp
    return out


def relu(x):
    if not isinstance(x, Tensor):
        return np.where(x >= 0.0, x, 0.0)
    mask = x.value >= 0.0
    out = Tensor(np.where(mask, x.value, 0.0), _parents=(x,))
    out._vjp = lambda g: (g * mask,)
    return out


def matmul(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a @ b
    a, b = _lift(a), _lift(b)
    out = Tensor(a.value @ b.value, _parents=(a, b))

    def vjp(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    out._vjp = vjp
    return out


def total(x) -> Tensor:
    """Sum of all elements, as a scalar node."""
    if not isinstance(x, Tensor):
        return np.sum(x)
    shape = x.value.shape
    out = Tensor(np.sum(x.value), _parents=(x,))
    out._vjp = lambda g: (np.broadcast_to(g, shape),)
    return out


def value_of(x) -> np.ndarray:
    """The numpy value behind `x`, whether or not it is a Tensor."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# -- backward pass ----------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate gradients of the scalar `root` into every reachable leaf.

    Each node is visited exactly once; existing ``.grad`` values on the
    reachable subgraph are discarded first, so repeated calls do not
    double-count.
    """
    if root.value.size != 1:
        raise ContractError(f"backward requires a scalar root, got shape {root.value.shape}")
    if not root.requires_grad:
        raise ContractError("backward root does not depend on any parameter")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def gradient(root: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradient of the scalar `root` with respect to each leaf in `params`."""
    backward(root)
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


def central_difference(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    rel_step: float = 1e-4,
) -> list[np.ndarray]:
    """Central finite differences of ``f()`` with respect to `params`.

    `f` must re-evaluate the quantity from the current parameter values;
    the step for each coordinate is ``rel_step * max(1, |value|)``.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat_v = p.value.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            h = rel_step * max(1.0, abs(orig))
            flat_v[i] = orig + h
            hi = float(value_of(f()))
            flat_v[i] = orig - h
            lo = float(value_of(f()))
            flat_v[i] = orig
            flat_g[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads
