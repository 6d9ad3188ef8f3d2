"""Scalar reverse-mode automatic differentiation on an append-only tape.

Every arithmetic operation on a :class:`Node` appends one entry to its
:class:`Tape`, holding the value, the parent indices and the partial
derivative with respect to each parent. Parents are always recorded before
their children, so a single reverse sweep over the tape accumulates the
adjoints.

    >>> tape = Tape()
    >>> x, y = tape.leaf(2.0), tape.leaf(3.0)
    >>> tape.backward(x * y)
    [3.0, 2.0]

The helpers :func:`sin`, :func:`cos`, :func:`square` and
:func:`smooth_abs_pow` accept either plain floats or nodes, so model code
can be written once and evaluated both ways.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "Node",
    "Tape",
    "sin",
    "cos",
    "square",
    "smooth_abs_pow",
    "finite_diff_check",
]

OPS = ("add", "sub", "mul", "div", "sin", "cos", "square", "smooth_abs_pow")


class DomainError(ValueError):
    """Raised when an operation is evaluated outside its domain."""


def _abs_pow(x: float, p: float, eps: float) -> tuple[float, float]:
    """Value and derivative of ``(x**2 + eps**2) ** (p / 2)``."""
    if not 0.0 < p <= 1.0:
        raise DomainError(f"smooth_abs_pow needs p in (0, 1], got {p!r}")
    if eps < 0.0:
        raise DomainError(f"smooth_abs_pow needs eps >= 0, got {eps!r}")
    if eps == 0.0:
        # |x|**p written directly so tiny x does not underflow through x*x
        a = abs(x)
        if a == 0.0:
            if p < 1.0:
                raise DomainError("|x|**p with p < 1 is not differentiable at x = 0 (use eps > 0)")
            return 0.0, 0.0
        value = a**p
        return value, math.copysign(p * value / a, x)
    s = x * x + eps * eps
    value = s ** (0.5 * p)
    return value, p * x * value / s


class Node:
    """Handle to one entry of a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, id: int):
        self.tape = tape
        self.id = id

    @property
    def value(self) -> float:
        return self.tape.values[self.id]

    @property
    def parents(self) -> tuple[int, ...]:
        return self.tape.parents[self.id]

    @property
    def local_grads(self) -> tuple[float, ...]:
        return self.tape.local_grads[self.id]

    def _binary(self, other, op: str, swap: bool = False) -> Node:
        tape = self.tape
        if isinstance(other, Node):
            if other.tape is not tape:
                raise ValueError("cannot combine nodes from different tapes")
            return tape.apply(op, other, self) if swap else tape.apply(op, self, other)
        # constant operand: folded into the partial, no entry of its own
        c = float(other)
        a, i = tape.values[self.id], self.id
        if op == "add":
            return tape._push(a + c, (i,), (1.0,))
        if op == "sub":
            return tape._push(c - a, (i,), (-1.0,)) if swap else tape._push(a - c, (i,), (1.0,))
        if op == "mul":
            return tape._push(a * c, (i,), (c,))
        if swap:
            if a == 0.0:
                raise DomainError("division by zero")
            q = c / a
            return tape._push(q, (i,), (-q / a,))
        if c == 0.0:
            raise DomainError("division by zero")
        return tape._push(a / c, (i,), (1.0 / c,))

    def __add__(self, other):
        return self._binary(other, "add")

    def __radd__(self, other):
        return self._binary(other, "add", True)

    def __sub__(self, other):
        return self._binary(other, "sub")

    def __rsub__(self, other):
        return self._binary(other, "sub", True)

    def __mul__(self, other):
        return self._binary(other, "mul")

    def __rmul__(self, other):
        return self._binary(other, "mul", True)

    def __truediv__(self, other):
        return self._binary(other, "div")

    def __rtruediv__(self, other):
        return self._binary(other, "div", True)

    def __neg__(self):
        return self.tape._push(-self.tape.values[self.id], (self.id,), (-1.0,))

    def __float__(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Node(id={self.id}, value={self.value!r})"


class Tape:
    """Append-only record of scalar operations.

    Entries are stored column-wise (``values``, ``parents``, ``local_grads``)
    rather than as objects; :class:`Node` is only a view into them.
    Constants made with :meth:`const` are parentless entries that are not
    registered as leaves. Plain numbers mixed into node arithmetic are not
    stored at all; they only show up in the recorded partials.
    """

    def __init__(self):
        self.values: list[float] = []
        self.parents: list[tuple[int, ...]] = []
        self.local_grads: list[tuple[float, ...]] = []
        self.leaf_ids: list[int] = []

    def __len__(self) -> int:
        return len(self.values)

    def _push(self, value: float, parents: tuple[int, ...], grads: tuple[float, ...]) -> Node:
        if value - value != 0.0:  # inf or nan
            raise DomainError(f"non-finite value {value!r} at tape entry {len(self.values)}")
        self.values.append(value)
        self.parents.append(parents)
        self.local_grads.append(grads)
        return Node(self, len(self.values) - 1)

    def leaf(self, value: float) -> Node:
        """Append a trainable input and register it as a leaf."""
        node = self._push(float(value), (), ())
        self.leaf_ids.append(node.id)
        return node

    def leaves(self, values) -> list[Node]:
        return [self.leaf(v) for v in values]

    def const(self, value: float) -> Node:
        return self._push(float(value), (), ())

    def apply(self, op: str, *args: Node, p: float | None = None, eps: float = 0.0) -> Node:
        """Append ``op(*args)`` with its local partial derivatives."""
        for a in args:
            if a.tape is not self:
                raise ValueError("argument node belongs to a different tape")
        vals = self.values
        if op in ("add", "sub", "mul", "div"):
            if len(args) != 2:
                raise TypeError(f"{op} takes 2 arguments, got {len(args)}")
            i, j = args[0].id, args[1].id
            a, b = vals[i], vals[j]
            if op == "add":
                return self._push(a + b, (i, j), (1.0, 1.0))
            if op == "sub":
                return self._push(a - b, (i, j), (1.0, -1.0))
            if op == "mul":
                return self._push(a * b, (i, j), (b, a))
            if b == 0.0:
                raise DomainError("division by zero")
            q = a / b
            return self._push(q, (i, j), (1.0 / b, -q / b))
        if op not in OPS:
            raise ValueError(f"unknown operation {op!r}")
        if len(args) != 1:
            raise TypeError(f"{op} takes 1 argument, got {len(args)}")
        i = args[0].id
        a = vals[i]
        if op == "sin":
            return self._push(math.sin(a), (i,), (math.cos(a),))
        if op == "cos":
            return self._push(math.cos(a), (i,), (-math.sin(a),))
        if op == "square":
            return self._push(a * a, (i,), (2.0 * a,))
        if p is None:
            raise TypeError("smooth_abs_pow requires p")
        value, grad = _abs_pow(a, p, eps)
        return self._push(value, (i,), (grad,))

    def backward(self, output: Node) -> list[float]:
        """Return d(output)/d(leaf) for every leaf, in registration order."""
        if output.tape is not self or not 0 <= output.id < len(self.values):
            raise ValueError("output node is not on this tape")
        adj = [0.0] * (output.id + 1)
        adj[output.id] = 1.0
        parents, local = self.parents, self.local_grads
        for k in range(output.id, -1, -1):
            g = adj[k]
            if g == 0.0:
                continue
            for parent, d in zip(parents[k], local[k]):
                adj[parent] += g * d
        return [adj[i] if i <= output.id else 0.0 for i in self.leaf_ids]


def sin(x):
    return x.tape.apply("sin", x) if isinstance(x, Node) else math.sin(x)


def cos(x):
    return x.tape.apply("cos", x) if isinstance(x, Node) else math.cos(x)


def square(x):
    return x.tape.apply("square", x) if isinstance(x, Node) else x * x


def smooth_abs_pow(x, p: float, eps: float = 0.0):
    """``(x**2 + eps**2) ** (p/2)``; equals ``|x|**p`` when ``eps == 0``."""
    if isinstance(x, Node):
        return x.tape.apply("smooth_abs_pow", x, p=p, eps=eps)
    if x == 0.0 and eps == 0.0 and 0.0 < p <= 1.0:
        # the value is defined at 0 even where the derivative is not
        return 0.0
    return _abs_pow(float(x), p, eps)[0]


def gradient(f: Callable[[Sequence], object], point: Sequence[float]) -> tuple[float, np.ndarray]:
    """Value and reverse-mode gradient of ``f`` at ``point``."""
    tape = Tape()
    out = f(tape.leaves(point))
    if not isinstance(out, Node):
        # f ignored its inputs
        return float(out), np.zeros(len(point))
    return out.value, np.array(tape.backward(out))


def finite_diff_check(
    f: Callable[[Sequence], object],
    point: Sequence[float],
    step: float = 1e-5,
    abs_floor: float = 1e-12,
) -> float:
    """Largest coordinate error between the tape gradient and central differences.

    ``f`` must accept a sequence of floats or of nodes. The error is relative
    to the reverse-mode gradient, except where that gradient is smaller than
    ``abs_floor`` in magnitude, where the absolute difference is used.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(point, dtype=float)
    _, grad = gradient(f, x)
    worst = 0.0
    for i in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[i] += step
        lo[i] -= step
        f_hi, f_lo = float(f(list(hi))), float(f(list(lo)))
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise DomainError(f"f is not finite near the point along coordinate {i}")
        fd = (f_hi - f_lo) / (2.0 * step)
        diff = abs(grad[i] - fd)
        err = diff if abs(grad[i]) < abs_floor else diff / abs(grad[i])
        worst = max(worst, err)
    return worst
