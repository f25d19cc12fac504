"""Reverse-mode differentiation over matrix-level operations.

The objective here is built from a couple dozen coarse primitives
(matrix multiply, Cholesky, triangular solve, elementwise transcendentals,
reductions), so the tape records matrix nodes rather than scalars. Each
`Var` holds a float64 ndarray, the parents it came from, and a vector-
Jacobian closure; `backward()` walks the graph once in reverse
topological order.

Adjoint conventions worth keeping in mind:

  * Broadcasting ops sum their upstream gradient back down to the
    operand's shape (`_unbroadcast`).
  * `cholesky` returns the lower factor; its adjoint is the standard
    blocked reverse-mode identity built from two triangular solves, with
    the result symmetrized because the input is symmetric.
  * `triangular_solve` supports lower factors only, plain or transposed.
  * `maximum` against a constant propagates gradient only where the
    input is strictly above the floor, so an active clamp stops pushing.

Every adjoint is exercised against central finite differences in the
test suite; nothing here is trusted on derivation alone.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.special

from . import numerics
from .errors import InvalidArgumentError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """One node of the tape: a value, and how to push gradients back."""

    __slots__ = ("value", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad=False, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=float)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return self.value.item()

    def backward(self) -> None:
        """Accumulate gradients into every upstream Var with requires_grad."""
        if self.value.size != 1:
            raise InvalidArgumentError("backward() starts from a scalar node")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, contribution in zip(node._parents, node._vjp(node.grad)):
                if contribution is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = contribution
                else:
                    parent.grad = parent.grad + contribution

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        if self.ndim != 2:
            raise InvalidArgumentError(".T is for 2-D nodes; use transpose_last")
        return transpose_last(self)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value, parents, vjp) -> Var:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Var(value)
    return Var(value, requires_grad=True, _parents=tuple(parents), _vjp=vjp)


# -- arithmetic ---------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.value + b.value, (a, b), vjp)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _node(a.value - b.value, (a, b), vjp)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _node(av * bv, (a, b), vjp)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value

    def vjp(g):
        return (
            _unbroadcast(g / bv, av.shape),
            _unbroadcast(-g * av / (bv * bv), bv.shape),
        )

    return _node(av / bv, (a, b), vjp)


def power(a, exponent: float) -> Var:
    a = as_var(a)
    if isinstance(exponent, Var):
        raise InvalidArgumentError("power expects a constant exponent")
    av = a.value

    def vjp(g):
        return (g * exponent * av ** (exponent - 1.0),)

    return _node(av ** exponent, (a,), vjp)


# -- shape moves --------------------------------------------------------


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.ndim < 2 or b.ndim < 2:
        raise InvalidArgumentError("matmul operands must be at least 2-D")
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _node(av @ bv, (a, b), vjp)


def transpose_last(a) -> Var:
    a = as_var(a)
    if a.ndim < 2:
        raise InvalidArgumentError("transpose_last needs at least 2-D")

    def vjp(g):
        return (np.swapaxes(g, -1, -2),)

    return _node(np.swapaxes(a.value, -1, -2), (a,), vjp)


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _node(a.value.reshape(shape), (a,), vjp)


def getitem(a, key) -> Var:
    """Basic slicing only; use gather_rows for index arrays."""
    a = as_var(a)
    if isinstance(key, (list, np.ndarray)) or (
        isinstance(key, tuple) and any(isinstance(k, (list, np.ndarray)) for k in key)
    ):
        raise InvalidArgumentError("getitem supports basic slices; use gather_rows")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[key] += g
        return (out,)

    return _node(a.value[key], (a,), vjp)


def gather_rows(a, indices) -> Var:
    """Select rows of a 2-D node; adjoint scatter-adds (duplicates allowed)."""
    a = as_var(a)
    if a.ndim != 2:
        raise InvalidArgumentError("gather_rows expects a 2-D node")
    indices = np.asarray(indices, dtype=int)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, indices, g)
        return (out,)

    return _node(a.value[indices], (a,), vjp)


# -- reductions ---------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean_(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    if axis is None:
        count = a.value.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[i] for i in axis]))
    else:
        count = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- elementwise transcendentals ---------------------------------------


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return _node(out, (a,), vjp)


def log(a) -> Var:
    a = as_var(a)
    av = a.value

    def vjp(g):
        return (g / av,)

    return _node(np.log(av), (a,), vjp)


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)

    def vjp(g):
        return (g * 0.5 / out,)

    return _node(out, (a,), vjp)


def square(a) -> Var:
    a = as_var(a)
    av = a.value

    def vjp(g):
        return (g * 2.0 * av,)

    return _node(av * av, (a,), vjp)


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _node(out, (a,), vjp)


def softplus(a) -> Var:
    a = as_var(a)
    av = a.value
    out = np.logaddexp(0.0, av)

    def vjp(g):
        return (g * scipy.special.expit(av),)

    return _node(out, (a,), vjp)


def maximum(a, floor: float) -> Var:
    """Clamp below at a constant; gradient passes only strictly above it."""
    a = as_var(a)
    if isinstance(floor, Var):
        raise InvalidArgumentError("maximum expects a constant floor")
    av = a.value
    mask = av > floor

    def vjp(g):
        return (g * mask,)

    return _node(np.maximum(av, floor), (a,), vjp)


def log_normal_cdf(a) -> Var:
    """log Phi elementwise; adjoint is the stable ratio phi/Phi."""
    a = as_var(a)
    av = a.value
    out = numerics.log_normal_cdf(av)
    out = np.asarray(out)

    def vjp(g):
        return (g * np.exp(numerics.log_normal_pdf(av) - out),)

    return _node(out, (a,), vjp)


# -- linear algebra -----------------------------------------------------


def cholesky(a, base_jitter=None) -> Var:
    """Lower Cholesky factor with the jitter ladder of `numerics` applied.

    The jitter actually used is treated as a constant of the graph, not
    differentiated through.
    """
    a = as_var(a)
    factor = numerics.cholesky_with_jitter(a.value, base_jitter)
    L = factor.lower

    def vjp(g):
        Lbar = np.tril(g)
        P = np.tril(L.T @ Lbar)
        P[np.diag_indices_from(P)] *= 0.5
        tmp = scipy.linalg.solve_triangular(L, P, lower=True, trans="T", check_finite=False)
        Abar = scipy.linalg.solve_triangular(L, tmp.T, lower=True, trans="T", check_finite=False).T
        return (0.5 * (Abar + Abar.T),)

    return _node(L, (a,), vjp)


def triangular_solve(L, B, trans: str = "N") -> Var:
    """Solve L X = B (trans 'N') or L^T X = B (trans 'T'), L lower-triangular.

    Finiteness is deliberately not checked here: a non-finite solve
    propagates to the evaluation-level check, which turns it into a
    NumericalError instead of a mid-graph crash.
    """
    L, B = as_var(L), as_var(B)
    if trans not in ("N", "T"):
        raise InvalidArgumentError("trans must be 'N' or 'T'")
    Lv = L.value
    X = scipy.linalg.solve_triangular(Lv, B.value, lower=True, trans=trans, check_finite=False)

    def vjp(g):
        if trans == "N":
            Bbar = scipy.linalg.solve_triangular(Lv, g, lower=True, trans="T", check_finite=False)
            Lbar = -np.tril(Bbar @ X.T)
        else:
            Bbar = scipy.linalg.solve_triangular(Lv, g, lower=True, trans="N", check_finite=False)
            Lbar = -np.tril(X @ Bbar.T)
        return Lbar, Bbar

    return _node(X, (L, B), vjp)
