"""Trainable-parameter plumbing: flat storage, gradients, Adam.

A ParameterVector is an ordered set of named blocks living in one flat
float64 array of unconstrained storage. Each block declares a transform
(identity, log, or softplus) mapping storage to the constrained value
the model actually uses, so positivity never needs projection steps.

Objectives are written against `Leaves`: tape nodes per block, both the
raw storage view and the transformed view. `gradient` runs the tape
backward and returns d(objective)/d(storage), which is what Adam and
the finite-difference harness both consume, so the chain rule through
the transforms is verified rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError, NumericalError

TRANSFORMS = ("identity", "log", "softplus")


@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple
    transform: str
    offset: int
    size: int


def _inverse_transform(values: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return values
    if transform == "log":
        if np.any(values <= 0):
            raise InvalidArgumentError("log-transform blocks need positive initial values")
        return np.log(values)
    if transform == "softplus":
        if np.any(values <= 0):
            raise InvalidArgumentError("softplus-transform blocks need positive initial values")
        # inverse of log(1+e^x), stable for small and large v alike
        return values + np.log(-np.expm1(-values))
    raise InvalidArgumentError(f"unknown transform {transform!r}")


def _forward_transform(storage: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return storage
    if transform == "log":
        return np.exp(storage)
    return np.logaddexp(0.0, storage)


class ParameterVector:
    """Named, transformed blocks over one flat unconstrained array."""

    def __init__(self):
        self.blocks: list[Block] = []
        self._by_name: dict[str, Block] = {}
        self.storage = np.zeros(0)

    def add(self, name: str, init, transform: str = "identity") -> None:
        """Append a block initialized at the given constrained values."""
        if name in self._by_name:
            raise InvalidArgumentError(f"duplicate block name {name!r}")
        if transform not in TRANSFORMS:
            raise InvalidArgumentError(f"unknown transform {transform!r}")
        init = np.asarray(init, dtype=float)
        raw = _inverse_transform(init, transform).ravel()
        block = Block(name, init.shape, transform, self.storage.size, init.size)
        self.blocks.append(block)
        self._by_name[name] = block
        self.storage = np.concatenate([self.storage, raw])

    def block(self, name: str) -> Block:
        try:
            return self._by_name[name]
        except KeyError:
            raise InvalidArgumentError(f"no block named {name!r}") from None

    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    @property
    def size(self) -> int:
        return self.storage.size

    def raw(self, name: str) -> np.ndarray:
        b = self.block(name)
        return self.storage[b.offset : b.offset + b.size].reshape(b.shape)

    def constrained(self, name: str) -> np.ndarray:
        b = self.block(name)
        return _forward_transform(self.raw(name), b.transform)

    def set_raw(self, name: str, values) -> None:
        b = self.block(name)
        values = np.asarray(values, dtype=float)
        if values.shape != b.shape:
            raise InvalidArgumentError(
                f"block {name!r} expects shape {b.shape}, got {values.shape}"
            )
        self.storage[b.offset : b.offset + b.size] = values.ravel()

    def copy(self) -> "ParameterVector":
        out = ParameterVector()
        out.blocks = list(self.blocks)
        out._by_name = dict(self._by_name)
        out.storage = self.storage.copy()
        return out


class Leaves:
    """Tape nodes for every block of a ParameterVector.

    `leaves[name]` is the constrained view (what the math uses);
    `leaves.raw(name)` is the unconstrained storage node, handy where
    the storage IS the quantity needed (a log-block's raw value is
    already its logarithm, which keeps log-determinants exact).
    """

    def __init__(self, params: ParameterVector, requires_grad: bool = True):
        self._raw = {}
        self._constrained = {}
        for b in params.blocks:
            raw = ad.Var(
                params.storage[b.offset : b.offset + b.size].reshape(b.shape).copy(),
                requires_grad=requires_grad,
            )
            self._raw[b.name] = raw
            if b.transform == "identity":
                self._constrained[b.name] = raw
            elif b.transform == "log":
                self._constrained[b.name] = ad.exp(raw)
            else:
                self._constrained[b.name] = ad.softplus(raw)

    def raw(self, name: str) -> ad.Var:
        return self._raw[name]

    def __getitem__(self, name: str) -> ad.Var:
        return self._constrained[name]

    def __contains__(self, name: str) -> bool:
        return name in self._raw


def evaluate(objective, params: ParameterVector) -> float:
    """Forward pass only, no gradients recorded."""
    out = objective(Leaves(params, requires_grad=False))
    value = out.item() if isinstance(out, ad.Var) else float(out)
    return value


def value_and_gradient(objective, params: ParameterVector):
    """Objective value and d(objective)/d(storage), via the tape."""
    leaves = Leaves(params)
    out = objective(leaves)
    if not isinstance(out, ad.Var):
        raise InvalidArgumentError("objective must return a tape node")
    value = out.item()
    if not np.isfinite(value):
        raise NumericalError(f"objective evaluated non-finite ({value})")
    out.backward()
    grad = np.zeros(params.size)
    for b in params.blocks:
        g = leaves.raw(b.name).grad
        if g is not None:
            grad[b.offset : b.offset + b.size] = g.ravel()
    return value, grad


def gradient(objective, params: ParameterVector) -> np.ndarray:
    return value_and_gradient(objective, params)[1]


def finite_difference_gradient(objective, params: ParameterVector, h: float = 1e-5) -> np.ndarray:
    """Central differences on unconstrained storage, block by block."""
    base = params.storage.copy()
    grad = np.zeros_like(base)
    scratch = params.copy()
    for b in params.blocks:
        for j in range(b.size):
            k = b.offset + j
            scratch.storage[:] = base
            scratch.storage[k] = base[k] + h
            hi = evaluate(objective, scratch)
            scratch.storage[k] = base[k] - h
            lo = evaluate(objective, scratch)
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericalError(
                    f"objective non-finite while perturbing block {b.name!r}",
                    block=b.name,
                )
            grad[k] = (hi - lo) / (2 * h)
    return grad


@dataclass
class GradientCheckReport:
    """Per-block worst relative disagreement between tape and differences."""

    per_block: dict
    threshold: float
    passed: bool
    worst_block: str = ""

    def failing_blocks(self) -> list[str]:
        return [n for n, e in self.per_block.items() if e >= self.threshold]


def check_gradient(
    objective,
    params: ParameterVector,
    h: float = 1e-5,
    threshold: float = 1e-4,
    floor: float = 1e-6,
) -> GradientCheckReport:
    """Compare tape gradients to central differences, blockwise.

    Entries where both estimates sit below `floor` in magnitude are
    skipped; elsewhere the symmetric relative error must stay under
    `threshold`.
    """
    tape = gradient(objective, params)
    diff = finite_difference_gradient(objective, params, h=h)
    return compare_gradients(params, tape, diff, threshold=threshold, floor=floor)


def compare_gradients(
    params: ParameterVector,
    tape: np.ndarray,
    diff: np.ndarray,
    threshold: float = 1e-4,
    floor: float = 1e-6,
) -> GradientCheckReport:
    """Blockwise relative-error report for two full gradient vectors."""
    per_block = {}
    worst_block, worst = "", -1.0
    for b in params.blocks:
        sl = slice(b.offset, b.offset + b.size)
        t, d = tape[sl], diff[sl]
        denom = np.maximum(np.abs(t), np.abs(d))
        mask = denom > floor
        err = 0.0
        if np.any(mask):
            err = float(np.max(np.abs(t - d)[mask] / denom[mask]))
        per_block[b.name] = err
        if err > worst:
            worst_block, worst = b.name, err
    return GradientCheckReport(
        per_block=per_block,
        threshold=threshold,
        passed=all(e < threshold for e in per_block.values()),
        worst_block=worst_block,
    )


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for one ParameterVector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(n: int, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        first_moment=np.zeros(n),
        second_moment=np.zeros(n),
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(state: AdamState, params: ParameterVector, grad: np.ndarray):
    """One bias-corrected Adam descent step, in place. Returns (params, state)."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != (params.size,):
        raise InvalidArgumentError(
            f"gradient length {grad.shape} does not match parameters ({params.size})"
        )
    if state.first_moment.shape != (params.size,):
        raise InvalidArgumentError("Adam state length does not match parameters")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        block = next(
            (b.name for b in params.blocks if b.offset <= bad < b.offset + b.size), "?"
        )
        raise NumericalError(f"non-finite gradient entry in block {block!r}", block=block)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment *= b1
    state.first_moment += (1 - b1) * grad
    state.second_moment *= b2
    state.second_moment += (1 - b2) * grad * grad
    m_hat = state.first_moment / (1 - b1**state.step)
    v_hat = state.second_moment / (1 - b2**state.step)
    params.storage -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
