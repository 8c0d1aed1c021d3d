"""Tape-based reverse-mode differentiation over dense float64 matrices.

A forward pass builds Node objects on a Tape in execution order; backward()
walks the tape in reverse, accumulating vector-Jacobian products into each
node's grad buffer and finally into the owning ParameterStore's gradient
slots. Replaying backward() on the same tape is bit-identical because node
grads are reset at the start of every call and the accumulation order is
fixed by the tape.

The engine covers exactly what the model needs: matmul, broadcasting
add/sub/mul/div, relu, sigmoid, exp/log, clip, elementwise maximum,
row softmax, reductions, column concatenation/slicing. ReLU records the
smallest |pre-activation| it sees so finite-difference probes can skip
kink-adjacent comparisons.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import matrix as mx
from .errors import (
    ContractError,
    DimensionError,
    EvaluationError,
    ParamLookupError,
    ParameterError,
)
from .params import ParameterStore

__all__ = [
    "Tape",
    "Node",
    "backward",
    "finite_diff_check",
    "mlp2_forward",
    "mlp2",
]


class Node:
    __slots__ = ("tape", "value", "grad", "_parents", "_bwd")

    def __init__(self, tape, value, parents=(), bwd=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Ordered record of one forward pass."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._param_leaves: list[tuple[Node, ParameterStore, str]] = []
        self._param_cache: dict[tuple[int, str], Node] = {}
        self.min_relu_abs = math.inf

    def constant(self, value) -> Node:
        """A leaf carrying input data; gradients stop here."""
        return self._record(Node(self, mx.as_matrix(value)))

    def parameter(self, store: ParameterStore, name: str) -> Node:
        """A leaf bound to a named tensor; backward() writes its gradient."""
        key = (id(store), name)
        node = self._param_cache.get(key)
        if node is None:
            if name not in store:
                raise ParamLookupError(f"unknown parameter name: {name!r}")
            node = self._record(Node(self, store.value(name)))
            self._param_cache[key] = node
            self._param_leaves.append((node, store, name))
        return node

    def _record(self, node: Node) -> Node:
        self._nodes.append(node)
        return node


def _accumulate(node: Node, grad: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.array(grad, dtype=np.float64)
    else:
        node.grad = node.grad + grad


def _op(tape: Tape, value: np.ndarray, parents, bwd: Callable) -> Node:
    return tape._record(Node(tape, value, parents, bwd))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Node, b: Node, op: str) -> None:
    (ra, ca), (rb, cb) = a.value.shape, b.value.shape
    if (ra != rb and 1 not in (ra, rb)) or (ca != cb and 1 not in (ca, cb)):
        raise DimensionError(f"{op} shape mismatch: {ra}x{ca} vs {rb}x{cb}")


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.value.shape[0]}x{a.value.shape[1]} @ "
            f"{b.value.shape[0]}x{b.value.shape[1]}"
        )
    av, bv = a.value, b.value

    def bwd(g):
        _accumulate(a, g @ bv.T)
        _accumulate(b, av.T @ g)

    return _op(a.tape, av @ bv, (a, b), bwd)


def add(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "add")

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))

    return _op(a.tape, a.value + b.value, (a, b), bwd)


def sub(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "sub")

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(-g, b.value.shape))

    return _op(a.tape, a.value - b.value, (a, b), bwd)


def mul(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value

    def bwd(g):
        _accumulate(a, _unbroadcast(g * bv, a.value.shape))
        _accumulate(b, _unbroadcast(g * av, b.value.shape))

    return _op(a.tape, av * bv, (a, b), bwd)


def div(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "div")
    av, bv = a.value, b.value

    def bwd(g):
        _accumulate(a, _unbroadcast(g / bv, a.value.shape))
        _accumulate(b, _unbroadcast(-g * av / (bv * bv), b.value.shape))

    return _op(a.tape, av / bv, (a, b), bwd)


def scale(a: Node, k: float) -> Node:
    k = float(k)

    def bwd(g):
        _accumulate(a, g * k)

    return _op(a.tape, a.value * k, (a,), bwd)


def add_scalar(a: Node, k: float) -> Node:
    k = float(k)

    def bwd(g):
        _accumulate(a, g)

    return _op(a.tape, a.value + k, (a,), bwd)


def neg(a: Node) -> Node:
    return scale(a, -1.0)


def rsub_scalar(k: float, a: Node) -> Node:
    """k - a."""
    k = float(k)

    def bwd(g):
        _accumulate(a, -g)

    return _op(a.tape, k - a.value, (a,), bwd)


def relu(a: Node) -> Node:
    pre = a.value
    if pre.size:
        a.tape.min_relu_abs = min(a.tape.min_relu_abs, float(np.min(np.abs(pre))))
    mask = pre > 0.0  # subgradient at exactly 0 is defined as 0

    def bwd(g):
        _accumulate(a, g * mask)

    return _op(a.tape, np.maximum(pre, 0.0), (a,), bwd)


def sigmoid(a: Node) -> Node:
    y = mx._sigmoid_kernel(a.value)

    def bwd(g):
        _accumulate(a, g * y * (1.0 - y))

    return _op(a.tape, y, (a,), bwd)


def exp(a: Node) -> Node:
    y = np.exp(a.value)

    def bwd(g):
        _accumulate(a, g * y)

    return _op(a.tape, y, (a,), bwd)


def log(a: Node) -> Node:
    av = a.value

    def bwd(g):
        _accumulate(a, g / av)

    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.log(av)  # non-positive input yields nan/-inf; callers
    return _op(a.tape, value, (a,), bwd)  # clip upstream or check finiteness


def clip(a: Node, lo: float, hi: float) -> Node:
    av = a.value
    inside = (av > lo) & (av < hi)

    def bwd(g):
        _accumulate(a, g * inside)

    return _op(a.tape, np.clip(av, lo, hi), (a,), bwd)


def maximum(a: Node, b: Node) -> Node:
    """Elementwise max; ties route the gradient to the first argument."""
    _check_broadcast(a, b, "maximum")
    take_a = a.value >= b.value

    def bwd(g):
        _accumulate(a, _unbroadcast(g * take_a, a.value.shape))
        _accumulate(b, _unbroadcast(g * ~take_a, b.value.shape))

    return _op(a.tape, np.maximum(a.value, b.value), (a, b), bwd)


def softmax_rows(a: Node, temperature: float = 1.0) -> Node:
    if not (temperature > 0.0):
        raise ParameterError(f"temperature must be positive, got {temperature}")
    t = float(temperature)
    y = mx._softmax_rows_kernel(a.value, t)

    def bwd(g):
        gy = g * y
        _accumulate(a, (gy - y * gy.sum(axis=1, keepdims=True)) / t)

    return _op(a.tape, y, (a,), bwd)


def sum_rows(a: Node) -> Node:
    """Row sums as an n x 1 column."""
    n, m = a.value.shape

    def bwd(g):
        _accumulate(a, np.broadcast_to(g, (n, m)))

    return _op(a.tape, a.value.sum(axis=1, keepdims=True), (a,), bwd)


def sum_all(a: Node) -> Node:
    shape = a.value.shape

    def bwd(g):
        _accumulate(a, np.full(shape, g[0, 0]))

    return _op(a.tape, a.value.sum().reshape(1, 1), (a,), bwd)


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


def transpose(a: Node) -> Node:
    def bwd(g):
        _accumulate(a, g.T)

    return _op(a.tape, a.value.T.copy(), (a,), bwd)


def hstack(nodes: list[Node]) -> Node:
    if not nodes:
        raise ParameterError("hstack needs at least one node")
    widths = [n.value.shape[1] for n in nodes]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for node, j0, j1 in zip(nodes, offsets[:-1], offsets[1:]):
            _accumulate(node, g[:, j0:j1])

    value = np.concatenate([n.value for n in nodes], axis=1)
    return _op(nodes[0].tape, value, tuple(nodes), bwd)


def slice_cols(a: Node, j0: int, j1: int) -> Node:
    shape = a.value.shape

    def bwd(g):
        buf = np.zeros(shape)
        buf[:, j0:j1] = g
        _accumulate(a, buf)

    return _op(a.tape, a.value[:, j0:j1].copy(), (a,), bwd)


def square(a: Node) -> Node:
    av = a.value

    def bwd(g):
        _accumulate(a, 2.0 * g * av)

    return _op(a.tape, av * av, (a,), bwd)


def softmax_stack(stack: list[Node]) -> list[Node]:
    """Softmax across a list of same-shape nodes, position by position.

    Composed from maximum/exp/div so the gradient is exact; the max
    subtraction contributes nothing because softmax is shift-invariant.
    """
    if len(stack) == 1:
        only = stack[0]
        return [div(only, only)]  # exactly one, with a gradient path
    top = stack[0]
    for node in stack[1:]:
        top = maximum(top, node)
    exps = [exp(sub(node, top)) for node in stack]
    total = exps[0]
    for node in exps[1:]:
        total = add(total, node)
    return [div(e, total) for e in exps]


def mlp2(tape: Tape, params: ParameterStore, prefix: str, x: Node) -> Node:
    """x @ W1 + b1 -> ReLU -> @ W2 + b2 under the given name prefix."""
    w1 = tape.parameter(params, f"{prefix}.W1")
    b1 = tape.parameter(params, f"{prefix}.b1")
    w2 = tape.parameter(params, f"{prefix}.W2")
    b2 = tape.parameter(params, f"{prefix}.b2")
    hidden = relu(add(matmul(x, w1), b1))
    return add(matmul(hidden, w2), b2)


def mlp2_forward(x, params: ParameterStore, name_prefix: str) -> np.ndarray:
    """Plain-array two-layer MLP; same code path as the differentiable one."""
    tape = Tape()
    return mlp2(tape, params, name_prefix, tape.constant(x)).value


def backward(tape: Tape, loss: Node) -> None:
    """Reverse accumulation from a scalar loss into ParameterStore grads."""
    if loss.value.shape != (1, 1):
        raise ContractError(
            f"backward requires a scalar (1x1) loss, got shape {loss.value.shape}"
        )
    for node in tape._nodes:
        node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(tape._nodes):
        if node.grad is None or node._bwd is None:
            continue
        node._bwd(node.grad)
    for node, store, name in tape._param_leaves:
        if node.grad is not None:
            store.accumulate_grad(name, node.grad)


_KINK_TOL = 1e-7


def finite_diff_check(
    f: Callable[[ParameterStore, Tape], Node],
    params: ParameterStore,
    step: float = 1e-4,
) -> float:
    """Worst-case relative error between backward() and central differences.

    `f` builds a scalar loss node for the given store on the given tape.
    Perturbs one coordinate at a time; a comparison is skipped when either
    probe drives some ReLU pre-activation within 1e-7 of its kink, where
    central differences are invalid. Relative error uses denominator
    max(|analytic gradient|, 1e-8).
    """
    if not (step > 0.0):
        raise ParameterError(f"step must be positive, got {step}")

    tape = Tape()
    loss = f(params, tape)
    if not np.isfinite(loss.value).all():
        raise EvaluationError("loss is non-finite at the base point")
    params.zero_grad()
    backward(tape, loss)
    analytic = {name: params.grad(name).copy() for name in params.names()}
    params.zero_grad()
    base_kink = tape.min_relu_abs

    def probe(name: str, i: int, j: int, delta: float) -> tuple[float, float]:
        value = params.value(name)
        original = value[i, j]
        value[i, j] = original + delta
        try:
            t = Tape()
            out = f(params, t)
            v = float(out.value[0, 0])
            if not math.isfinite(v):
                raise EvaluationError(
                    f"non-finite loss while probing {name}[{i},{j}]"
                )
            return v, t.min_relu_abs
        finally:
            value[i, j] = original

    worst = 0.0
    for name in params.names():
        value = params.value(name)
        grads = analytic[name]
        rows, cols = value.shape
        for i in range(rows):
            for j in range(cols):
                up, kink_up = probe(name, i, j, step)
                down, kink_down = probe(name, i, j, -step)
                if min(base_kink, kink_up, kink_down) < _KINK_TOL:
                    continue  # central difference invalid at a ReLU kink
                numeric = (up - down) / (2.0 * step)
                err = abs(numeric - grads[i, j]) / max(abs(grads[i, j]), 1e-8)
                worst = max(worst, err)
    return worst
