#!/usr/bin/env python3
"""
Minimal reverse-mode automatic differentiation over numpy arrays.

A Tape records every operation as a Node holding its value, its parents
and a vector-Jacobian product. backward() walks the tape in reverse
creation order (a valid topological order) and accumulates gradients into
the named parameter leaves.

    tape = Tape()
    w = tape.param('w', np.ones((3, 1), np.float32))
    x = tape.constant(np.ones((4, 3), np.float32))
    loss = mean(square(x @ w))
    grads = backward(tape, loss)      # {'w': ...}
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mopa_pd.errors import ContractViolation

logger = logging.getLogger(__name__)

ParamSet = Dict[str, np.ndarray]
Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
ArrayLike = Union['Node', np.ndarray, float, int]


class Node:
    __slots__ = ('tape', 'value', 'parents', 'vjp', 'op', 'name')
    # ndarray <op> Node must dispatch to Node's reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: 'Tape', value: np.ndarray, parents: Tuple['Node', ...] = (),
                 vjp: Optional[Vjp] = None, op: str = 'const', name: Optional[str] = None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"

    def __add__(self, other: ArrayLike) -> 'Node':
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> 'Node':
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> 'Node':
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> 'Node':
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> 'Node':
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> 'Node':
        return mul(other, self)

    def __neg__(self) -> 'Node':
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> 'Node':
        return matmul(self, other)


class Tape:
    """Operation recorder. dtype float32 for training, float64 for gradient checks."""

    def __init__(self, dtype=np.float32, check_finite: bool = True):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.nodes: List[Node] = []
        self.params: Dict[str, Node] = {}

    def constant(self, value) -> Node:
        node = Node(self, np.asarray(value, dtype=self.dtype))
        self.nodes.append(node)
        return node

    def param(self, name: str, value: np.ndarray) -> Node:
        """Register a named leaf; the same name on one tape returns the same node."""
        if name in self.params:
            return self.params[name]
        node = Node(self, np.asarray(value, dtype=self.dtype), op='param', name=name)
        self.nodes.append(node)
        self.params[name] = node
        return node

    def params_from(self, params: ParamSet, prefix: str = '') -> Dict[str, Node]:
        return {name: self.param(prefix + name, value) for name, value in params.items()}

    def record(self, op: str, value: np.ndarray, parents: Tuple[Node, ...], vjp: Vjp) -> Node:
        value = np.asarray(value, dtype=self.dtype)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite output from op '{op}'")
        node = Node(self, value, parents, vjp, op)
        self.nodes.append(node)
        return node


def _tape_of(*xs: ArrayLike) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ContractViolation("at least one operand must be a tape node")


def lift(tape: Tape, x: ArrayLike) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -------------------------------------------------------------------------
# Elementwise and linear algebra
# -------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Node:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    return tape.record('add', a.value + b.value, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Node:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    return tape.record('sub', a.value - b.value, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Node:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    return tape.record('mul', a.value * b.value, (a, b),
                       lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a: ArrayLike, b: ArrayLike) -> Node:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return tape.record('matmul', a.value @ b.value, (a, b),
                       lambda g: (g @ b.value.T, a.value.T @ g))


def relu(x: Node) -> Node:
    mask = x.value > 0
    return x.tape.record('relu', np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Node, slope: float = 0.01) -> Node:
    factor = np.where(x.value > 0, 1.0, slope).astype(x.value.dtype)
    return x.tape.record('leaky_relu', x.value * factor, (x,), lambda g: (g * factor,))


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return x.tape.record('tanh', y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x: Node) -> Node:
    with np.errstate(over='ignore'):
        y = np.exp(x.value)
    return x.tape.record('exp', y, (x,), lambda g: (g * y,))


def log(x: Node) -> Node:
    with np.errstate(divide='ignore', invalid='ignore'):
        y = np.log(x.value)
    return x.tape.record('log', y, (x,), lambda g: (g / x.value,))


def softplus(x: Node) -> Node:
    y = np.logaddexp(0.0, x.value)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return x.tape.record('softplus', y, (x,), lambda g: (g * sig,))


def square(x: Node) -> Node:
    return x.tape.record('square', x.value * x.value, (x,), lambda g: (2.0 * g * x.value,))


def clip(x: Node, lo: float, hi: float) -> Node:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    inside = (x.value >= lo) & (x.value <= hi)
    return x.tape.record('clip', np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def minimum(a: Node, b: Node) -> Node:
    take_a = a.value <= b.value
    return a.tape.record(
        'minimum', np.where(take_a, a.value, b.value), (a, b),
        lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)),
    )


# -------------------------------------------------------------------------
# Reductions and shape
# -------------------------------------------------------------------------

def sum(x: Node, axis: Optional[int] = None, keepdims: bool = False) -> Node:  # noqa: A001
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape.record('sum', np.sum(x.value, axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x: Node, axis: Optional[int] = None, keepdims: bool = False) -> Node:
    count = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Node, shape: Tuple[int, ...]) -> Node:
    original = x.shape
    return x.tape.record('reshape', x.value.reshape(shape), (x,), lambda g: (g.reshape(original),))


def transpose(x: Node, axes: Tuple[int, ...]) -> Node:
    inverse = tuple(np.argsort(axes))
    return x.tape.record('transpose', np.transpose(x.value, axes), (x,),
                         lambda g: (np.transpose(g, inverse),))


def columns(x: Node, start: int, stop: int) -> Node:
    """x[:, start:stop] for a 2-D node."""
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[:, start:stop] = g
        return (out,)

    return x.tape.record('columns', x.value[:, start:stop], (x,), vjp)


def concat(nodes: Sequence[ArrayLike], axis: int = 1) -> Node:
    tape = _tape_of(*nodes)
    nodes = [lift(tape, n) for n in nodes]
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(nodes))
        )

    return tape.record('concat', np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), vjp)


# -------------------------------------------------------------------------
# Convolution
# -------------------------------------------------------------------------

def conv2d(x: ArrayLike, w: Node, b: Node, stride: int = 1, padding: int = 0) -> Node:
    """
    2-D cross-correlation, NCHW layout.

    x: (N, C, H, W), w: (O, C, kh, kw), b: (O,)
    """
    tape = _tape_of(x, w, b)
    x = lift(tape, x)
    if x.value.ndim != 4 or w.value.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ContractViolation(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    _, _, kh, kw = w.shape
    p = padding
    xp = np.pad(x.value, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    out = np.einsum('nchwij,ocij->nohw', windows, w.value, optimize=True) + b.value[None, :, None, None]

    def vjp(g):
        dw = np.einsum('nohw,nchwij->ocij', g, windows, optimize=True)
        db = g.sum(axis=(0, 2, 3))
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += np.einsum(
                    'nohw,oc->nchw', g, w.value[:, :, i, j], optimize=True
                )
        dx = dxp[:, :, p:dxp.shape[2] - p, p:dxp.shape[3] - p]
        return dx, dw, db

    return tape.record('conv2d', out, (x, w, b), vjp)


# -------------------------------------------------------------------------
# Backward pass
# -------------------------------------------------------------------------

def backward(tape: Tape, loss: Node) -> ParamSet:
    """
    Gradients of a scalar loss w.r.t. every parameter registered on the tape.

    Parameters the loss does not depend on get a zero gradient.
    """
    if loss.tape is not tape:
        raise ContractViolation("loss node belongs to a different tape")
    if loss.value.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    grads: ParamSet = {name: np.zeros_like(node.value) for name, node in tape.params.items()}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.op == 'param':
            grads[node.name] += g
            continue
        if node.vjp is None:
            continue
        for parent, parent_grad in zip(node.parents, node.vjp(g)):
            if parent_grad is None:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad
    if tape.check_finite:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for '{name}'")
    return {name: g.astype(tape.dtype, copy=False) for name, g in grads.items()}


def strip_prefix(grads: ParamSet, prefix: str) -> ParamSet:
    """Select the gradients of one network and drop its name prefix."""
    return {name[len(prefix):]: g for name, g in grads.items() if name.startswith(prefix)}
