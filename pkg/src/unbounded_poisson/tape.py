"""Reverse-mode automatic differentiation over an explicit computation tape.

Values on the tape are float64 numpy arrays (a scalar is a 0-d array), so one
tape node can carry the same elementary operation applied elementwise to a
whole batch of points.  Nodes are appended in evaluation order, which makes
the node list a topological order for free; `backward` is a single reverse
sweep over that list.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "TapeScalar",
    "TapeMismatchError",
    "UnsupportedPrimitiveError",
    "backward",
    "tape_record",
]


class TapeMismatchError(RuntimeError):
    """Raised when scalars from two distinct tapes are combined."""


class UnsupportedPrimitiveError(RuntimeError):
    """Raised when a computation requests a primitive outside the supported set."""


def _asarray(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class _Node:
    __slots__ = ("op", "parents", "partials", "value", "aux")

    def __init__(self, op, parents, partials, value, aux=None):
        self.op = op              # operation kind, e.g. "mul", "linear"
        self.parents = parents    # tuple of parent node indices
        self.partials = partials  # local d(value)/d(parent) arrays for elementwise ops
        self.value = value
        self.aux = aux            # extra context for structured ops


class Tape:
    """Append-only record of elementary operations.

    A tape is single-writer: concurrent recording must use one tape per
    worker.  `reset` truncates the record so the storage can be reused
    between optimization steps.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes.clear()

    # -- recording ---------------------------------------------------------

    def _append(self, op, parents, partials, value, aux=None) -> "TapeScalar":
        self.nodes.append(_Node(op, parents, partials, value, aux))
        return TapeScalar(self, len(self.nodes) - 1)

    def leaf(self, value) -> "TapeScalar":
        """Register an independent variable (e.g. a parameter array)."""
        return self._append("leaf", (), (), _asarray(value))

    def constant(self, value) -> "TapeScalar":
        """Register a value that never receives a gradient."""
        return self._append("const", (), (), _asarray(value))

    # -- invariant support ---------------------------------------------------

    def replay(self) -> bool:
        """Recompute every non-leaf value from its parents; True if all match bitwise."""
        for node in self.nodes:
            fwd = _FORWARD.get(node.op)
            if fwd is None:
                continue
            recomputed = fwd(self, node)
            if not np.array_equal(recomputed, node.value):
                return False
        return True


class TapeScalar:
    """Handle to one tape node; supports the closed primitive set.

    Supported primitives: +, -, *, /, negation, integer powers, tanh, exp,
    sin, cos, sigmoid and silu.  Anything else raises
    UnsupportedPrimitiveError (or TypeError for non-integer powers).
    """

    __slots__ = ("tape", "idx")

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"TapeScalar(node={self.idx}, value={self.value!r})"

    # -- coercion ------------------------------------------------------------

    def _coerce(self, other) -> "TapeScalar":
        if isinstance(other, TapeScalar):
            if other.tape is not self.tape:
                raise TapeMismatchError(
                    "cannot combine scalars recorded on two different tapes"
                )
            return other
        return self.tape.constant(other)

    # -- arithmetic: exactly one node per elementary operation ----------------

    def __add__(self, other):
        o = self._coerce(other)
        a, b = self.value, o.value
        ones = np.ones(np.broadcast_shapes(a.shape, b.shape))
        return self.tape._append("add", (self.idx, o.idx), (ones, ones), a + b)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        a, b = self.value, o.value
        ones = np.ones(np.broadcast_shapes(a.shape, b.shape))
        return self.tape._append("sub", (self.idx, o.idx), (ones, -ones), a - b)

    def __rsub__(self, other):
        o = self._coerce(other)
        return o.__sub__(self)

    def __mul__(self, other):
        o = self._coerce(other)
        a, b = self.value, o.value
        return self.tape._append("mul", (self.idx, o.idx), (b, a), a * b)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        a, b = self.value, o.value
        inv = 1.0 / b
        return self.tape._append(
            "div", (self.idx, o.idx), (inv, -a * inv * inv), a * inv
        )

    def __rtruediv__(self, other):
        o = self._coerce(other)
        return o.__truediv__(self)

    def __neg__(self):
        a = self.value
        return self.tape._append("neg", (self.idx,), (-np.ones_like(a),), -a)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, np.integer)):
            raise UnsupportedPrimitiveError(
                f"power-by-integer is the only supported power; got exponent {exponent!r}"
            )
        n = int(exponent)
        a = self.value
        val = a ** n
        grad = n * a ** (n - 1) if n != 0 else np.zeros_like(a)
        return self.tape._append("powi", (self.idx,), (grad,), val, aux=n)

    # -- unary transcendental primitives --------------------------------------

    def tanh(self):
        a = self.value
        t = np.tanh(a)
        return self.tape._append("tanh", (self.idx,), (1.0 - t * t,), t)

    def exp(self):
        e = np.exp(self.value)
        return self.tape._append("exp", (self.idx,), (e,), e)

    def sin(self):
        a = self.value
        return self.tape._append("sin", (self.idx,), (np.cos(a),), np.sin(a))

    def cos(self):
        a = self.value
        return self.tape._append("cos", (self.idx,), (-np.sin(a),), np.cos(a))

    def sigmoid(self):
        s = _stable_sigmoid(self.value)
        return self.tape._append("sigmoid", (self.idx,), (s * (1.0 - s),), s)

    def silu(self):
        return self * self.sigmoid()

    # -- shape/reduction helpers ----------------------------------------------

    def sum(self):
        a = self.value
        return self.tape._append("sum", (self.idx,), (), _asarray(a.sum()), aux=a.shape)

    def mean(self):
        a = self.value
        return self.tape._append(
            "mean", (self.idx,), (), _asarray(a.mean()), aux=(a.shape, a.size)
        )

    def sum_axis(self, axis: int):
        a = self.value
        return self.tape._append(
            "sum_axis", (self.idx,), (), a.sum(axis=axis), aux=(a.shape, axis)
        )

    def reshape(self, shape):
        a = self.value
        return self.tape._append(
            "reshape", (self.idx,), (), a.reshape(shape), aux=a.shape
        )

    def slice_rows(self, lo: int, hi: int):
        a = self.value
        return self.tape._append(
            "slice_rows", (self.idx,), (), a[lo:hi], aux=(a.shape, lo, hi)
        )


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tape_record(tape: Tape, op: str, parents: Sequence[TapeScalar],
                partials, value, aux=None) -> TapeScalar:
    """Append one node with explicit local partials (the raw recording primitive)."""
    for p in parents:
        if p.tape is not tape:
            raise TapeMismatchError("parent recorded on a different tape")
    return tape._append(op, tuple(p.idx for p in parents),
                        tuple(_asarray(p) for p in partials), _asarray(value), aux)


# ---------------------------------------------------------------------------
# structured (non-elementwise) operations
# ---------------------------------------------------------------------------

def linear(x: TapeScalar, w: TapeScalar, b: TapeScalar | None = None) -> TapeScalar:
    """x @ w.T (+ b): one dense layer map. x is (n, fan_in), w is (fan_out, fan_in)."""
    tape = x.tape
    if w.tape is not tape or (b is not None and b.tape is not tape):
        raise TapeMismatchError("linear operands recorded on different tapes")
    val = x.value @ w.value.T
    if b is not None:
        val = val + b.value
        return tape._append("linear", (x.idx, w.idx, b.idx), (), val)
    return tape._append("linear", (x.idx, w.idx), (), val)


def matmul_nt(a: TapeScalar, b: TapeScalar) -> TapeScalar:
    """Plain a @ b for 2-d operands."""
    tape = a.tape
    if b.tape is not tape:
        raise TapeMismatchError("matmul operands recorded on different tapes")
    return tape._append("matmul", (a.idx, b.idx), (), a.value @ b.value)


# backward rules for structured ops: op -> fn(node, grad, tape) -> per-parent grads
_STRUCTURED_BACKWARD: dict[str, Callable] = {}
# forward recomputation rules (for the replay invariant)
_FORWARD: dict[str, Callable] = {}


def register_op(name: str, backward_fn: Callable, forward_fn: Callable | None = None):
    """Register a structured tape op (used by the network layer kernels)."""
    _STRUCTURED_BACKWARD[name] = backward_fn
    if forward_fn is not None:
        _FORWARD[name] = forward_fn


def _linear_backward(node, grad, tape):
    xi = node.parents[0]
    x = tape.nodes[xi].value
    w = tape.nodes[node.parents[1]].value
    out = [grad @ w, grad.T @ x]
    if len(node.parents) == 3:
        out.append(grad.sum(axis=0))
    return out


def _matmul_backward(node, grad, tape):
    a = tape.nodes[node.parents[0]].value
    b = tape.nodes[node.parents[1]].value
    return [grad @ b.T, a.T @ grad]


register_op("linear", _linear_backward,
            lambda tape, node: (tape.nodes[node.parents[0]].value
                                @ tape.nodes[node.parents[1]].value.T
                                + (tape.nodes[node.parents[2]].value
                                   if len(node.parents) == 3 else 0.0)))
register_op("matmul", _matmul_backward,
            lambda tape, node: tape.nodes[node.parents[0]].value
            @ tape.nodes[node.parents[1]].value)


# elementwise forward recomputation rules (replay support)
def _p(tape, node, i):
    return tape.nodes[node.parents[i]].value


_FORWARD.update({
    "add": lambda tape, n: _p(tape, n, 0) + _p(tape, n, 1),
    "sub": lambda tape, n: _p(tape, n, 0) - _p(tape, n, 1),
    "mul": lambda tape, n: _p(tape, n, 0) * _p(tape, n, 1),
    "div": lambda tape, n: _p(tape, n, 0) / _p(tape, n, 1),
    "neg": lambda tape, n: -_p(tape, n, 0),
    "powi": lambda tape, n: _p(tape, n, 0) ** n.aux,
    "tanh": lambda tape, n: np.tanh(_p(tape, n, 0)),
    "exp": lambda tape, n: np.exp(_p(tape, n, 0)),
    "sin": lambda tape, n: np.sin(_p(tape, n, 0)),
    "cos": lambda tape, n: np.cos(_p(tape, n, 0)),
    "sigmoid": lambda tape, n: _stable_sigmoid(_p(tape, n, 0)),
    "sum": lambda tape, n: _asarray(_p(tape, n, 0).sum()),
    "mean": lambda tape, n: _asarray(_p(tape, n, 0).mean()),
    "sum_axis": lambda tape, n: _p(tape, n, 0).sum(axis=n.aux[1]),
    "reshape": lambda tape, n: _p(tape, n, 0).reshape(n.value.shape),
    "slice_rows": lambda tape, n: _p(tape, n, 0)[n.aux[1]:n.aux[2]],
})


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(root: TapeScalar, leaves: Sequence[TapeScalar]) -> list[np.ndarray]:
    """Reverse accumulation of d(root)/d(leaf) for every leaf.

    The root must be scalar-valued.  Leaves with no path to the root get a
    zero gradient of their own shape.
    """
    tape = root.tape
    for leaf in leaves:
        if leaf.tape is not tape:
            raise TapeMismatchError("leaf recorded on a different tape than the root")
    if root.value.size != 1:
        raise ValueError("backward root must be scalar-valued")

    nodes = tape.nodes
    grads: dict[int, np.ndarray] = {root.idx: np.ones_like(nodes[root.idx].value)}

    for idx in range(root.idx, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = nodes[idx]
        if not node.parents:
            grads[idx] = g  # keep leaf/const grads (repush for collection below)
            continue
        if node.partials:
            for pidx, part in zip(node.parents, node.partials):
                contrib = _unbroadcast(g * part, nodes[pidx].value.shape)
                if pidx in grads:
                    grads[pidx] = grads[pidx] + contrib
                else:
                    grads[pidx] = contrib
        else:
            rule = _STRUCTURED_BACKWARD.get(node.op)
            if rule is not None:
                for pidx, contrib in zip(node.parents, rule(node, g, tape)):
                    if pidx in grads:
                        grads[pidx] = grads[pidx] + contrib
                    else:
                        grads[pidx] = contrib
            elif node.op in ("sum", "mean"):
                scale = 1.0 if node.op == "sum" else 1.0 / node.aux[1]
                shape = node.aux if node.op == "sum" else node.aux[0]
                contrib = np.full(shape, float(g) * scale)
                pidx = node.parents[0]
                grads[pidx] = grads.get(pidx, 0.0) + contrib
            elif node.op == "sum_axis":
                shape, axis = node.aux
                contrib = np.broadcast_to(np.expand_dims(g, axis), shape)
                pidx = node.parents[0]
                if pidx in grads:
                    grads[pidx] = grads[pidx] + contrib
                else:
                    grads[pidx] = contrib.copy()
            elif node.op == "reshape":
                pidx = node.parents[0]
                contrib = g.reshape(node.aux)
                grads[pidx] = grads.get(pidx, 0.0) + contrib
            elif node.op == "slice_rows":
                shape, lo, hi = node.aux
                pidx = node.parents[0]
                if pidx not in grads:
                    grads[pidx] = np.zeros(shape)
                elif np.isscalar(grads[pidx]) or grads[pidx].shape != shape:
                    grads[pidx] = np.zeros(shape) + grads[pidx]
                grads[pidx][lo:hi] += g
            else:
                raise UnsupportedPrimitiveError(
                    f"no backward rule registered for op {node.op!r}"
                )

    return [
        np.asarray(grads.get(leaf.idx, np.zeros_like(nodes[leaf.idx].value)))
        for leaf in leaves
    ]
