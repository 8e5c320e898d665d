"""Minimal reverse-mode autodiff over dense arrays, with forward jet propagation.

Two mechanisms cooperate here:

* A ``Tape`` records primitive array operations (add, sub, mul, div, scale,
  tanh, sin, cos, matmul, sum, square) eagerly, so that any recorded scalar
  can be differentiated with respect to the trainable parameters by a single
  reverse sweep (``backward``).

* A ``JetBatch`` carries, alongside each value, its derivatives with respect
  to the network inputs (d/dx, d/dt, d2/dx2).  Jet propagation rules are
  themselves expressed as compositions of tape primitives -- e.g. tanh' and
  tanh'' are built from tanh/square/mul/scale nodes -- so the reverse sweep
  only ever needs first-derivative rules per primitive, yet yields parameter
  gradients of residuals that contain second input derivatives.

Everything is float64.  Evaluation is pure given (parameters, inputs), and
reductions run in a fixed order, so identical inputs give bit-identical
outputs and gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class DiffcoreError(Exception):
    """Base class for engine errors."""


class ShapeError(DiffcoreError):
    """Operand shapes are inconsistent for the requested primitive."""


class ContractViolation(DiffcoreError):
    """A documented precondition was violated by the caller."""


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamVector:
    """Flat trainable-parameter storage with an immutable (name, offset, shape) layout."""

    layout: tuple[tuple[str, int, tuple[int, int]], ...]
    values: np.ndarray

    @classmethod
    def from_shapes(cls, shapes: Sequence[tuple[str, tuple[int, int]]]) -> "ParamVector":
        layout = []
        offset = 0
        for name, shape in shapes:
            layout.append((name, offset, tuple(shape)))
            offset += int(np.prod(shape))
        return cls(tuple(layout), np.zeros(offset, dtype=np.float64))

    def __post_init__(self):
        total = sum(int(np.prod(s)) for _, _, s in self.layout)
        if total != self.values.size:
            raise ShapeError(
                f"layout covers {total} entries but values has {self.values.size}"
            )

    def __len__(self) -> int:
        return self.values.size

    def entry(self, name: str) -> tuple[int, tuple[int, int]]:
        for n, off, shape in self.layout:
            if n == name:
                return off, shape
        raise KeyError(name)

    def view(self, name: str) -> np.ndarray:
        off, shape = self.entry(name)
        return self.values[off : off + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values.copy())

    def with_values(self, values: np.ndarray) -> "ParamVector":
        if values.size != self.values.size:
            raise ShapeError("replacement values have wrong length")
        return ParamVector(self.layout, np.asarray(values, dtype=np.float64))


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

# op encoding: (opname, a, b, aux); a/b are operand node ids, -1 when unused.
# aux holds the scale constant or the (offset, size, shape) of a param leaf.

class Tape:
    """Append-only record of primitive operations; node id = position."""

    __slots__ = ("theta", "ops", "vals", "_param_cache")

    def __init__(self, theta: Optional[ParamVector] = None):
        self.theta = theta
        self.ops: list[tuple] = []
        self.vals: list[np.ndarray] = []
        self._param_cache: dict = {}

    def __len__(self) -> int:
        return len(self.ops)

    def val(self, i: int) -> np.ndarray:
        return self.vals[i]

    def _push(self, op: str, a: int, b: int, aux, value: np.ndarray) -> int:
        self.ops.append((op, a, b, aux))
        self.vals.append(value)
        return len(self.ops) - 1

    # -- leaves ------------------------------------------------------------

    def const(self, x) -> int:
        return self._push("const", -1, -1, None, np.asarray(x, dtype=np.float64))

    def param(self, name: str) -> int:
        """Leaf node bound to a named parameter tensor of ``theta``."""
        return self.param_row(name, None)

    def param_row(self, name: str, row: Optional[int]) -> int:
        """Leaf for one contiguous row of a parameter tensor, viewed as a column.

        ``row=None`` binds the whole tensor.  Row leaves let a first layer be
        assembled from per-input-row rank-1 products without a stack primitive.
        """
        if self.theta is None:
            raise ContractViolation("tape was created without a ParamVector")
        key = (name, row)
        if key in self._param_cache:
            return self._param_cache[key]
        off, shape = self.theta.entry(name)
        if row is None:
            size = int(np.prod(shape))
            out_shape = shape
        else:
            if not 0 <= row < shape[0]:
                raise ShapeError(f"row {row} out of range for {name} {shape}")
            size = shape[1]
            off = off + row * size
            out_shape = (size, 1)
        value = self.theta.values[off : off + size].reshape(out_shape).copy()
        node = self._push("param", -1, -1, (off, size, out_shape), value)
        self._param_cache[key] = node
        return node

    # -- elementwise binary -------------------------------------------------

    def _binary(self, op: str, a: int, b: int) -> int:
        va, vb = self.vals[a], self.vals[b]
        if va.shape != vb.shape:  # broadcast path is rare (bias columns)
            try:
                np.broadcast_shapes(va.shape, vb.shape)
            except ValueError as exc:
                raise ShapeError(f"{op}: shapes {va.shape} and {vb.shape}") from exc
        if op == "add":
            value = va + vb
        elif op == "sub":
            value = va - vb
        elif op == "mul":
            value = va * vb
        elif op == "div":
            value = va / vb
        else:  # pragma: no cover
            raise ValueError(op)
        return self._push(op, a, b, None, value)

    def add(self, a: int, b: int) -> int:
        return self._binary("add", a, b)

    def sub(self, a: int, b: int) -> int:
        return self._binary("sub", a, b)

    def mul(self, a: int, b: int) -> int:
        return self._binary("mul", a, b)

    def div(self, a: int, b: int) -> int:
        return self._binary("div", a, b)

    # -- unary ---------------------------------------------------------------

    def scale(self, a: int, c: float) -> int:
        return self._push("scale", a, -1, float(c), self.vals[a] * float(c))

    def tanh(self, a: int) -> int:
        return self._push("tanh", a, -1, None, np.tanh(self.vals[a]))

    def sin(self, a: int) -> int:
        return self._push("sin", a, -1, None, np.sin(self.vals[a]))

    def cos(self, a: int) -> int:
        return self._push("cos", a, -1, None, np.cos(self.vals[a]))

    def square(self, a: int) -> int:
        v = self.vals[a]
        return self._push("square", a, -1, None, v * v)

    def sum(self, a: int) -> int:
        return self._push("sum", a, -1, self.vals[a].shape, np.asarray(self.vals[a].sum()))

    def matmul(self, a: int, b: int) -> int:
        va, vb = self.vals[a], self.vals[b]
        if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
            raise ShapeError(f"matmul: shapes {va.shape} and {vb.shape}")
        return self._push("matmul", a, b, None, va @ vb)

    # -- replay ---------------------------------------------------------------

    def replay(self, theta: Optional[ParamVector] = None) -> list[np.ndarray]:
        """Recompute all node values; with the same theta this is bit-identical."""
        th = self.theta if theta is None else theta
        vals: list[np.ndarray] = []
        for op, a, b, aux in self.ops:
            if op == "const":
                vals.append(self.vals[len(vals)])
            elif op == "param":
                off, size, shape = aux
                vals.append(th.values[off : off + size].reshape(shape).copy())
            elif op == "add":
                vals.append(vals[a] + vals[b])
            elif op == "sub":
                vals.append(vals[a] - vals[b])
            elif op == "mul":
                vals.append(vals[a] * vals[b])
            elif op == "div":
                vals.append(vals[a] / vals[b])
            elif op == "scale":
                vals.append(vals[a] * aux)
            elif op == "tanh":
                vals.append(np.tanh(vals[a]))
            elif op == "sin":
                vals.append(np.sin(vals[a]))
            elif op == "cos":
                vals.append(np.cos(vals[a]))
            elif op == "square":
                vals.append(vals[a] * vals[a])
            elif op == "sum":
                vals.append(np.asarray(vals[a].sum()))
            elif op == "matmul":
                vals.append(vals[a] @ vals[b])
            else:  # pragma: no cover
                raise ValueError(op)
        return vals


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape: Tape, loss_index: int) -> ParamVector:
    """Reverse sweep from a recorded scalar; returns dL/dtheta in theta's layout."""
    if tape.theta is None:
        raise ContractViolation("tape has no parameters to differentiate")
    if tape.vals[loss_index].size != 1:
        raise ContractViolation("loss node must be scalar-valued")

    grad = np.zeros(len(tape.theta), dtype=np.float64)
    adj: list[Optional[np.ndarray]] = [None] * (loss_index + 1)
    adj[loss_index] = np.ones_like(tape.vals[loss_index])

    def acc(i: int, g: np.ndarray) -> None:
        # never mutate adjoints in place: early entries may alias upstream arrays
        adj[i] = g if adj[i] is None else adj[i] + g

    for i in range(loss_index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        op, a, b, aux = tape.ops[i]
        if op == "const":
            continue
        if op == "param":
            off, size, _ = aux
            grad[off : off + size] += g.ravel()
        elif op == "add":
            acc(a, _unbroadcast(g, tape.vals[a].shape))
            acc(b, _unbroadcast(g, tape.vals[b].shape))
        elif op == "sub":
            acc(a, _unbroadcast(g, tape.vals[a].shape))
            acc(b, _unbroadcast(-g, tape.vals[b].shape))
        elif op == "mul":
            acc(a, _unbroadcast(g * tape.vals[b], tape.vals[a].shape))
            acc(b, _unbroadcast(g * tape.vals[a], tape.vals[b].shape))
        elif op == "div":
            vb = tape.vals[b]
            acc(a, _unbroadcast(g / vb, tape.vals[a].shape))
            acc(b, _unbroadcast(-g * tape.vals[i] / vb, vb.shape))
        elif op == "scale":
            acc(a, g * aux)
        elif op == "tanh":
            y = tape.vals[i]
            acc(a, g * (1.0 - y * y))
        elif op == "sin":
            acc(a, g * np.cos(tape.vals[a]))
        elif op == "cos":
            acc(a, -g * np.sin(tape.vals[a]))
        elif op == "square":
            acc(a, 2.0 * tape.vals[a] * g)
        elif op == "sum":
            acc(a, np.broadcast_to(g, aux).copy())
        elif op == "matmul":
            acc(a, g @ tape.vals[b].T)
            acc(b, tape.vals[a].T @ g)
        else:  # pragma: no cover
            raise ValueError(op)
        adj[i] = None  # free memory as we go
    return ParamVector(tape.theta.layout, grad)


# A differentiable loss is a callable theta -> (tape, scalar node id).
LossFn = Callable[[ParamVector], tuple[Tape, int]]


def gradient(loss_fn: LossFn, theta: ParamVector) -> np.ndarray:
    tape, loss = loss_fn(theta)
    return backward(tape, loss).values


def hvp(
    loss_fn: Optional[LossFn],
    theta: ParamVector,
    v: np.ndarray,
    eps: Optional[float] = None,
    grad_fn: Optional[Callable[[ParamVector], np.ndarray]] = None,
) -> np.ndarray:
    """Hessian-vector product by central finite differences of exact gradients.

    Returns (grad L(theta + eps*vhat) - grad L(theta - eps*vhat)) * |v| / (2 eps),
    which is H v with an O(eps^2) error.  The default step scales with the
    parameter magnitude: eps = 1e-3 * (1 + max|theta|).  Gradients come from
    the recorded tape of ``loss_fn`` unless a precomputed ``grad_fn`` is given
    (e.g. a chunked evaluator for large collocation sets).
    """
    v = np.asarray(v, dtype=np.float64)
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        raise ContractViolation("hvp direction must be nonzero")
    if eps is None:
        theta_inf = float(np.max(np.abs(theta.values))) if len(theta) else 0.0
        eps = 1e-3 * (1.0 + theta_inf)
    if eps <= 0.0:
        raise ContractViolation("hvp step must be positive")
    if grad_fn is None:
        if loss_fn is None:
            raise ContractViolation("hvp needs a loss_fn or a grad_fn")
        grad_fn = lambda th: gradient(loss_fn, th)  # noqa: E731
    vhat = v / vnorm
    gp = grad_fn(theta.with_values(theta.values + eps * vhat))
    gm = grad_fn(theta.with_values(theta.values - eps * vhat))
    return (gp - gm) * (vnorm / (2.0 * eps))


# --------------------------------------------------------------------------
# Jets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class JetBatch:
    """Tape-resident bundle of a value and its input derivatives.

    Channels are 2-D arrays of shape (rows, n): network inputs and outputs use
    rows=1, hidden activations rows=width.  ``d_dx`` is the derivative with
    respect to the spatial input the batch was seeded with (the Eulerian x or
    the Lagrangian label), ``d_dt`` with respect to time, ``d_dxx`` the second
    spatial derivative.
    """

    tape: Tape
    value: int
    d_dx: int
    d_dt: int
    d_dxx: int

    @property
    def n(self) -> int:
        return self.tape.vals[self.value].shape[-1]

    def channel_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        v = self.tape.vals
        return v[self.value], v[self.d_dx], v[self.d_dt], v[self.d_dxx]


def seed_inputs(tape: Tape, x, t) -> tuple[JetBatch, JetBatch]:
    """Seed coordinate batches: x-jet has d_dx = 1, t-jet has d_dt = 1."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    t = np.asarray(t, dtype=np.float64).reshape(1, -1)
    if x.shape != t.shape:
        raise ShapeError(f"seed_inputs: x has {x.shape[1]} samples, t has {t.shape[1]}")
    ones = tape.const(np.ones_like(x))
    zeros = tape.const(np.zeros_like(x))
    x_jet = JetBatch(tape, tape.const(x), ones, zeros, zeros)
    t_jet = JetBatch(tape, tape.const(t), zeros, ones, zeros)
    return x_jet, t_jet


def jet_const(tape: Tape, value) -> JetBatch:
    value = np.asarray(value, dtype=np.float64)
    zeros = tape.const(np.zeros_like(value))
    return JetBatch(tape, tape.const(value), zeros, zeros, zeros)


def _same_tape(*jets: JetBatch) -> Tape:
    tape = jets[0].tape
    if any(j.tape is not tape for j in jets):
        raise ContractViolation("jets must live on the same tape")
    if len({j.n for j in jets}) > 1:
        raise ShapeError(f"jet batch sizes differ: {[j.n for j in jets]}")
    return tape


def jet_add(u: JetBatch, v: JetBatch) -> JetBatch:
    tp = _same_tape(u, v)
    return JetBatch(
        tp,
        tp.add(u.value, v.value),
        tp.add(u.d_dx, v.d_dx),
        tp.add(u.d_dt, v.d_dt),
        tp.add(u.d_dxx, v.d_dxx),
    )


def jet_sub(u: JetBatch, v: JetBatch) -> JetBatch:
    tp = _same_tape(u, v)
    return JetBatch(
        tp,
        tp.sub(u.value, v.value),
        tp.sub(u.d_dx, v.d_dx),
        tp.sub(u.d_dt, v.d_dt),
        tp.sub(u.d_dxx, v.d_dxx),
    )


def jet_scale(u: JetBatch, c: float) -> JetBatch:
    tp = u.tape
    return JetBatch(
        tp,
        tp.scale(u.value, c),
        tp.scale(u.d_dx, c),
        tp.scale(u.d_dt, c),
        tp.scale(u.d_dxx, c),
    )


def jet_mul(u: JetBatch, v: JetBatch) -> JetBatch:
    """Product rule through second order: (uv)_xx = u_xx v + 2 u_x v_x + u v_xx."""
    tp = _same_tape(u, v)
    value = tp.mul(u.value, v.value)
    d_dx = tp.add(tp.mul(u.d_dx, v.value), tp.mul(u.value, v.d_dx))
    d_dt = tp.add(tp.mul(u.d_dt, v.value), tp.mul(u.value, v.d_dt))
    cross = tp.scale(tp.mul(u.d_dx, v.d_dx), 2.0)
    d_dxx = tp.add(
        tp.add(tp.mul(u.d_dxx, v.value), cross),
        tp.mul(u.value, v.d_dxx),
    )
    return JetBatch(tp, value, d_dx, d_dt, d_dxx)


def jet_div(u: JetBatch, v: JetBatch) -> JetBatch:
    """Quotient rule via q = u/v: q_x = (u_x - q v_x)/v, q_xx = (u_xx - 2 q_x v_x - q v_xx)/v."""
    tp = _same_tape(u, v)
    q = tp.div(u.value, v.value)
    q_x = tp.div(tp.sub(u.d_dx, tp.mul(q, v.d_dx)), v.value)
    q_t = tp.div(tp.sub(u.d_dt, tp.mul(q, v.d_dt)), v.value)
    q_xx = tp.div(
        tp.sub(
            tp.sub(u.d_dxx, tp.scale(tp.mul(q_x, v.d_dx), 2.0)),
            tp.mul(q, v.d_dxx),
        ),
        v.value,
    )
    return JetBatch(tp, q, q_x, q_t, q_xx)


def jet_square(u: JetBatch) -> JetBatch:
    tp = u.tape
    value = tp.square(u.value)
    d_dx = tp.scale(tp.mul(u.value, u.d_dx), 2.0)
    d_dt = tp.scale(tp.mul(u.value, u.d_dt), 2.0)
    d_dxx = tp.scale(tp.add(tp.square(u.d_dx), tp.mul(u.value, u.d_dxx)), 2.0)
    return JetBatch(tp, value, d_dx, d_dt, d_dxx)


def jet_tanh(u: JetBatch) -> JetBatch:
    """tanh through second order, with phi' = 1 - phi^2 and phi'' = -2 phi (1 - phi^2)
    built from tape primitives so reverse mode sees only first-order rules."""
    tp = u.tape
    phi = tp.tanh(u.value)
    one = tp.const(np.ones_like(tp.vals[phi]))
    dphi = tp.sub(one, tp.square(phi))
    d_dx = tp.mul(dphi, u.d_dx)
    d_dt = tp.mul(dphi, u.d_dt)
    ddphi = tp.scale(tp.mul(phi, dphi), -2.0)
    d_dxx = tp.add(tp.mul(ddphi, tp.square(u.d_dx)), tp.mul(dphi, u.d_dxx))
    return JetBatch(tp, phi, d_dx, d_dt, d_dxx)


def jet_sin(u: JetBatch) -> JetBatch:
    tp = u.tape
    s = tp.sin(u.value)
    c = tp.cos(u.value)
    d_dx = tp.mul(c, u.d_dx)
    d_dt = tp.mul(c, u.d_dt)
    d_dxx = tp.sub(tp.mul(c, u.d_dxx), tp.mul(s, tp.square(u.d_dx)))
    return JetBatch(tp, s, d_dx, d_dt, d_dxx)


def jet_cos(u: JetBatch) -> JetBatch:
    tp = u.tape
    s = tp.sin(u.value)
    c = tp.cos(u.value)
    d_dx = tp.scale(tp.mul(s, u.d_dx), -1.0)
    d_dt = tp.scale(tp.mul(s, u.d_dt), -1.0)
    d_dxx = tp.scale(tp.add(tp.mul(c, tp.square(u.d_dx)), tp.mul(s, u.d_dxx)), -1.0)
    return JetBatch(tp, c, d_dx, d_dt, d_dxx)


def jet_matmul(w: int, u: JetBatch) -> JetBatch:
    """W @ jet for a parameter or constant matrix W (constant in x and t)."""
    tp = u.tape
    return JetBatch(
        tp,
        tp.matmul(w, u.value),
        tp.matmul(w, u.d_dx),
        tp.matmul(w, u.d_dt),
        tp.matmul(w, u.d_dxx),
    )


def jet_rowmul(w: int, u: JetBatch) -> JetBatch:
    """Broadcast multiply a (width, 1) column by a (1, n) jet: a rank-1 layer term."""
    tp = u.tape
    return JetBatch(
        tp,
        tp.mul(w, u.value),
        tp.mul(w, u.d_dx),
        tp.mul(w, u.d_dt),
        tp.mul(w, u.d_dxx),
    )


def jet_bias(u: JetBatch, b: int) -> JetBatch:
    """Add a bias column to the value channel; derivative channels are untouched."""
    tp = u.tape
    return JetBatch(tp, tp.add(u.value, b), u.d_dx, u.d_dt, u.d_dxx)


_JET_OPS = {
    "add": jet_add,
    "sub": jet_sub,
    "mul": jet_mul,
    "div": jet_div,
    "square": jet_square,
    "tanh": jet_tanh,
    "sin": jet_sin,
    "cos": jet_cos,
    "scale": jet_scale,
}


def jet_apply(op: str, *inputs, c: Optional[float] = None) -> JetBatch:
    """Apply a named primitive to one or two jets (``scale`` takes the constant ``c``)."""
    if op not in _JET_OPS:
        raise ContractViolation(f"unknown jet primitive {op!r}")
    if op == "scale":
        if c is None:
            raise ContractViolation("scale needs the constant c")
        return jet_scale(inputs[0], c)
    return _JET_OPS[op](*inputs)
