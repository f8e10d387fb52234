"""Reverse-mode automatic differentiation over real numpy arrays.

A Tape records every operation as a node (value, operation tag, parent
indices, local vector-Jacobian callbacks). Nodes are appended in execution
order, so the node list is already a topological order; the backward pass
walks it once in reverse. Complex quantities are handled as explicit
real/imaginary pairs (CVar), so every differentiated value is real.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf, expit as _sigmoid

Array = np.ndarray


class GraphError(RuntimeError):
    """Raised for structural problems (NaN forward values, bad shapes)."""


class Node:
    __slots__ = ("value", "tag", "parents", "vjps")

    def __init__(self, value: Array, tag: str, parents: tuple[int, ...],
                 vjps: tuple[Callable[[Array], Array], ...]):
        self.value = value
        self.tag = tag
        self.parents = parents
        self.vjps = vjps


class Tape:
    """Computation record. Append-only; index order is topological order."""

    def __init__(self, check_nan: bool = False):
        self.nodes: list[Node] = []
        self.check_nan = check_nan

    def _push(self, value, tag, parents=(), vjps=()) -> "Var":
        value = np.asarray(value, dtype=float)
        if self.check_nan and not np.all(np.isfinite(value)):
            raise GraphError(f"non-finite value in forward pass at op '{tag}'")
        self.nodes.append(Node(value, tag, parents, vjps))
        return Var(self, len(self.nodes) - 1)

    def var(self, value, tag: str = "input") -> "Var":
        """Leaf variable: gradients are accumulated and reported for it."""
        return self._push(value, tag)

    def const(self, value) -> "Var":
        return self._push(value, "const")

    def first_nonfinite(self) -> str | None:
        for i, node in enumerate(self.nodes):
            if not np.all(np.isfinite(node.value)):
                return f"node {i} op '{node.tag}'"
        return None

    def gradients(self, output: "Var", inputs: Sequence["Var"]) -> list[Array]:
        """Accumulated d(output)/d(input) for each input. Output must be scalar.

        Nodes never reached from the output keep a zero gradient.
        """
        if output.value.size != 1:
            raise GraphError("backward pass requires a scalar output")
        grads: list[Array | None] = [None] * len(self.nodes)
        grads[output.index] = np.ones_like(output.value)
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                if grads[parent] is None:
                    grads[parent] = np.array(contrib, dtype=float, copy=True)
                else:
                    grads[parent] += contrib
        out = []
        for v in inputs:
            g = grads[v.index]
            out.append(np.zeros_like(v.value) if g is None else g)
        return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> Array:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        return self.tape.const(other)

    # ---- arithmetic ----

    def __add__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        return self.tape._push(
            a + b, "add", (self.index, o.index),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        return self.tape._push(
            a - b, "sub", (self.index, o.index),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __neg__(self):
        return self.tape._push(-self.value, "neg", (self.index,), (lambda g: -g,))

    def __mul__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        return self.tape._push(
            a * b, "mul", (self.index, o.index),
            (lambda g: _unbroadcast(g * b, a.shape), lambda g: _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        return self.tape._push(
            a / b, "div", (self.index, o.index),
            (lambda g: _unbroadcast(g / b, a.shape),
             lambda g: _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    def __matmul__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value

        def vjp_a(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * b
            if a.ndim == 1:
                return b @ g
            if b.ndim == 1:
                return np.outer(g, b)
            return g @ b.T

        def vjp_b(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * a
            if a.ndim == 1:
                return np.outer(a, g)
            return a.T @ g

        return self.tape._push(a @ b, "matmul", (self.index, o.index),
                               (vjp_a, vjp_b))

    # ---- shape ----

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.value.shape
        return self.tape._push(self.value.reshape(shape), "reshape", (self.index,),
                               (lambda g: g.reshape(old),))

    def transpose(self, axes=None):
        v = self.value
        if axes is None:
            axes = tuple(reversed(range(v.ndim)))
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        return self.tape._push(np.transpose(v, axes), "transpose", (self.index,),
                               (lambda g: np.transpose(g, inv),))

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        v = self.value
        picked = v[key]

        def vjp(g, key=key, shape=v.shape):
            buf = np.zeros(shape, dtype=float)
            if isinstance(key, np.ndarray) or (
                    isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)):
                np.add.at(buf, key, g)
            else:
                buf[key] += g
            return buf

        return self.tape._push(picked, "getitem", (self.index,), (vjp,))

    # ---- reductions ----

    def sum(self, axis=None, keepdims=False):
        v = self.value

        def vjp(g, axis=axis, keepdims=keepdims, shape=v.shape):
            if axis is None:
                return np.broadcast_to(g, shape).copy()
            if not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return self.tape._push(v.sum(axis=axis, keepdims=keepdims), "sum",
                               (self.index,), (vjp,))

    def mean(self, axis=None, keepdims=False):
        v = self.value
        if axis is None:
            n = v.size
        elif isinstance(axis, tuple):
            n = int(np.prod([v.shape[a] for a in axis]))
        else:
            n = v.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


# ---- elementwise primitives ----

def cos(x: Var) -> Var:
    v = x.value
    return x.tape._push(np.cos(v), "cos", (x.index,), (lambda g: -g * np.sin(v),))


def sin(x: Var) -> Var:
    v = x.value
    return x.tape._push(np.sin(v), "sin", (x.index,), (lambda g: g * np.cos(v),))


def exp(x: Var) -> Var:
    out = np.exp(x.value)
    return x.tape._push(out, "exp", (x.index,), (lambda g: g * out,))


def log(x: Var) -> Var:
    v = x.value
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(v)
    return x.tape._push(out, "log", (x.index,), (lambda g: g / v,))


def sqrt(x: Var) -> Var:
    out = np.sqrt(x.value)
    return x.tape._push(out, "sqrt", (x.index,), (lambda g: g * 0.5 / out,))


def relu(x: Var) -> Var:
    v = x.value
    mask = v > 0
    return x.tape._push(np.where(mask, v, 0.0), "relu", (x.index,),
                        (lambda g: g * mask,))


def softplus(x: Var) -> Var:
    """ln(1 + e^x), overflow-safe in both directions."""
    v = x.value
    out = np.logaddexp(0.0, v)
    return x.tape._push(out, "softplus", (x.index,), (lambda g: g * _sigmoid(v),))


def erf(x: Var) -> Var:
    v = x.value
    coef = 2.0 / np.sqrt(np.pi)
    return x.tape._push(_erf(v), "erf", (x.index,),
                        (lambda g: g * coef * np.exp(-v * v),))


def gelu(x: Var) -> Var:
    """Gaussian error linear unit, exact (erf) form."""
    return x * 0.5 * (erf(x * (1.0 / np.sqrt(2.0))) + 1.0)


def maximum(a: Var, b: Var) -> Var:
    """Elementwise max; gradient routes to the first argument on ties."""
    av, bv = a.value, b.value
    take_a = av >= bv
    return a.tape._push(
        np.where(take_a, av, bv), "maximum", (a.index, b.index),
        (lambda g: _unbroadcast(g * take_a, av.shape),
         lambda g: _unbroadcast(g * ~take_a, bv.shape)))


def log2(x: Var) -> Var:
    return log(x) * (1.0 / np.log(2.0))


def concat(vars: Sequence[Var], axis: int = 0) -> Var:
    tape = vars[0].tape
    values = [v.value for v in vars]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]
        return vjp

    return tape._push(np.concatenate(values, axis=axis), "concat",
                      tuple(v.index for v in vars),
                      tuple(make_vjp(i) for i in range(len(vars))))


def pad_last(x: Var, before: int, after: int) -> Var:
    """Zero-pad the last axis."""
    v = x.value
    width = [(0, 0)] * (v.ndim - 1) + [(before, after)]
    sl = [slice(None)] * (v.ndim - 1) + [slice(before, before + v.shape[-1])]
    return x.tape._push(np.pad(v, width), "pad", (x.index,),
                        (lambda g: g[tuple(sl)],))


def straight_through(soft: Var, hard_value: Array, tag: str = "straight_through") -> Var:
    """Forward takes the hard value; backward passes the gradient unchanged."""
    hard_value = np.asarray(hard_value, dtype=float)
    if hard_value.shape != soft.shape:
        raise GraphError("straight_through shape mismatch")
    return soft.tape._push(hard_value, tag, (soft.index,), (lambda g: g,))


def softmax(x: Var, axis: int = -1) -> Var:
    """Row-stochastic softmax; shift by a constant max for stability."""
    shift = x.tape.const(np.max(x.value, axis=axis, keepdims=True))
    e = exp(x - shift)
    return e / e.sum(axis=axis, keepdims=True)


# ---- complex pairs ----

class CVar:
    """Complex array as a (real, imag) pair of tape variables."""

    __slots__ = ("re", "im")

    def __init__(self, re: Var, im: Var):
        self.re = re
        self.im = im

    @classmethod
    def from_complex(cls, tape: Tape, z: Array) -> "CVar":
        z = np.asarray(z, dtype=complex)
        return cls(tape.const(z.real.copy()), tape.const(z.imag.copy()))

    @property
    def value(self) -> Array:
        return self.re.value + 1j * self.im.value

    def __add__(self, other: "CVar") -> "CVar":
        return CVar(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "CVar") -> "CVar":
        return CVar(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        if isinstance(other, CVar):
            return CVar(self.re * other.re - self.im * other.im,
                        self.re * other.im + self.im * other.re)
        return CVar(self.re * other, self.im * other)

    def conj(self) -> "CVar":
        return CVar(self.re, -self.im)

    def matmul(self, other: "CVar") -> "CVar":
        return CVar(self.re @ other.re - self.im @ other.im,
                    self.re @ other.im + self.im @ other.re)

    def hermitian(self) -> "CVar":
        return CVar(self.re.T, -self.im.T)

    def abs2(self) -> Var:
        return self.re * self.re + self.im * self.im

    def __getitem__(self, key):
        return CVar(self.re[key], self.im[key])

    def reshape(self, *shape) -> "CVar":
        return CVar(self.re.reshape(*shape), self.im.reshape(*shape))


def expj(theta: Var) -> CVar:
    """e^{j theta} for a real angle array."""
    return CVar(cos(theta), sin(theta))


# ---- finite differences (shared oracle helper) ----

def finite_difference(f: Callable[[Array], float], x: Array, h: float = 1e-6) -> Array:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def relative_gradient_error(g_ad: Array, g_fd: Array) -> float:
    """Max-norm relative disagreement between two gradients."""
    denom = max(np.max(np.abs(g_fd)), np.max(np.abs(g_ad)), 1e-12)
    return float(np.max(np.abs(g_ad - g_fd)) / denom)
