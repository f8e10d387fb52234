"""Finite-difference verification of every differentiable operation.

Each primitive is probed at random points: a random linear functional of
the op output is differentiated by the tape and compared against central
finite differences. The straight-through estimator is excluded by design
(its backward pass is a surrogate, not a derivative); in adaptive mode the
switch logits are likewise skipped while everything else is still checked
with the hard permutation held fixed.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import neural
from .autodiff import Tape, finite_difference, relative_gradient_error
from .beamformer import ConfigMode
from .channel import generate_channel
from .objective import total_loss
from .optimize import random_initialization
from .params import ArrayGeometry, SystemParams, sample_scenario


def _unary(op, positive=False):
    def build(rng):
        x = rng.normal(size=(2, 3))
        if positive:
            x = np.abs(x) + 0.5
        w = rng.normal(size=(2, 3))

        def f(xv):
            tape = Tape()
            v = tape.var(xv)
            return float((op(v) * tape.const(w)).sum().value)

        def g(xv):
            tape = Tape()
            v = tape.var(xv)
            loss = (op(v) * tape.const(w)).sum()
            return tape.gradients(loss, [v])[0]

        return f, g, [x]
    return build


def _binary(op):
    def build(rng):
        x = rng.normal(size=(2, 3)) + 0.1
        y = rng.normal(size=(2, 3)) + 2.0     # keep divisors away from zero
        w = rng.normal(size=(2, 3))

        def f2(xv, yv):
            tape = Tape()
            a, b = tape.var(xv), tape.var(yv)
            return float((op(a, b) * tape.const(w)).sum().value)

        def g2(xv, yv):
            tape = Tape()
            a, b = tape.var(xv), tape.var(yv)
            loss = (op(a, b) * tape.const(w)).sum()
            return np.stack(tape.gradients(loss, [a, b]))

        def f(stacked):
            return f2(stacked[0], stacked[1])

        def g(stacked):
            return g2(stacked[0], stacked[1])

        return f, g, [np.stack([x, y])]
    return build


def _matmul_case(rng):
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(3, 2))
    w = rng.normal(size=(2, 2))

    def f(stacked):
        tape = Tape()
        av = tape.var(stacked[:6].reshape(2, 3))
        bv = tape.var(stacked[6:].reshape(3, 2))
        return float(((av @ bv) * tape.const(w)).sum().value)

    def g(stacked):
        tape = Tape()
        av = tape.var(stacked[:6].reshape(2, 3))
        bv = tape.var(stacked[6:].reshape(3, 2))
        loss = ((av @ bv) * tape.const(w)).sum()
        ga, gb = tape.gradients(loss, [av, bv])
        return np.concatenate([ga.ravel(), gb.ravel()])

    return f, g, [np.concatenate([a.ravel(), b.ravel()])]


def _shape_case(op_name):
    def build(rng):
        x = rng.normal(size=(2, 4))
        w4 = rng.normal(size=(2, 4))
        w8 = rng.normal(size=8)
        wp = rng.normal(size=(2, 6))
        wc = rng.normal(size=(4, 4))
        idx = np.array([1, 0, 1, 3])

        def apply(v, tape):
            if op_name == "reshape":
                return v.reshape(8) * tape.const(w8)
            if op_name == "transpose":
                return v.T * tape.const(w4.T)
            if op_name == "getitem":
                return v[:, idx] * tape.const(wc[:2])
            if op_name == "concat":
                return ad.concat([v, v * 2.0], axis=0) * tape.const(wc)
            if op_name == "pad":
                return ad.pad_last(v, 1, 1) * tape.const(wp)
            if op_name == "sum":
                return v.sum(axis=1) * tape.const(w8[:2])
            if op_name == "mean":
                return v.mean(axis=0) * tape.const(w8[:4])
            raise KeyError(op_name)

        def f(xv):
            tape = Tape()
            return float(apply(tape.var(xv), tape).sum().value)

        def g(xv):
            tape = Tape()
            v = tape.var(xv)
            return tape.gradients(apply(v, tape).sum(), [v])[0]

        return f, g, [x]
    return build


def _softmax_case(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))

    def f(xv):
        tape = Tape()
        return float((ad.softmax(tape.var(xv), axis=-1) * tape.const(w)).sum().value)

    def g(xv):
        tape = Tape()
        v = tape.var(xv)
        loss = (ad.softmax(v, axis=-1) * tape.const(w)).sum()
        return tape.gradients(loss, [v])[0]

    return f, g, [x]


def _maxpool_case(rng):
    x = rng.normal(size=(2, 4, 6))
    w = rng.normal(size=(2, 2, 3))

    def f(xv):
        tape = Tape()
        return float((neural.max_pool_2x(tape.var(xv)) * tape.const(w)).sum().value)

    def g(xv):
        tape = Tape()
        v = tape.var(xv)
        loss = (neural.max_pool_2x(v) * tape.const(w)).sum()
        return tape.gradients(loss, [v])[0]

    return f, g, [x]


OP_CASES = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "div": _binary(lambda a, b: a / b),
    "neg": _unary(lambda v: -v),
    "matmul": _matmul_case,
    "cos": _unary(ad.cos),
    "sin": _unary(ad.sin),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, positive=True),
    "sqrt": _unary(ad.sqrt, positive=True),
    "relu": _unary(ad.relu),
    "softplus": _unary(ad.softplus),
    "erf": _unary(ad.erf),
    "gelu": _unary(ad.gelu),
    "log2": _unary(ad.log2, positive=True),
    "maximum": _binary(ad.maximum),
    "softmax": _softmax_case,
    "max_pool": _maxpool_case,
    "reshape": _shape_case("reshape"),
    "transpose": _shape_case("transpose"),
    "getitem": _shape_case("getitem"),
    "concat": _shape_case("concat"),
    "pad": _shape_case("pad"),
    "sum": _shape_case("sum"),
    "mean": _shape_case("mean"),
}


def check_op(name: str, num_points: int = 100, seed: int = 0) -> float:
    """Worst relative disagreement between tape and FD gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    builder = OP_CASES[name]
    for _ in range(num_points):
        f, g, inputs = builder(rng)
        for x in inputs:
            g_ad = g(x)
            g_fd = finite_difference(f, x.copy(), h=1e-6)
            worst = max(worst, relative_gradient_error(np.asarray(g_ad), g_fd))
    return worst


def run_op_suite(num_points: int = 100, seed: int = 0) -> dict[str, float]:
    return {name: check_op(name, num_points, seed) for name in OP_CASES}


def _tiny_instance(seed: int):
    params = SystemParams(num_antennas=4, num_ttds_per_chain=2, num_rf_chains=2,
                          num_users=2, num_subcarriers=2, cyclic_prefix_len=1,
                          num_scatterers_per_user=1)
    geom = ArrayGeometry.ula(params)
    rng = np.random.default_rng(seed)
    scenario = sample_scenario(params, rng, seed=seed)
    return generate_channel(params, geom, scenario, rng)


def check_total_loss(num_points: int = 100, seed: int = 0) -> float:
    """FD check of the composite loss across modes at random points.

    Switch logits are excluded (straight-through surrogate); the hard
    permutation stays constant under the FD perturbations of everything
    else, so those comparisons are exact derivative checks.
    """
    modes = [ConfigMode.SERIAL_FIXED, ConfigMode.PARALLEL, ConfigMode.PS_ONLY,
             ConfigMode.ADAPTIVE]
    worst = 0.0
    for point in range(num_points):
        H = _tiny_instance(seed + point % 7)
        mode = modes[point % len(modes)]
        theta = random_initialization(H, mode, np.random.default_rng(seed + point))
        grads = total_loss(H, theta).gradients()
        for name, g_ad in grads.items():
            if name == "switch_logits":
                continue
            arr = getattr(theta, name)

            def f(x, name=name, theta=theta, H=H):
                probe = theta.copy()
                setattr(probe, name, x)
                return total_loss(H, probe).breakdown.total

            g_fd = finite_difference(f, arr.copy(), h=1e-6)
            worst = max(worst, relative_gradient_error(g_ad, g_fd))
    return worst
