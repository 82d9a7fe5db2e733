"""Shared fixtures: seeded RNG and random expression generators.

The generators deliberately produce tame trees: bindings live in a
positive box, log/sqrt/quotient arguments are forced away from their
domain boundaries, and samples whose values or derivatives are large
get rejected.  Finite-difference tolerances assume this.
"""

from __future__ import annotations

import numpy as np
import pytest

from ostrokit import expr as ex

PARAM_A = ex.parameter("a")
PARAM_B = ex.parameter("b")

JET_SYMBOLS = (
    ex.TIME,
    ex.coordinate(1, 0),
    ex.coordinate(1, 1),
    ex.coordinate(1, 2),
    ex.coordinate(2, 0),
    ex.coordinate(2, 1),
    PARAM_A,
    PARAM_B,
)

MIXED_SYMBOLS = JET_SYMBOLS + (
    ex.momentum(1, 0),
    ex.momentum(1, 1),
    ex.velocity(1),
    ex.velocity(2),
)


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)


def random_binding(rng, symbols, extra_orders: int = 0):
    """Positive bounded values; covers prolonged orders when asked."""
    binding = {}
    for s in symbols:
        binding[s] = float(rng.uniform(0.2, 1.6))
        if s.kind == "q":
            for alpha in range(s.order + 1, s.order + 1 + extra_orders):
                binding[ex.coordinate(s.index, alpha)] = float(rng.uniform(0.2, 1.6))
    return binding


def random_tree(rng, symbols, depth: int) -> ex.Expression:
    """Random tree of depth <= `depth` over the given symbol pool."""
    if depth <= 0 or rng.random() < 0.28:
        if rng.random() < 0.30:
            if rng.random() < 0.6:
                return ex.Constant(int(rng.integers(-3, 4)))
            # binary-exact float so regrouping under simplify stays lossless
            return ex.Constant(0.25 * int(rng.integers(-8, 9)))
        return ex.Symbol(symbols[int(rng.integers(0, len(symbols)))])
    kind = rng.choice(
        ["sum", "sum", "product", "product", "power", "quotient", "apply", "negate"]
    )
    child = lambda: random_tree(rng, symbols, depth - 1)
    if kind == "sum":
        return ex.add(*(child() for _ in range(int(rng.integers(2, 4)))))
    if kind == "product":
        return ex.mul(*(child() for _ in range(int(rng.integers(2, 4)))))
    if kind == "power":
        return ex.Power(_positive(child()), int(rng.integers(2, 4)))
    if kind == "quotient":
        return ex.Quotient(child(), _positive(child()))
    if kind == "apply":
        fn = str(rng.choice(["sin", "cos", "exp", "log", "sqrt"]))
        arg = child()
        if fn in ("log", "sqrt"):
            arg = _positive(arg)
        elif fn == "exp":
            arg = ex.Quotient(arg, ex.Constant(4))
        return ex.Apply(fn, arg)
    return ex.Negate(child())


def _positive(e: ex.Expression) -> ex.Expression:
    # bounded away from zero so quotients, log and sqrt stay well-posed
    return ex.add(ex.Power(e, 2), ex.Constant(1))


def tame_sample(rng, symbols, depth: int = 4, bound: float = 40.0, extra_orders: int = 0):
    """Draw (tree, binding) until both value and symbols' slopes are small."""
    while True:
        tree = random_tree(rng, symbols, depth)
        binding = random_binding(rng, symbols, extra_orders=extra_orders)
        try:
            value = ex.evaluate(tree, binding)
        except ex.EvaluationError:
            continue
        if not np.isfinite(value) or abs(value) > bound:
            continue
        ok = True
        for s in ex.free_symbols(tree):
            try:
                slope = ex.evaluate(ex.partial(tree, s), binding)
            except ex.EvaluationError:
                ok = False
                break
            if not np.isfinite(slope) or abs(slope) > bound:
                ok = False
                break
        if ok:
            return tree, binding


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))
