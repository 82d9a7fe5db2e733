"""Order-N Lagrangian problems and their Euler-Lagrange equations.

A problem is (n, N, L, parameters) with L an expression over t and the
jet coordinates q<i>_<alpha> for alpha <= N.  From it this module builds
the n Euler-Lagrange expressions

    E_i = sum over alpha of (-1)^alpha D_t^alpha (dL/dq<i>_alpha),

which involve jets up to order 2N and are affine in the top jets q_{2N}
with coefficient matrix (-1)^N times the Hessian d2L/dq_N dq_N.  That
linearity gives the explicit ODE form used for direct integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex


class ProblemError(ValueError):
    """Problem data violates a structural invariant."""


class DegeneracyError(ValueError):
    """Singular top Hessian: the top-derivative relation is not solvable."""


def degeneracy_threshold(hessian: np.ndarray) -> float:
    """Scale-aware cutoff below which a Hessian determinant is singular."""
    n = hessian.shape[0]
    scale = 1.0 + float(np.max(np.abs(hessian))) if hessian.size else 1.0
    return 1e-10 * scale ** n


@dataclass(frozen=True)
class JetPoint:
    """Jet values at one instant: t plus q<i>_<alpha> for 0 <= alpha <= order.

    `values[i-1][alpha]` holds q<i>_<alpha>; every row has the same length
    (the point is complete to its declared order).
    """

    t: float
    values: tuple

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in row) for row in self.values)
        if not rows:
            raise ProblemError("jet point needs at least one coordinate row")
        width = len(rows[0])
        if width < 1 or any(len(row) != width for row in rows):
            raise ProblemError("jet point rows must share one derivative order")
        object.__setattr__(self, "values", rows)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def order(self) -> int:
        return len(self.values[0]) - 1

    def value(self, i: int, alpha: int) -> float:
        return self.values[i - 1][alpha]

    def binding(self) -> dict:
        out = {ex.TIME: self.t}
        for i, row in enumerate(self.values, start=1):
            for alpha, v in enumerate(row):
                out[ex.coordinate(i, alpha)] = v
        return out

    def truncated(self, order: int) -> "JetPoint":
        if order > self.order:
            raise ProblemError(f"jet point has order {self.order}, need {order}")
        return JetPoint(self.t, tuple(row[: order + 1] for row in self.values))

    def flat(self) -> np.ndarray:
        """Pack as [q1_0..qn_0, q1_1..qn_1, ...] (order-major)."""
        n, width = self.n, self.order + 1
        out = np.empty(n * width)
        for alpha in range(width):
            for i in range(n):
                out[alpha * n + i] = self.values[i][alpha]
        return out

    @staticmethod
    def from_flat(t: float, flat: Sequence[float], n: int, order: int) -> "JetPoint":
        width = order + 1
        if len(flat) != n * width:
            raise ProblemError(
                f"flat jet vector has length {len(flat)}, expected {n * width}"
            )
        rows = tuple(
            tuple(float(flat[alpha * n + i]) for alpha in range(width))
            for i in range(n)
        )
        return JetPoint(t, rows)


@dataclass(frozen=True, eq=False)
class LagrangianProblem:
    """(n, N, L, parameters); symbolic derivations are cached per instance."""

    n: int
    N: int
    L: ex.Expression
    parameters: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ProblemError(f"n must be >= 1, got {self.n}")
        if self.N < 1:
            raise ProblemError(f"N must be >= 1, got {self.N}")
        object.__setattr__(
            self, "parameters", {str(k): float(v) for k, v in self.parameters.items()}
        )
        allowed_pars = set(self.parameters)
        for s in ex.free_symbols(self.L):
            if s.kind == "t":
                continue
            if s.kind == "q":
                if not (1 <= s.index <= self.n) or not (0 <= s.order <= self.N):
                    raise ProblemError(
                        f"L uses {s} outside the declared ranges (n={self.n}, N={self.N})"
                    )
                continue
            if s.kind == "par":
                if s.name not in allowed_pars:
                    raise ProblemError(f"L uses undeclared parameter {s.name!r}")
                continue
            raise ProblemError(f"L may not contain {s} (momenta/controls are derived)")
        if all(
            ex.is_zero(ex.partial(self.L, ex.coordinate(i, self.N)))
            for i in range(1, self.n + 1)
        ):
            raise ProblemError(
                f"L does not depend on any order-{self.N} jet; the declared order is wrong"
            )

    @property
    def parameter_binding(self) -> dict:
        return {ex.parameter(name): v for name, v in self.parameters.items()}

    @cached_property
    def bound_lagrangian(self) -> ex.Expression:
        """L with parameter values substituted (for numeric paths)."""
        subs = {ex.parameter(k): ex.Constant(v) for k, v in self.parameters.items()}
        return ex.simplify(ex.substitute(self.L, subs))

    @cached_property
    def euler_lagrange_exprs(self) -> tuple:
        out = []
        for i in range(1, self.n + 1):
            terms = []
            for alpha in range(self.N + 1):
                d = ex.partial(self.L, ex.coordinate(i, alpha))
                for _ in range(alpha):
                    d = ex.total_time_derivative(d)
                terms.append(d if alpha % 2 == 0 else ex.Negate(d))
            out.append(ex.simplify(ex.add(*terms)))
        return tuple(out)

    @cached_property
    def top_hessian_exprs(self) -> tuple:
        return tuple(
            tuple(
                ex.partial(
                    ex.partial(self.L, ex.coordinate(i, self.N)),
                    ex.coordinate(j, self.N),
                )
                for j in range(1, self.n + 1)
            )
            for i in range(1, self.n + 1)
        )

    @cached_property
    def _rhs_evaluator(self):
        """Compiled (t, jets of order <= 2N-1) -> (E_i at q_2N=0 ..., H_ij ...)."""
        pars = {ex.parameter(k): ex.Constant(v) for k, v in self.parameters.items()}
        zero_top = {
            ex.coordinate(i, 2 * self.N): ex.ZERO for i in range(1, self.n + 1)
        }
        rest = [
            ex.substitute(ex.substitute(e, zero_top), pars)
            for e in self.euler_lagrange_exprs
        ]
        hessian = [
            ex.substitute(h, pars) for row in self.top_hessian_exprs for h in row
        ]
        args = [ex.TIME] + [
            ex.coordinate(i, alpha)
            for alpha in range(2 * self.N)
            for i in range(1, self.n + 1)
        ]
        return ex.compile_evaluator(rest + hessian, args)


def euler_lagrange(problem: LagrangianProblem) -> tuple:
    """The n expressions E_i; a motion satisfies E_i = 0."""
    return problem.euler_lagrange_exprs


def top_hessian(problem: LagrangianProblem) -> tuple:
    """Matrix of expressions d2L/dq<i>_N dq<j>_N."""
    return problem.top_hessian_exprs


def hessian_at(problem: LagrangianProblem, point: JetPoint) -> np.ndarray:
    binding = point.binding()
    binding.update(problem.parameter_binding)
    return np.array(
        [
            [ex.evaluate(h, binding) for h in row]
            for row in problem.top_hessian_exprs
        ]
    )


def nondegeneracy_at(problem: LagrangianProblem, point: JetPoint) -> float:
    """det of the top Hessian at the point (complete to order N)."""
    if point.order < problem.N:
        raise ProblemError(
            f"nondegeneracy needs jets of order {problem.N}, point has {point.order}"
        )
    h = hessian_at(problem, point)
    return float(np.linalg.det(h)) if problem.n > 1 else float(h[0, 0])


def require_nondegenerate(problem: LagrangianProblem, point: JetPoint) -> float:
    """Return det, raising DegeneracyError below the scale-aware threshold."""
    h = hessian_at(problem, point)
    det = float(np.linalg.det(h)) if problem.n > 1 else float(h[0, 0])
    if abs(det) <= degeneracy_threshold(h):
        raise DegeneracyError(
            f"singular top Hessian: det = {det:.3e} at t = {point.t} "
            "(the top-derivative relation cannot be solved)"
        )
    return det


def el_explicit_rhs(problem: LagrangianProblem, point: JetPoint) -> np.ndarray:
    """Values q^i_{2N} making every E_i vanish at the given order-(2N-1) jets."""
    n, N = problem.n, problem.N
    if point.order < 2 * N - 1:
        raise ProblemError(
            f"explicit form needs jets of order {2 * N - 1}, point has {point.order}"
        )
    raw = problem._rhs_evaluator(point.t, *point.flat()[: n * 2 * N])
    rest = np.array(raw[: n])
    hessian = np.array(raw[n:]).reshape(n, n)
    if abs(float(np.linalg.det(hessian)) if n > 1 else hessian[0, 0]) <= degeneracy_threshold(hessian):
        raise DegeneracyError(
            f"singular top Hessian at t = {point.t}; cannot form the explicit ODE"
        )
    sign = -1.0 if N % 2 else 1.0
    if n == 1:
        return np.array([-rest[0] / (sign * hessian[0, 0])])
    return np.linalg.solve(sign * hessian, -rest)


class EulerLagrangeField:
    """First-order field for the order-2N ODE; state packs jets 0..2N-1
    order-major: [q1_0..qn_0, q1_1..qn_1, ...]."""

    def __init__(self, problem: LagrangianProblem):
        self.problem = problem
        self.dimension = problem.n * 2 * problem.N
        self.labels = tuple(
            f"q{i}_{alpha}"
            for alpha in range(2 * problem.N)
            for i in range(1, problem.n + 1)
        )
        self._eval = problem._rhs_evaluator
        self._sign = -1.0 if problem.N % 2 else 1.0

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        n = self.problem.n
        out = np.empty(self.dimension)
        out[: self.dimension - n] = y[n:]
        raw = self._eval(t, *y)
        rest = raw[:n]
        if n == 1:
            h = raw[1]
            if abs(h) <= 1e-10 * (1.0 + abs(h)):
                raise DegeneracyError(f"singular top Hessian at t = {t}")
            out[-1] = -rest[0] / (self._sign * h)
        else:
            hessian = np.array(raw[n:]).reshape(n, n)
            if abs(float(np.linalg.det(hessian))) <= degeneracy_threshold(hessian):
                raise DegeneracyError(f"singular top Hessian at t = {t}")
            out[-n:] = np.linalg.solve(self._sign * hessian, -np.array(rest))
        return out


def el_field(problem: LagrangianProblem) -> EulerLagrangeField:
    """Vector field realizing the Euler-Lagrange equations explicitly."""
    return EulerLagrangeField(problem)
