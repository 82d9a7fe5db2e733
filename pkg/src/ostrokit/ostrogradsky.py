"""Ostrogradsky transform: momenta, phase space, Hamiltonian, flow.

For an order-N problem the canonical momenta are

    p^alpha_i = sum over beta from alpha to N-1 of
                (-1)^(beta-alpha) D_t^(beta-alpha) dL/dq<i>_(beta+1),

so in particular p^(N-1)_i = dL/dq<i>_N.  Inverting that top relation
(Newton, analytic Jacobian = the top Hessian) gives q_N as a function of
(t, q, p^(N-1)); substituting it into H = sum p^alpha q_(alpha+1) - L
produces the Hamiltonian, and the flow uses the explicit right-hand
sides with the solved top jet in place of implicit differentiation.

Phase vectors pack order-major, momenta after coordinates:
[q1_0..qn_0, ..., q1_(N-1)..qn_(N-1), p1_0..pn_0, ..., p1_(N-1)..].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .lagrangian import (
    DegeneracyError,
    JetPoint,
    LagrangianProblem,
    ProblemError,
    degeneracy_threshold,
)
from .solvers import ConvergenceError, SingularJacobianError, newton_solve


@dataclass(frozen=True)
class PhaseState:
    """Point (t, q^i_alpha, p^alpha_i), alpha = 0..N-1; rows indexed by i."""

    t: float
    q: tuple
    p: tuple

    def __post_init__(self):
        q = tuple(tuple(float(v) for v in row) for row in self.q)
        p = tuple(tuple(float(v) for v in row) for row in self.p)
        if not q or len(p) != len(q):
            raise ProblemError("phase state needs matching q and p rows")
        width = len(q[0])
        if width < 1 or any(len(r) != width for r in q) or any(len(r) != width for r in p):
            raise ProblemError("phase state rows must all have length N")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def N(self) -> int:
        return len(self.q[0])

    def flat(self) -> np.ndarray:
        n, N = self.n, self.N
        out = np.empty(2 * n * N)
        for alpha in range(N):
            for i in range(n):
                out[alpha * n + i] = self.q[i][alpha]
                out[n * N + alpha * n + i] = self.p[i][alpha]
        return out

    @staticmethod
    def from_flat(t: float, flat: Sequence[float], n: int, N: int) -> "PhaseState":
        if len(flat) != 2 * n * N:
            raise ProblemError(
                f"flat phase vector has length {len(flat)}, expected {2 * n * N}"
            )
        q = tuple(
            tuple(float(flat[alpha * n + i]) for alpha in range(N)) for i in range(n)
        )
        p = tuple(
            tuple(float(flat[n * N + alpha * n + i]) for alpha in range(N))
            for i in range(n)
        )
        return PhaseState(t, q, p)

    def binding(self) -> dict:
        out = {ex.TIME: self.t}
        for i in range(1, self.n + 1):
            for alpha in range(self.N):
                out[ex.coordinate(i, alpha)] = self.q[i - 1][alpha]
                out[ex.momentum(i, alpha)] = self.p[i - 1][alpha]
        return out


def phase_labels(n: int, N: int) -> tuple:
    """Column labels matching PhaseState.flat ordering."""
    qs = [f"q{i}_{alpha}" for alpha in range(N) for i in range(1, n + 1)]
    ps = [f"p{i}_{alpha}" for alpha in range(N) for i in range(1, n + 1)]
    return tuple(qs + ps)


@dataclass(frozen=True)
class MomentaTable:
    """Momenta expressions table[alpha][i-1] and the top-relation residuals
    residual[i-1] = p<i>_(N-1) - dL/dq<i>_N."""

    table: tuple
    residuals: tuple

    @property
    def N(self) -> int:
        return len(self.table)

    @property
    def n(self) -> int:
        return len(self.table[0])

    def momentum(self, i: int, alpha: int) -> ex.Expression:
        return self.table[alpha][i - 1]


def momenta_expressions(problem: LagrangianProblem) -> MomentaTable:
    """Symbolic momenta from the alternating total-derivative prescription."""
    return problem_momenta(problem)


def problem_momenta(problem: LagrangianProblem) -> MomentaTable:
    cache = getattr(problem, "_ostro_momenta", None)
    if cache is not None:
        return cache
    n, N = problem.n, problem.N
    dL = {
        (i, beta): ex.partial(problem.L, ex.coordinate(i, beta + 1))
        for i in range(1, n + 1)
        for beta in range(N)
    }
    table = []
    for alpha in range(N):
        row = []
        for i in range(1, n + 1):
            terms = []
            for beta in range(alpha, N):
                d = dL[(i, beta)]
                for _ in range(beta - alpha):
                    d = ex.total_time_derivative(d)
                terms.append(d if (beta - alpha) % 2 == 0 else ex.Negate(d))
            row.append(ex.simplify(ex.add(*terms)))
        table.append(tuple(row))
    residuals = tuple(
        ex.simplify(
            ex.Symbol(ex.momentum(i, N - 1)) - dL[(i, N - 1)]
        )
        for i in range(1, n + 1)
    )
    result = MomentaTable(table=tuple(table), residuals=residuals)
    object.__setattr__(problem, "_ostro_momenta", result)
    return result


def jet_to_phase(problem: LagrangianProblem, point: JetPoint) -> PhaseState:
    """Evaluate the momenta at jets of order 2N-1."""
    n, N = problem.n, problem.N
    if point.n != n:
        raise ProblemError(f"jet point has {point.n} coordinates, problem has {n}")
    if point.order < 2 * N - 1:
        raise ProblemError(
            f"momenta need jets of order {2 * N - 1}, point has order {point.order}"
        )
    momenta = problem_momenta(problem)
    binding = point.binding()
    binding.update(problem.parameter_binding)
    q = tuple(tuple(point.value(i, alpha) for alpha in range(N)) for i in range(1, n + 1))
    p = tuple(
        tuple(ex.evaluate(momenta.momentum(i, alpha), binding) for alpha in range(N))
        for i in range(1, n + 1)
    )
    return PhaseState(point.t, q, p)


class _TopVelocitySolver:
    """Compiled Newton solve for q_N(t, q, p^(N-1)) with warm start."""

    def __init__(self, problem: LagrangianProblem):
        n, N = problem.n, problem.N
        self.n, self.N = n, N
        L = problem.bound_lagrangian
        dLdqN = [ex.partial(L, ex.coordinate(i, N)) for i in range(1, n + 1)]
        hessian = [
            ex.partial(d, ex.coordinate(j, N))
            for d in dLdqN
            for j in range(1, n + 1)
        ]
        args = (
            [ex.TIME]
            + [ex.coordinate(i, a) for a in range(N) for i in range(1, n + 1)]
            + [ex.coordinate(i, N) for i in range(1, n + 1)]
        )
        self._eval = ex.compile_evaluator(dLdqN + hessian, args)
        self.guess = np.zeros(n)

    def fresh(self) -> "_TopVelocitySolver":
        """Same compiled relation, zeroed warm start (one per trajectory)."""
        clone = _TopVelocitySolver.__new__(_TopVelocitySolver)
        clone.n, clone.N = self.n, self.N
        clone._eval = self._eval
        clone.guess = np.zeros(self.n)
        return clone

    def solve(self, t: float, q_flat: np.ndarray, p_top: np.ndarray,
              guess: Optional[Sequence[float]] = None) -> np.ndarray:
        n = self.n
        x0 = np.array(guess, dtype=float) if guess is not None else self.guess.copy()
        tol = 1e-12 * (1.0 + float(np.max(np.abs(p_top))))

        def fun_jac(x):
            raw = self._eval(t, *q_flat, *x)
            res = p_top - np.array(raw[:n])
            jac = -np.array(raw[n:]).reshape(n, n)
            return res, jac

        try:
            out = newton_solve(fun_jac, x0, tol, label="top-jet/momentum relation")
        except SingularJacobianError as err:
            raise DegeneracyError(str(err)) from None
        self.guess = out.copy()
        return out


def _solver_for(problem: LagrangianProblem) -> _TopVelocitySolver:
    # shared compiled expressions; per-trajectory warm state uses fresh copies
    cache = getattr(problem, "_ostro_solver", None)
    if cache is None:
        cache = _TopVelocitySolver(problem)
        object.__setattr__(problem, "_ostro_solver", cache)
    return cache


def solve_top_velocity(
    problem: LagrangianProblem,
    state: PhaseState,
    guess: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Top jets q^i_N solving p^(N-1)_i = dL/dq^i_N at the state."""
    solver = _solver_for(problem)
    n, N = problem.n, problem.N
    q_flat = state.flat()[: n * N]
    p_top = np.array([state.p[i][N - 1] for i in range(n)])
    return solver.solve(state.t, q_flat, p_top, guess)


class _HamiltonianEvaluator:
    """Compiled pieces shared by hamiltonian_value and the field."""

    def __init__(self, problem: LagrangianProblem):
        n, N = problem.n, problem.N
        self.n, self.N = n, N
        L = problem.bound_lagrangian
        dLdq = [
            ex.partial(L, ex.coordinate(i, alpha))
            for alpha in range(N)
            for i in range(1, n + 1)
        ]
        args = (
            [ex.TIME]
            + [ex.coordinate(i, a) for a in range(N) for i in range(1, n + 1)]
            + [ex.coordinate(i, N) for i in range(1, n + 1)]
        )
        self._lagrangian = ex.compile_evaluator([L], args)
        self._gradient = ex.compile_evaluator(dLdq, args)

    def lagrangian(self, t, q_flat, q_top):
        return self._lagrangian(t, *q_flat, *q_top)[0]

    def gradient(self, t, q_flat, q_top):
        return np.array(self._gradient(t, *q_flat, *q_top))


def _evaluator_for(problem: LagrangianProblem) -> _HamiltonianEvaluator:
    cache = getattr(problem, "_ostro_eval", None)
    if cache is None:
        cache = _HamiltonianEvaluator(problem)
        object.__setattr__(problem, "_ostro_eval", cache)
    return cache


def hamiltonian_value(
    problem: LagrangianProblem,
    state: PhaseState,
    guess: Optional[Sequence[float]] = None,
) -> float:
    """H = sum p^alpha q_(alpha+1) - L with the solved top jet substituted."""
    n, N = problem.n, problem.N
    q_top = solve_top_velocity(problem, state, guess)
    ev = _evaluator_for(problem)
    q_flat = state.flat()[: n * N]
    total = 0.0
    for i in range(n):
        for alpha in range(N - 1):
            total += state.p[i][alpha] * state.q[i][alpha + 1]
        total += state.p[i][N - 1] * q_top[i]
    return total - ev.lagrangian(state.t, q_flat, q_top)


def hamiltonian_field_at(
    problem: LagrangianProblem,
    state: PhaseState,
    guess: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Flat derivative vector of the phase coordinates at one state."""
    field = OstrogradskyField(problem)
    if guess is not None:
        field.solver.guess = np.array(guess, dtype=float)
    return field(state.t, state.flat())


class OstrogradskyField:
    """Hamilton flow; q-dot from shifted jets and the solved top jet,
    p-dot from the explicit right-hand sides.  Keeps the Newton warm
    start, so use one instance per trajectory."""

    def __init__(self, problem: LagrangianProblem):
        self.problem = problem
        n, N = problem.n, problem.N
        self.dimension = 2 * n * N
        self.labels = phase_labels(n, N)
        self.solver = _solver_for(problem).fresh()
        self.evaluator = _evaluator_for(problem)

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        n, N = self.problem.n, self.problem.N
        nN = n * N
        q_flat = y[:nN]
        p_flat = y[nN:]
        p_top = p_flat[(N - 1) * n:]
        q_top = self.solver.solve(t, q_flat, p_top)
        grad = self.evaluator.gradient(t, q_flat, q_top)
        out = np.empty(2 * nN)
        # q-dot: shift orders up, top slot from the solved jet
        out[: nN - n] = q_flat[n:]
        out[nN - n: nN] = q_top
        # p-dot slots
        out[nN: nN + n] = grad[:n]
        for alpha in range(1, N):
            lo = nN + alpha * n
            out[lo: lo + n] = -p_flat[(alpha - 1) * n: alpha * n] + grad[alpha * n: (alpha + 1) * n]
        return out


def hamiltonian_field(problem: LagrangianProblem) -> OstrogradskyField:
    return OstrogradskyField(problem)


def hamiltonian_monitor(
    problem: LagrangianProblem, top0: Optional[Sequence[float]] = None
):
    """Callable (t, flat phase vector) -> H, for invariant drift checks.

    `top0` seeds the first top-jet solve; without it the Newton start is
    zero, which sits on the singular set of some momentum relations.
    """
    n, N = problem.n, problem.N
    field = OstrogradskyField(problem)  # reuse its warm-started solver
    if top0 is not None:
        field.solver.guess = np.array(top0, dtype=float)

    def monitor(t: float, y: np.ndarray) -> float:
        nN = n * N
        q_flat = y[:nN]
        p_flat = y[nN:]
        p_top = p_flat[(N - 1) * n:]
        q_top = field.solver.solve(t, q_flat, p_top)
        total = float(np.dot(p_flat[: (N - 1) * n], q_flat[n:]))
        total += float(np.dot(p_top, q_top))
        return total - field.evaluator.lagrangian(t, q_flat, q_top)

    return monitor
