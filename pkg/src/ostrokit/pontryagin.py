"""Constrained first-order variational problems and their Hamilton form.

A problem couples n configuration coordinates q<i>_0 to r controls z<A>
through velocity constraints dq^i/dt = psi^i(t, q, z) and a Lagrangian
L(t, q, z).  On the contact bundle with momenta p_i the function

    H = p_i psi^i - L

governs everything: its z-gradient is the stationarity condition cutting
out the surface S, invertibility of its z-Hessian (regularity) solves
z = z(t, q, p) by Newton, and pulling H back to S yields a reduced
Hamiltonian whose flow is

    dq^i/dt = psi^i,   dp_i/dt = dL/dq^i - p_k dpsi^k/dq^i

evaluated at the solved z.  Higher-order Lagrangian problems embed here
by flattening the jet coordinates: q<i>_alpha becomes the flat
coordinate q<(alpha*n)+i>_0, the constraint shifts orders up, and the
top derivative becomes the control z<i>.

The full-system route integrates the same (q, p) equations but derives
both right-hand sides from H itself and carries the per-step solved z
in its recorded samples; the reduced route uses the explicit formulas
above.  Their agreement is one of the cross-checks this package exists
to run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from .lagrangian import JetPoint, LagrangianProblem, ProblemError
from .solvers import ConvergenceError, SingularJacobianError, newton_solve


class RegularityError(RuntimeError):
    """Singular z-Hessian of the Pontryagin function: z cannot be solved."""


@dataclass(frozen=True, eq=False)
class HigherOrderEmbedding:
    """Bookkeeping for a flattened order-N problem.

    Flat coordinate index(i, alpha) = alpha*n + i carries the jet
    q<i>_alpha; the control z<i> carries the top derivative q<i>_N.
    Phase vectors of the source problem and contact (q, p) vectors of
    the embedded problem coincide slot for slot.
    """

    source: LagrangianProblem

    @property
    def n(self) -> int:
        return self.source.n

    @property
    def N(self) -> int:
        return self.source.N

    def flat_index(self, i: int, alpha: int) -> int:
        return alpha * self.n + i

    def jet_of_flat(self, k: int) -> tuple:
        alpha, i = divmod(k - 1, self.n)
        return (i + 1, alpha)

    def describe(self) -> list:
        out = []
        for k in range(1, self.n * self.N + 1):
            i, alpha = self.jet_of_flat(k)
            out.append(f"q{k}_0 = q{i}_{alpha}")
        for i in range(1, self.n + 1):
            out.append(f"z{i} = q{i}_{self.N}")
        return out


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    """(n, r, psi, L, parameters) on the contact bundle coordinates."""

    n: int
    r: int
    psi: tuple
    L: ex.Expression
    parameters: Mapping[str, float] = field(default_factory=dict)
    embedding: Optional[HigherOrderEmbedding] = None

    def __post_init__(self):
        if self.n < 1:
            raise ProblemError(f"n must be >= 1, got {self.n}")
        if not (1 <= self.r <= self.n):
            raise ProblemError(f"r must satisfy 1 <= r <= n, got {self.r}")
        psi = tuple(self.psi)
        if len(psi) != self.n:
            raise ProblemError(f"need {self.n} constraint expressions, got {len(psi)}")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(
            self, "parameters", {str(k): float(v) for k, v in self.parameters.items()}
        )
        for label, e in [("psi", p) for p in psi] + [("L", self.L)]:
            for s in ex.free_symbols(e):
                if s.kind == "t":
                    continue
                if s.kind == "q":
                    if s.order != 0 or not (1 <= s.index <= self.n):
                        raise ProblemError(
                            f"{label} uses {s}; only q<1..{self.n}>_0 are available"
                        )
                    continue
                if s.kind == "z":
                    if not (1 <= s.index <= self.r):
                        raise ProblemError(f"{label} uses {s}; controls are z1..z{self.r}")
                    continue
                if s.kind == "par":
                    if s.name not in self.parameters:
                        raise ProblemError(f"{label} uses undeclared parameter {s.name!r}")
                    continue
                raise ProblemError(f"{label} may not contain {s}")
        self._check_constraint_rank()

    def _check_constraint_rank(self):
        jac = [
            [ex.partial(p, ex.velocity(a)) for a in range(1, self.r + 1)]
            for p in self.psi
        ]
        rng = np.random.default_rng(1789)
        best = 0
        for _ in range(8):
            b = {ex.TIME: float(rng.uniform(-1, 1))}
            for i in range(1, self.n + 1):
                b[ex.coordinate(i, 0)] = float(rng.uniform(-1, 1))
            for a in range(1, self.r + 1):
                b[ex.velocity(a)] = float(rng.uniform(-1, 1))
            b.update(self.parameter_binding)
            try:
                mat = np.array([[ex.evaluate(e, b) for e in row] for row in jac])
            except ex.EvaluationError:
                continue
            best = max(best, int(np.linalg.matrix_rank(mat)))
        if best < self.r:
            raise ProblemError(
                f"constraint Jacobian dpsi/dz has rank {best} < r = {self.r} "
                "at every sampled point"
            )

    @property
    def parameter_binding(self) -> dict:
        return {ex.parameter(k): v for k, v in self.parameters.items()}

    @property
    def hamiltonian_expr(self) -> ex.Expression:
        """H = p_i psi^i - L with symbolic parameters (display form)."""
        terms = [
            ex.mul(ex.Symbol(ex.momentum(i, 0)), self.psi[i - 1])
            for i in range(1, self.n + 1)
        ]
        return ex.simplify(ex.add(*terms) - self.L)


@dataclass(frozen=True)
class ContactState:
    """Point (t, q^i, z^A, p_i) of the contact bundle."""

    t: float
    q: tuple
    z: tuple
    p: tuple

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if len(self.p) != len(self.q):
            raise ProblemError("contact state needs one momentum per coordinate")

    def binding(self) -> dict:
        out = {ex.TIME: self.t}
        for i, v in enumerate(self.q, start=1):
            out[ex.coordinate(i, 0)] = v
        for a, v in enumerate(self.z, start=1):
            out[ex.velocity(a)] = v
        for i, v in enumerate(self.p, start=1):
            out[ex.momentum(i, 0)] = v
        return out

    def flat(self) -> np.ndarray:
        return np.array(self.q + self.z + self.p)


def contact_labels(n: int, r: int) -> tuple:
    return tuple(
        [f"q{i}_0" for i in range(1, n + 1)]
        + [f"z{a}" for a in range(1, r + 1)]
        + [f"p{i}_0" for i in range(1, n + 1)]
    )


@dataclass(frozen=True)
class DiscreteSection:
    """Sampled curve on the contact bundle; rows are time-ordered."""

    t: np.ndarray
    q: np.ndarray
    z: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        p = np.atleast_2d(np.asarray(self.p, dtype=float))
        m = t.size
        if m < 2:
            raise ProblemError("a section needs at least 2 samples")
        if np.any(np.diff(t) <= 0):
            raise ProblemError("section times must be strictly increasing")
        for name, arr in (("q", q), ("z", z), ("p", p)):
            if arr.shape[0] != m:
                raise ProblemError(f"section {name} has {arr.shape[0]} rows, need {m}")
        if p.shape[1] != q.shape[1]:
            raise ProblemError("section p and q widths differ")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "p", p)

    @property
    def samples(self) -> int:
        return self.t.size

    def perturbed(self, eps: float, direction: "SectionPerturbation") -> "DiscreteSection":
        if direction.dq.shape != self.q.shape or direction.dz.shape != self.z.shape \
                or direction.dp.shape != self.p.shape:
            raise ProblemError("perturbation shapes do not match the section")
        return DiscreteSection(
            self.t,
            self.q + eps * direction.dq,
            self.z + eps * direction.dz,
            self.p + eps * direction.dp,
        )


@dataclass(frozen=True)
class SectionPerturbation:
    """Deformation direction; q-components must vanish at both endpoints."""

    dq: np.ndarray
    dz: np.ndarray
    dp: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dq", np.atleast_2d(np.asarray(self.dq, dtype=float)))
        object.__setattr__(self, "dz", np.atleast_2d(np.asarray(self.dz, dtype=float)))
        object.__setattr__(self, "dp", np.atleast_2d(np.asarray(self.dp, dtype=float)))

    @property
    def fixes_q_endpoints(self) -> bool:
        return bool(
            np.all(self.dq[0] == 0.0) and np.all(self.dq[-1] == 0.0)
        )


# ---------------------------------------------------------------------------
# compiled engine


class _Engine:
    """Compiled artifacts for one problem, built once.

    The `full_*` family differentiates the assembled H expression; the
    `reduced_*` family compiles the explicit right-hand sides (psi and
    dL/dq - p dpsi/dq) piece by piece.  Both are closed over
    (t, q.., z.., p..) positional arguments.
    """

    def __init__(self, cp: ConstrainedProblem):
        n, r = cp.n, cp.r
        self.n, self.r = n, r
        pars = {ex.parameter(k): ex.Constant(v) for k, v in cp.parameters.items()}
        psi = [ex.simplify(ex.substitute(p, pars)) for p in cp.psi]
        L = ex.simplify(ex.substitute(cp.L, pars))
        p_syms = [ex.Symbol(ex.momentum(i, 0)) for i in range(1, n + 1)]
        z_syms = [ex.velocity(a) for a in range(1, r + 1)]
        q_syms = [ex.coordinate(i, 0) for i in range(1, n + 1)]
        args = [ex.TIME] + q_syms + z_syms + [ex.momentum(i, 0) for i in range(1, n + 1)]

        # route one: everything from the single H expression
        H = ex.simplify(ex.add(*(p_syms[i] * psi[i] for i in range(n))) - L)
        dHdz = [ex.partial(H, z) for z in z_syms]
        d2Hdz2 = [ex.partial(d, z) for d in dHdz for z in z_syms]
        dHdp = [ex.partial(H, ex.momentum(i, 0)) for i in range(1, n + 1)]
        dHdq = [ex.partial(H, s) for s in q_syms]
        self.hamiltonian = ex.compile_evaluator([H], args)
        self.full_residual_jac = ex.compile_evaluator(dHdz + d2Hdz2, args)
        self.full_rhs = ex.compile_evaluator(
            dHdp + [ex.Negate(d) for d in dHdq], args
        )

        # route two: the explicit formulas assembled piecewise
        dpsi_dz = [[ex.partial(psi[i], z) for z in z_syms] for i in range(n)]
        dL_dz = [ex.partial(L, z) for z in z_syms]
        red_residual = [
            ex.simplify(
                ex.add(*(p_syms[i] * dpsi_dz[i][a] for i in range(n))) - dL_dz[a]
            )
            for a in range(r)
        ]
        red_jac = [ex.partial(e, z) for e in red_residual for z in z_syms]
        dpsi_dq = [[ex.partial(psi[i], s) for s in q_syms] for i in range(n)]
        dL_dq = [ex.partial(L, s) for s in q_syms]
        red_pdot = [
            ex.simplify(
                dL_dq[k] - ex.add(*(p_syms[i] * dpsi_dq[i][k] for i in range(n)))
            )
            for k in range(n)
        ]
        self.psi_values = ex.compile_evaluator(psi, args)
        self.reduced_residual_jac = ex.compile_evaluator(red_residual + red_jac, args)
        self.reduced_pdot = ex.compile_evaluator(red_pdot, args)

    def solve_z(self, t, q, p, guess, variant: str) -> np.ndarray:
        r = self.r
        compiled = (
            self.full_residual_jac if variant == "full" else self.reduced_residual_jac
        )
        tol = 1e-12 * (1.0 + float(np.max(np.abs(p))))

        def fun_jac(z):
            raw = compiled(t, *q, *z, *p)
            return np.array(raw[:r]), np.array(raw[r:]).reshape(r, r)

        try:
            return newton_solve(fun_jac, guess, tol, label="stationarity condition")
        except SingularJacobianError as err:
            raise RegularityError(str(err)) from None


def _engine_for(cp: ConstrainedProblem) -> _Engine:
    cache = getattr(cp, "_engine", None)
    if cache is None:
        cache = _Engine(cp)
        object.__setattr__(cp, "_engine", cache)
    return cache


# ---------------------------------------------------------------------------
# pointwise operations


def pontryagin_hamiltonian_value(cp: ConstrainedProblem, s: ContactState) -> float:
    """H = p_i psi^i - L at the given contact point (no solving)."""
    eng = _engine_for(cp)
    return eng.hamiltonian(s.t, *s.q, *s.z, *s.p)[0]


def stationarity_residual(cp: ConstrainedProblem, s: ContactState) -> np.ndarray:
    """dH/dz^A at the point; zero exactly on the surface S."""
    eng = _engine_for(cp)
    raw = eng.full_residual_jac(s.t, *s.q, *s.z, *s.p)
    return np.array(raw[: cp.r])


def regularity_matrix(cp: ConstrainedProblem, s: ContactState) -> np.ndarray:
    """The r x r matrix d2H/dz dz at the point."""
    eng = _engine_for(cp)
    raw = eng.full_residual_jac(s.t, *s.q, *s.z, *s.p)
    return np.array(raw[cp.r:]).reshape(cp.r, cp.r)


def regularity_at(cp: ConstrainedProblem, s: ContactState) -> float:
    """det of the r x r matrix d2H/dz dz at the point."""
    jac = regularity_matrix(cp, s)
    return float(jac[0, 0]) if cp.r == 1 else float(np.linalg.det(jac))


def solve_z(
    cp: ConstrainedProblem,
    t: float,
    q: Sequence[float],
    p: Sequence[float],
    guess: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Controls z^A satisfying the stationarity condition at (t, q, p)."""
    eng = _engine_for(cp)
    x0 = np.array(guess, dtype=float) if guess is not None else np.zeros(cp.r)
    return eng.solve_z(t, np.asarray(q, float), np.asarray(p, float), x0, "full")


def reduced_hamiltonian_value(
    cp: ConstrainedProblem,
    t: float,
    q: Sequence[float],
    p: Sequence[float],
    guess: Optional[Sequence[float]] = None,
) -> float:
    """H evaluated at the solved z: the Hamiltonian induced on S."""
    z = solve_z(cp, t, q, p, guess)
    eng = _engine_for(cp)
    return eng.hamiltonian(t, *q, *z, *p)[0]


def reduced_field_at(
    cp: ConstrainedProblem,
    t: float,
    q: Sequence[float],
    p: Sequence[float],
    guess: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """(qdot, pdot) of the reduced Hamilton equations at one point."""
    field = PontryaginField(cp, variant="reduced")
    if guess is not None:
        field.guess = np.array(guess, dtype=float)
    return field(t, np.concatenate([np.asarray(q, float), np.asarray(p, float)]))


class PontryaginField:
    """(q, p) flow with z solved per evaluation; warm-started per instance.

    variant "reduced" uses the explicit formulas psi and dL/dq - p dpsi/dq;
    variant "full" uses dH/dp and -dH/dq differentiated from H itself.
    """

    def __init__(self, cp: ConstrainedProblem, variant: str = "reduced"):
        if variant not in ("reduced", "full"):
            raise ValueError(f"unknown variant {variant!r}")
        self.problem = cp
        self.variant = variant
        self.engine = _engine_for(cp)
        self.dimension = 2 * cp.n
        self.labels = tuple(
            [f"q{i}_0" for i in range(1, cp.n + 1)]
            + [f"p{i}_0" for i in range(1, cp.n + 1)]
        )
        self.guess = np.zeros(cp.r)

    def solve_controls(self, t: float, y: np.ndarray) -> np.ndarray:
        n = self.problem.n
        z = self.engine.solve_z(t, y[:n], y[n:], self.guess, self.variant)
        self.guess = z
        return z

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        n = self.problem.n
        q, p = y[:n], y[n:]
        z = self.solve_controls(t, y)
        out = np.empty(2 * n)
        if self.variant == "full":
            out[:] = self.engine.full_rhs(t, *q, *z, *p)
        else:
            out[:n] = self.engine.psi_values(t, *q, *z, *p)
            out[n:] = self.engine.reduced_pdot(t, *q, *z, *p)
        return out


def reduced_field(cp: ConstrainedProblem) -> PontryaginField:
    return PontryaginField(cp, variant="reduced")


def full_field(cp: ConstrainedProblem) -> PontryaginField:
    return PontryaginField(cp, variant="full")


# ---------------------------------------------------------------------------
# sections, admissibility, action


def admissibility_residual(cp: ConstrainedProblem, sec: DiscreteSection) -> np.ndarray:
    """Central-difference dq/dt minus psi at each interior sample."""
    if sec.samples < 3:
        raise ProblemError("admissibility needs at least 3 samples")
    steps = np.diff(sec.t)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * (sec.t[-1] - sec.t[0]):
        raise ProblemError("admissibility needs a uniform time step")
    eng = _engine_for(cp)
    out = np.empty((sec.samples - 2, cp.n))
    for k in range(1, sec.samples - 1):
        dq = (sec.q[k + 1] - sec.q[k - 1]) / (sec.t[k + 1] - sec.t[k - 1])
        psi = np.array(eng.psi_values(sec.t[k], *sec.q[k], *sec.z[k], *sec.p[k]))
        out[k - 1] = dq - psi
    return out


def action_value(cp: ConstrainedProblem, sec: DiscreteSection) -> float:
    """Trapezoidal quadrature of -H + p . dq/dt along the section."""
    eng = _engine_for(cp)
    dq = np.gradient(sec.q, sec.t, axis=0)
    integrand = np.empty(sec.samples)
    for k in range(sec.samples):
        h = eng.hamiltonian(sec.t[k], *sec.q[k], *sec.z[k], *sec.p[k])[0]
        integrand[k] = -h + float(np.dot(sec.p[k], dq[k]))
    return float(np.trapezoid(integrand, sec.t))


def hamiltonian_monitor(cp: ConstrainedProblem, z0: Optional[Sequence[float]] = None):
    """Callable (t, [q p] vector) -> reduced H, warm-started across calls."""
    eng = _engine_for(cp)
    n = cp.n
    state = {"guess": np.array(z0, dtype=float) if z0 is not None else np.zeros(cp.r)}

    def monitor(t: float, y: np.ndarray) -> float:
        z = eng.solve_z(t, y[:n], y[n:], state["guess"], "reduced")
        state["guess"] = z
        return eng.hamiltonian(t, *y[:n], *z, *y[n:])[0]

    return monitor


def section_from_states(
    cp: ConstrainedProblem,
    times: Sequence[float],
    states: Sequence[Sequence[float]],
    variant: str = "reduced",
) -> DiscreteSection:
    """Attach solved controls to integrated (q, p) samples."""
    eng = _engine_for(cp)
    n, r = cp.n, cp.r
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    z = np.empty((times.size, r))
    guess = np.zeros(r)
    for k in range(times.size):
        guess = eng.solve_z(times[k], states[k, :n], states[k, n:], guess, variant)
        z[k] = guess
    return DiscreteSection(times, states[:, :n], z, states[:, n:])


# ---------------------------------------------------------------------------
# embedding of higher-order problems


def from_higher_order(problem: LagrangianProblem) -> ConstrainedProblem:
    """Flatten an order-N problem into first-order constrained form."""
    n, N = problem.n, problem.N
    emb = HigherOrderEmbedding(source=problem)
    mapping = {}
    for i in range(1, n + 1):
        for alpha in range(N):
            mapping[ex.coordinate(i, alpha)] = ex.Symbol(
                ex.coordinate(emb.flat_index(i, alpha), 0)
            )
        mapping[ex.coordinate(i, N)] = ex.Symbol(ex.velocity(i))
    flat_L = ex.simplify(ex.substitute(problem.L, mapping))
    psi = []
    for alpha in range(N):
        for i in range(1, n + 1):
            if alpha <= N - 2:
                psi.append(ex.Symbol(ex.coordinate(emb.flat_index(i, alpha + 1), 0)))
            else:
                psi.append(ex.Symbol(ex.velocity(i)))
    return ConstrainedProblem(
        n=n * N,
        r=n,
        psi=tuple(psi),
        L=flat_L,
        parameters=problem.parameters,
        embedding=emb,
    )


def contact_from_jets(cp: ConstrainedProblem, point: JetPoint) -> ContactState:
    """Initial contact point of an embedded problem from order-(2N-1) jets."""
    if cp.embedding is None:
        raise ProblemError("this problem was not built from a higher-order one")
    from .ostrogradsky import jet_to_phase

    src = cp.embedding.source
    phase = jet_to_phase(src, point)
    flat = phase.flat()
    nN = src.n * src.N
    z = tuple(point.value(i, src.N) for i in range(1, src.n + 1))
    return ContactState(point.t, tuple(flat[:nN]), z, tuple(flat[nN:]))
