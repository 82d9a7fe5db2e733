"""Route assembly, cross-route verification, and report rendering.

The same dynamics can be produced four ways: the explicit
Euler-Lagrange system, the Ostrogradsky Hamilton equations, and the
full and reduced forms of the constrained Hamilton equations applied to
the flattened problem.  Verification integrates every route the initial
data supports, cross-compares trajectories on their shared columns,
monitors conserved quantities, and finite-difference-checks the Hamilton
equations against the implemented fields.  Reports are deterministic:
two runs on the same file produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from . import integrate as it
from . import lagrangian as lg
from . import ostrogradsky as og
from . import pontryagin as pt
from .problemfile import ProblemSpec, RunOptions, SchemaError
from .solvers import ConvergenceError

ROUTES = ("el", "ostro", "pontryagin-full", "pontryagin-reduced")
ROUTE_TITLES = {
    "el": "euler-lagrange",
    "ostro": "ostrogradsky",
    "pontryagin-full": "pontryagin-full",
    "pontryagin-reduced": "pontryagin-reduced",
}
DEVIATION_TOL = 1e-8
DRIFT_TOL = 1e-8
REDUCTION_TOL = 1e-10
FD_TOL = 1e-6
STATIONARITY_TOL = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: Optional[float] = None
    tolerance: Optional[float] = None
    detail: str = ""


@dataclass
class RunReport:
    problem: str
    kind: str
    derived: dict = field(default_factory=dict)
    routes: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name, passed, value=None, tolerance=None, detail=""):
        self.checks.append(
            CheckResult(
                name,
                bool(passed),
                None if value is None else float(value),
                None if tolerance is None else float(tolerance),
                detail,
            )
        )


def embedded_form(problem: lg.LagrangianProblem) -> pt.ConstrainedProblem:
    """The flattened constrained form, built once per problem object."""
    cache = getattr(problem, "_embedded_form", None)
    if cache is None:
        cache = pt.from_higher_order(problem)
        object.__setattr__(problem, "_embedded_form", cache)
    return cache


def applicable_routes(spec: ProblemSpec) -> tuple:
    if spec.kind == "constrained":
        return ("pontryagin-full", "pontryagin-reduced")
    if spec.initial_kind == "jets":
        return ROUTES
    return ("ostro", "pontryagin-full", "pontryagin-reduced")


def _initial_controls(spec: ProblemSpec) -> Optional[np.ndarray]:
    """Warm-start for the control solve, when the initial data carries one."""
    if spec.kind == "constrained":
        return np.array(spec.contact_state().z)
    if spec.initial_kind == "jets":
        point = spec.jet_point()
        N = spec.problem.N
        return np.array(
            [point.value(i, N) for i in range(1, spec.problem.n + 1)]
        )
    return None


def run_route(spec: ProblemSpec, route: str, run: RunOptions) -> it.Trajectory:
    """Integrate one route and return its labeled trajectory.

    The pontryagin-full trajectory carries the solved controls as extra
    z columns after the momenta.
    """
    if route not in ROUTES:
        raise SchemaError(f"route: unknown route {route!r}; choose from {ROUTES}")
    meta = {"problem": spec.name, "route": ROUTE_TITLES[route]}

    if spec.kind == "constrained":
        if route in ("el", "ostro"):
            raise SchemaError(
                f"route: {route} applies to higher-order problems only"
            )
        cp = spec.problem
        contact = spec.contact_state()
        y0 = np.concatenate([contact.q, contact.p])
        labels = tuple(
            [f"q{i}_0" for i in range(1, cp.n + 1)]
            + [f"p{i}_0" for i in range(1, cp.n + 1)]
        )
    else:
        problem = spec.problem
        # fail fast: a singular top Hessian breaks every route eventually,
        # but Newton can converge by accident when the residual starts at 0
        lg.require_nondegenerate(problem, _nondegeneracy_point(spec))
        if route == "el":
            point = spec.jet_point()
            field = lg.el_field(problem)
            return it.integrate(
                field, point.flat(), run.t0, run.t1,
                dt=run.dt, method=run.method, tol=run.tol, metadata=meta,
            )
        phase = spec.phase_state()
        if route == "ostro":
            field = og.hamiltonian_field(problem)
            return it.integrate(
                field, phase.flat(), run.t0, run.t1,
                dt=run.dt, method=run.method, tol=run.tol, metadata=meta,
            )
        cp = embedded_form(problem)
        y0 = phase.flat()
        labels = og.phase_labels(problem.n, problem.N)

    variant = "full" if route == "pontryagin-full" else "reduced"
    field = pt.PontryaginField(cp, variant=variant)
    z0 = _initial_controls(spec)
    if z0 is not None:
        field.guess = z0
    traj = it.integrate(
        field, y0, run.t0, run.t1,
        dt=run.dt, method=run.method, tol=run.tol,
        labels=labels, metadata=meta,
    )
    if variant == "full":
        sec = pt.section_from_states(cp, traj.times, traj.states, variant="full")
        states = np.hstack([traj.states, sec.z])
        labels = labels + tuple(f"z{a}" for a in range(1, cp.r + 1))
        traj = it.Trajectory(traj.times, states, labels, traj.metadata)
    return traj


# ---------------------------------------------------------------------------
# derivation summaries


def _sym_det(rows) -> ex.Expression:
    r = len(rows)
    if r == 1:
        return ex.simplify(rows[0][0])
    terms = []
    for j in range(r):
        minor = [row[:j] + row[j + 1:] for row in rows[1:]]
        term = ex.mul(rows[0][j], _sym_det(minor))
        terms.append(term if j % 2 == 0 else ex.Negate(term))
    return ex.simplify(ex.add(*terms))


def _regularity_expression(cp: pt.ConstrainedProblem) -> ex.Expression:
    H = cp.hamiltonian_expr
    z = [ex.velocity(a) for a in range(1, cp.r + 1)]
    rows = [
        tuple(ex.partial(ex.partial(H, za), zb) for zb in z)
        for za in z
    ]
    return _sym_det(rows)


def derive_report(spec: ProblemSpec) -> RunReport:
    """Symbolic derivations only; no initial data required."""
    report = RunReport(problem=spec.name, kind=spec.kind)
    d = report.derived
    if spec.kind == "higher-order":
        problem = spec.problem
        d["L"] = ex.to_text(problem.L)
        for i, e in enumerate(lg.euler_lagrange(problem), start=1):
            d[f"E{i}"] = ex.to_text(e)
        momenta = og.momenta_expressions(problem)
        for alpha in range(problem.N):
            for i in range(1, problem.n + 1):
                d[f"p{i}_{alpha}"] = ex.to_text(momenta.momentum(i, alpha))
        cp = embedded_form(problem)
        d["hamiltonian"] = ex.to_text(cp.hamiltonian_expr)
        for a, res in enumerate(_stationarity_exprs(cp), start=1):
            d[f"stationarity{a}"] = ex.to_text(res)
        d["regularity"] = ex.to_text(_regularity_expression(cp))
        for line in cp.embedding.describe():
            key, _, value = line.partition(" = ")
            d[f"embedding.{key}"] = value
    else:
        cp = spec.problem
        d["L"] = ex.to_text(cp.L)
        for i, p in enumerate(cp.psi, start=1):
            d[f"psi{i}"] = ex.to_text(p)
        d["hamiltonian"] = ex.to_text(cp.hamiltonian_expr)
        for a, res in enumerate(_stationarity_exprs(cp), start=1):
            d[f"stationarity{a}"] = ex.to_text(res)
        d["regularity"] = ex.to_text(_regularity_expression(cp))
    return report


def _stationarity_exprs(cp: pt.ConstrainedProblem):
    H = cp.hamiltonian_expr
    return [
        ex.partial(H, ex.velocity(a)) for a in range(1, cp.r + 1)
    ]


# ---------------------------------------------------------------------------
# verification checks


def _deviation_tolerance(a: it.Trajectory, b: it.Trajectory) -> float:
    """Base tolerance plus an interpolation allowance for unequal grids."""
    if a.samples == b.samples and np.array_equal(a.times, b.times):
        return DEVIATION_TOL
    coarse = a if a.samples <= b.samples else b
    return DEVIATION_TOL + float(np.max(np.diff(coarse.times))) ** 2


def _check_deviation(report, name, a, b):
    tol = _deviation_tolerance(a, b)
    value = it.max_deviation(a, b)
    report.check(f"deviation.{name}", value < tol, value, tol)


def _fd_hamilton_check(report, name, h_of, field_of, states, times, dim_q):
    """Central differences of H against the implemented field components."""
    worst = 0.0
    for t, y in zip(times, states):
        got = field_of(t, y)
        for j in range(2 * dim_q):
            step = 1e-6 * (1.0 + abs(y[j]))
            up = y.copy()
            up[j] += step
            down = y.copy()
            down[j] -= step
            grad = (h_of(t, up) - h_of(t, down)) / (2.0 * step)
            want = grad if j >= dim_q else -grad
            # dH/dp pairs with qdot slots, -dH/dq with pdot slots
            slot = j - dim_q if j >= dim_q else j + dim_q
            err = abs(got[slot] - want) / max(1.0, abs(got[slot]), abs(want))
            worst = max(worst, err)
    report.check(f"legendre.{name}", worst < FD_TOL, worst, FD_TOL)


def _sample_indices(samples: int, want: int = 6) -> np.ndarray:
    return np.unique(np.linspace(0, samples - 1, want).astype(int))


def run_verification(
    spec: ProblemSpec,
    run: Optional[RunOptions] = None,
    trajectories: Optional[dict] = None,
) -> RunReport:
    """All applicable routes, comparisons, drifts, and derivative checks.

    Pass a dict as `trajectories` to receive the integrated routes
    (keyed by route name) for export or plotting.
    """
    run = run or spec.run
    report = derive_report(spec)
    sink = trajectories if trajectories is not None else {}
    if spec.kind == "higher-order":
        _verify_higher_order(spec, run, report, sink)
    else:
        _verify_constrained(spec, run, report, sink)
    return report


def _record_route(report, route, traj: it.Trajectory):
    report.routes[ROUTE_TITLES[route]] = {
        "samples": traj.samples,
        "t0": float(traj.times[0]),
        "t1": float(traj.times[-1]),
        "method": traj.metadata.get("method", ""),
    }


def _autonomous(*exprs) -> bool:
    return all(ex.TIME not in ex.free_symbols(e) for e in exprs)


def _verify_higher_order(
    spec: ProblemSpec, run: RunOptions, report: RunReport, trajectories: dict
):
    problem = spec.problem

    # derivation stage: the top Hessian must be invertible at the start
    try:
        point = _nondegeneracy_point(spec)
        det = lg.nondegeneracy_at(problem, point)
        threshold = lg.degeneracy_threshold(lg.hessian_at(problem, point))
        ok = abs(det) > threshold
        report.check(
            "derivation.nondegenerate", ok, det, threshold,
            "" if ok else "singular top Hessian",
        )
        if not ok:
            return
    except (lg.DegeneracyError, ConvergenceError) as err:
        report.check("derivation.nondegenerate", False, detail=str(err))
        return

    for route in applicable_routes(spec):
        try:
            trajectories[route] = run_route(spec, route, run)
            _record_route(report, route, trajectories[route])
        except (lg.DegeneracyError, pt.RegularityError, ConvergenceError) as err:
            report.check(f"route.{route}", False, detail=str(err))
    pairs = [
        ("el", "ostro", "el-vs-ostro"),
        ("ostro", "pontryagin-reduced", "ostro-vs-pontryagin-reduced"),
        ("pontryagin-full", "pontryagin-reduced", "pontryagin-full-vs-reduced"),
    ]
    for a, b, name in pairs:
        if a in trajectories and b in trajectories:
            _check_deviation(report, name, trajectories[a], trajectories[b])

    if "ostro" not in trajectories:
        return
    ostro = trajectories["ostro"]
    z0 = _initial_controls(spec)

    if _autonomous(problem.bound_lagrangian):
        drift = it.invariant_drift(ostro, og.hamiltonian_monitor(problem, z0))
        report.check("drift.hamiltonian", drift < DRIFT_TOL, drift, DRIFT_TOL)

    # flattened-reduction consistency at the initial point
    cp = embedded_form(problem)
    phase = spec.phase_state()
    flat = phase.flat()
    nN = problem.n * problem.N
    h_direct = og.hamiltonian_value(problem, phase, guess=z0)
    h_reduced = pt.reduced_hamiltonian_value(
        cp, phase.t, flat[:nN], flat[nN:], guess=z0
    )
    h_err = abs(h_direct - h_reduced) / max(1.0, abs(h_direct))
    report.check("reduction.hamiltonian", h_err < REDUCTION_TOL, h_err, REDUCTION_TOL)
    f_direct = og.hamiltonian_field_at(problem, phase, guess=z0)
    f_reduced = pt.reduced_field_at(cp, phase.t, flat[:nN], flat[nN:], guess=z0)
    f_err = float(np.max(np.abs(f_direct - f_reduced)))
    report.check("reduction.field", f_err < REDUCTION_TOL, f_err, REDUCTION_TOL)

    idx = _sample_indices(ostro.samples)
    monitor = og.hamiltonian_monitor(problem, z0)
    field = og.hamiltonian_field(problem)
    if z0 is not None:
        field.solver.guess = np.array(z0, dtype=float)
    _fd_hamilton_check(
        report, "finite-difference", monitor, field,
        ostro.states[idx], ostro.times[idx], nN,
    )


def _nondegeneracy_point(spec: ProblemSpec) -> lg.JetPoint:
    problem = spec.problem
    if spec.initial_kind == "jets":
        return spec.jet_point().truncated(problem.N)
    phase = spec.phase_state()
    top = og.solve_top_velocity(problem, phase)
    rows = tuple(
        tuple(phase.q[i]) + (float(top[i]),) for i in range(problem.n)
    )
    return lg.JetPoint(phase.t, rows)


def _verify_constrained(
    spec: ProblemSpec, run: RunOptions, report: RunReport, trajectories: dict
):
    cp = spec.problem
    contact = spec.contact_state()

    det = pt.regularity_at(cp, contact)
    threshold = lg.degeneracy_threshold(pt.regularity_matrix(cp, contact))
    ok = abs(det) > threshold
    report.check(
        "derivation.regular", ok, det, threshold,
        "" if ok else "singular z-Hessian of the Pontryagin function",
    )
    if not ok:
        return

    res = float(np.max(np.abs(pt.stationarity_residual(cp, contact))))
    report.check(
        "initial.stationarity", res < STATIONARITY_TOL, res, STATIONARITY_TOL,
        "" if res < STATIONARITY_TOL else "initial z is off the stationarity surface",
    )

    for route in applicable_routes(spec):
        try:
            trajectories[route] = run_route(spec, route, run)
            _record_route(report, route, trajectories[route])
        except (pt.RegularityError, ConvergenceError) as err:
            report.check(f"route.{route}", False, detail=str(err))
    if len(trajectories) == 2:
        _check_deviation(
            report, "pontryagin-full-vs-reduced",
            trajectories["pontryagin-full"], trajectories["pontryagin-reduced"],
        )

    if "pontryagin-reduced" not in trajectories:
        return
    red = trajectories["pontryagin-reduced"]

    if _autonomous(cp.L, *cp.psi):
        drift = it.invariant_drift(red, pt.hamiltonian_monitor(cp, contact.z))
        report.check("drift.hamiltonian", drift < DRIFT_TOL, drift, DRIFT_TOL)

    idx = _sample_indices(red.samples)
    monitor = pt.hamiltonian_monitor(cp, contact.z)
    field = pt.reduced_field(cp)
    field.guess = np.array(contact.z)
    _fd_hamilton_check(
        report, "finite-difference", monitor, field,
        red.states[idx], red.times[idx], cp.n,
    )


# ---------------------------------------------------------------------------
# rendering


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_text(report: RunReport) -> str:
    lines = [
        "ostrokit report",
        f"problem = {report.problem}",
        f"kind = {report.kind}",
        "",
        "[derived]",
    ]
    for key, value in report.derived.items():
        lines.append(f"{key} = {value}")
    if report.routes:
        lines.append("")
        lines.append("[routes]")
        for name, info in report.routes.items():
            lines.append(
                f"{name}: method={info['method']} samples={info['samples']} "
                f"t0={_fmt(info['t0'])} t1={_fmt(info['t1'])}"
            )
    if report.checks:
        lines.append("")
        lines.append("[checks]")
        for c in report.checks:
            status = "pass" if c.passed else "FAIL"
            line = f"{status} {c.name} value={_fmt(c.value)} tol={_fmt(c.tolerance)}"
            if c.detail:
                line += f" ({c.detail})"
            lines.append(line)
        lines.append("")
        total = len(report.checks)
        good = sum(1 for c in report.checks if c.passed)
        verdict = "PASS" if report.passed else "FAIL"
        lines.append(f"result = {verdict} ({good}/{total})")
    return "\n".join(lines) + "\n"


def report_as_dict(report: RunReport) -> dict:
    return {
        "problem": report.problem,
        "kind": report.kind,
        "derived": dict(report.derived),
        "routes": {k: dict(v) for k, v in report.routes.items()},
        "checks": [
            {
                "name": c.name,
                "passed": c.passed,
                "value": c.value,
                "tolerance": c.tolerance,
                "detail": c.detail,
            }
            for c in report.checks
        ],
        "passed": report.passed,
    }
