"""Loading and validation of JSON problem files.

A problem file is a single JSON object.  Shared fields:

    schema       optional int, currently 1
    kind         "higher-order" or "constrained"
    n            number of configuration coordinates
    lagrangian   expression string
    parameters   optional {name: value}
    initial      optional, exactly one of the forms below
    run          optional {t0, t1, dt, tol, method}

Higher-order files add N (the derivative order) and take initial
conditions either as {"jets": [[2N values] per coordinate]} or as
{"phase": {"q": [...], "p": [...]}} with n*N entries each.  Constrained
files add r and psi (a list of n expression strings over t, q<i>_0 and
z<A>) and take {"contact": {"q": [...], "z": [...], "p": [...]}}.

Validation failures raise SchemaError carrying the path of the
offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from . import expr as ex
from .lagrangian import JetPoint, LagrangianProblem, ProblemError
from .ostrogradsky import PhaseState
from .pontryagin import ConstrainedProblem, ContactState

SCHEMA_VERSION = 1
KINDS = ("higher-order", "constrained")
METHODS = ("rk4", "rk45")


class SchemaError(ValueError):
    """A problem file violates the schema; the message names the field."""


@dataclass(frozen=True)
class RunOptions:
    t0: float = 0.0
    t1: float = 1.0
    dt: float = 1e-3
    tol: float = 1e-9
    method: str = "rk4"

    def overridden(self, t1=None, dt=None, method=None) -> "RunOptions":
        return RunOptions(
            t0=self.t0,
            t1=self.t1 if t1 is None else float(t1),
            dt=self.dt if dt is None else float(dt),
            tol=self.tol,
            method=self.method if method is None else str(method),
        )


@dataclass(frozen=True)
class ProblemSpec:
    """A validated problem file plus the constructed problem object."""

    name: str
    kind: str
    problem: Union[LagrangianProblem, ConstrainedProblem]
    initial_kind: Optional[str]  # "jets" | "phase" | "contact" | None
    initial_data: Optional[dict]
    run: RunOptions

    def jet_point(self) -> JetPoint:
        if self.initial_kind != "jets":
            raise SchemaError(
                "initial: this operation needs jets initial conditions"
            )
        return JetPoint(self.run.t0, self.initial_data["jets"])

    def phase_state(self) -> PhaseState:
        if self.kind != "higher-order":
            raise SchemaError("initial: phase data applies to higher-order problems")
        if self.initial_kind == "phase":
            return PhaseState(
                self.run.t0, self.initial_data["q"], self.initial_data["p"]
            )
        if self.initial_kind == "jets":
            from .ostrogradsky import jet_to_phase

            return jet_to_phase(self.problem, self.jet_point())
        raise SchemaError("initial: missing initial conditions")

    def contact_state(self) -> ContactState:
        if self.kind != "constrained":
            raise SchemaError("initial: contact data applies to constrained problems")
        if self.initial_kind != "contact":
            raise SchemaError("initial: missing contact initial conditions")
        d = self.initial_data
        return ContactState(self.run.t0, d["q"], d["z"], d["p"])


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise SchemaError(f"{path}: {message}")


def _get(obj: dict, key: str, kinds, path: str, required: bool = True, default=None):
    if key not in obj:
        _require(not required, f"{path}{key}", "required field is missing")
        return default
    value = obj[key]
    if kinds is int and isinstance(value, bool):
        raise SchemaError(f"{path}{key}: expected int, got bool")
    if kinds is not None and not isinstance(value, kinds):
        names = (
            kinds.__name__
            if isinstance(kinds, type)
            else "/".join(k.__name__ for k in kinds)
        )
        raise SchemaError(f"{path}{key}: expected {names}, got {type(value).__name__}")
    return value


def _number(value, path: str) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             path, "expected a number")
    return float(value)


def _vector(value, length: int, path: str) -> list:
    _require(isinstance(value, list), path, "expected an array")
    _require(len(value) == length, path, f"expected {length} values, got {len(value)}")
    return [_number(v, f"{path}[{k}]") for k, v in enumerate(value)]


def _parse_expr(text, path: str) -> ex.Expression:
    _require(isinstance(text, str), path, "expected an expression string")
    try:
        return ex.parse(text)
    except ex.ParseError as err:
        raise SchemaError(f"{path}: {err}") from None


def _check_orders(e: ex.Expression, N: int, path: str):
    for s in ex.free_symbols(e):
        if s.kind == "q" and s.order > N:
            raise SchemaError(f"{path}: {s} order exceeds N = {N}")


def _unknown_keys(obj: dict, allowed, path: str):
    extra = sorted(set(obj) - set(allowed))
    _require(not extra, f"{path}{extra[0]}" if extra else path, "unknown field")


def load_problem(path) -> ProblemSpec:
    """Read, validate, and construct the problem described by a JSON file."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such file")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: not valid JSON ({err})") from None
    _require(isinstance(raw, dict), str(path), "top level must be a JSON object")

    _unknown_keys(
        raw,
        ("schema", "kind", "n", "N", "r", "lagrangian", "psi", "parameters",
         "initial", "run"),
        "",
    )
    schema = _get(raw, "schema", int, "", required=False, default=SCHEMA_VERSION)
    _require(schema == SCHEMA_VERSION, "schema", f"unsupported version {schema}")
    kind = _get(raw, "kind", str, "")
    _require(kind in KINDS, "kind", f"must be one of {KINDS}, got {kind!r}")
    n = _get(raw, "n", int, "")
    _require(n >= 1, "n", "must be a positive integer")

    parameters = _get(raw, "parameters", dict, "", required=False, default={})
    parameters = {
        str(k): _number(v, f"parameters.{k}") for k, v in parameters.items()
    }

    L = _parse_expr(_get(raw, "lagrangian", str, ""), "lagrangian")

    if kind == "higher-order":
        _require("psi" not in raw, "psi", "only constrained problems take psi")
        _require("r" not in raw, "r", "only constrained problems take r")
        N = _get(raw, "N", int, "")
        _require(N >= 1, "N", "must be a positive integer")
        _check_orders(L, N, "lagrangian")
        try:
            problem = LagrangianProblem(n=n, N=N, L=L, parameters=parameters)
        except ProblemError as err:
            raise SchemaError(f"lagrangian: {err}") from None
    else:
        _require("N" not in raw, "N", "constrained problems declare r, not N")
        r = _get(raw, "r", int, "")
        _require(1 <= r <= n, "r", f"must satisfy 1 <= r <= n = {n}")
        psi_raw = _get(raw, "psi", list, "")
        _require(len(psi_raw) == n, "psi", f"expected {n} expressions, got {len(psi_raw)}")
        psi = tuple(
            _parse_expr(txt, f"psi[{k}]") for k, txt in enumerate(psi_raw)
        )
        try:
            problem = ConstrainedProblem(
                n=n, r=r, psi=psi, L=L, parameters=parameters
            )
        except ProblemError as err:
            raise SchemaError(f"problem: {err}") from None

    run_raw = _get(raw, "run", dict, "", required=False, default={})
    _unknown_keys(run_raw, ("t0", "t1", "dt", "tol", "method"), "run.")
    defaults = RunOptions()
    t0 = _number(run_raw.get("t0", defaults.t0), "run.t0")
    t1 = _number(run_raw.get("t1", defaults.t1), "run.t1")
    _require(t1 > t0, "run.t1", f"must exceed t0 = {t0}")
    dt = _number(run_raw.get("dt", defaults.dt), "run.dt")
    _require(dt > 0, "run.dt", "must be positive")
    tol = _number(run_raw.get("tol", defaults.tol), "run.tol")
    _require(tol > 0, "run.tol", "must be positive")
    method = _get(run_raw, "method", str, "run.", required=False,
                  default=defaults.method)
    _require(method in METHODS, "run.method", f"must be one of {METHODS}")
    run = RunOptions(t0=t0, t1=t1, dt=dt, tol=tol, method=method)

    initial_kind, initial_data = _load_initial(raw, kind, problem)

    return ProblemSpec(
        name=path.stem,
        kind=kind,
        problem=problem,
        initial_kind=initial_kind,
        initial_data=initial_data,
        run=run,
    )


def _load_initial(raw: dict, kind: str, problem):
    block = _get(raw, "initial", dict, "", required=False)
    if block is None:
        return None, None
    forms = [k for k in ("jets", "phase", "contact") if k in block]
    _unknown_keys(block, ("jets", "phase", "contact"), "initial.")
    _require(len(forms) == 1, "initial",
             f"need exactly one of jets/phase/contact, got {forms or 'none'}")
    form = forms[0]

    if kind == "higher-order":
        n, N = problem.n, problem.N
        _require(form != "contact", "initial.contact",
                 "contact data applies to constrained problems")
        if form == "jets":
            rows = block["jets"]
            _require(isinstance(rows, list), "initial.jets", "expected an array")
            if n == 1 and rows and not isinstance(rows[0], list):
                rows = [rows]
            _require(len(rows) == n, "initial.jets",
                     f"expected {n} rows of jets, got {len(rows)}")
            rows = [
                _vector(row, 2 * N, f"initial.jets[{k}]")
                for k, row in enumerate(rows)
            ]
            return "jets", {"jets": rows}
        body = block["phase"]
        _require(isinstance(body, dict), "initial.phase", "expected an object")
        _unknown_keys(body, ("q", "p"), "initial.phase.")
        q = _vector(_get(body, "q", list, "initial.phase."), n * N, "initial.phase.q")
        p = _vector(_get(body, "p", list, "initial.phase."), n * N, "initial.phase.p")
        qrows = [q[i::n] for i in range(n)]
        prows = [p[i::n] for i in range(n)]
        return "phase", {"q": qrows, "p": prows}

    _require(form == "contact", f"initial.{form}",
             "constrained problems take contact initial conditions")
    body = block["contact"]
    _require(isinstance(body, dict), "initial.contact", "expected an object")
    _unknown_keys(body, ("q", "z", "p"), "initial.contact.")
    n, r = problem.n, problem.r
    return "contact", {
        "q": _vector(_get(body, "q", list, "initial.contact."), n, "initial.contact.q"),
        "z": _vector(_get(body, "z", list, "initial.contact."), r, "initial.contact.z"),
        "p": _vector(_get(body, "p", list, "initial.contact."), n, "initial.contact.p"),
    }
