"""Fixed and adaptive Runge-Kutta integration plus trajectory utilities.

Every dynamical route in this package reduces to a first-order system
dy/dt = f(t, y); this module owns the time stepping and the comparisons
between trajectories that the verification harness builds on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .solvers import ConvergenceError

METHODS = ("rk4", "rk45")


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution: times (m,), states (m, dim), column labels."""

    times: np.ndarray
    states: np.ndarray
    labels: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] != times.size:
            raise ValueError("states must have one row per sample time")
        if len(self.labels) != states.shape[1]:
            raise ValueError("need one label per state column")
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def samples(self) -> int:
        return self.times.size

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def column(self, label: str) -> np.ndarray:
        try:
            j = self.labels.index(label)
        except ValueError:
            raise KeyError(f"trajectory has no column {label!r}") from None
        return self.states[:, j]

    def resampled(self, times: Sequence[float]) -> "Trajectory":
        """Linear interpolation onto the given times (within the span)."""
        times = np.asarray(times, dtype=float)
        if times[0] < self.times[0] - 1e-12 or times[-1] > self.times[-1] + 1e-12:
            raise ValueError("resample times extend beyond the trajectory")
        cols = [np.interp(times, self.times, self.states[:, j])
                for j in range(self.dimension)]
        return Trajectory(times, np.stack(cols, axis=1), self.labels, dict(self.metadata))


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (
    5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
    -92097 / 339200, 187 / 2100, 1 / 40,
)


def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_rk4(f, y0, t0, t1, dt):
    steps = max(1, round((t1 - t0) / dt))
    times = np.linspace(t0, t1, steps + 1)
    states = np.empty((steps + 1, y0.size))
    states[0] = y0
    y = y0
    for k in range(steps):
        y = _rk4_step(f, times[k], y, times[k + 1] - times[k])
        states[k + 1] = y
    return times, states


def _integrate_rk45(f, y0, t0, t1, tol):
    times = [t0]
    rows = [y0]
    t, y = t0, y0
    h = min(1e-2 * (t1 - t0), t1 - t0)
    fty = f(t, y)
    while t < t1:
        last = h >= t1 - t
        if last:
            h = t1 - t
        if h < 1e-14 * max(1.0, abs(t)):
            raise ConvergenceError(
                f"adaptive step collapsed to {h:.3e} at t = {t!r}"
            )
        ks = [fty]
        for s in range(1, 7):
            acc = sum(a * k for a, k in zip(_DP_A[s], ks))
            ks.append(f(t + _DP_C[s] * h, y + h * acc))
        y5 = y + h * sum(b * k for b, k in zip(_DP_B5, ks))
        y4 = y + h * sum(b * k for b, k in zip(_DP_B4, ks))
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y5)))
        ratio = float(np.max(np.abs(y5 - y4) / scale))
        if ratio <= 1.0:
            t = t1 if last else t + h
            y = y5
            fty = ks[6]  # first-same-as-last
            times.append(t)
            rows.append(y)
        factor = 0.9 * (ratio ** -0.2 if ratio > 0.0 else 5.0)
        h *= min(5.0, max(0.2, factor))
    return np.array(times), np.array(rows)


def integrate(
    field: Callable,
    y0: Sequence[float],
    t0: float,
    t1: float,
    dt: float = 1e-3,
    method: str = "rk4",
    tol: float = 1e-9,
    labels: Optional[Sequence[str]] = None,
    metadata: Optional[Mapping] = None,
) -> Trajectory:
    """Integrate dy/dt = field(t, y) from t0 to t1.

    "rk4" takes max(1, round((t1-t0)/dt)) uniform steps; "rk45" adapts
    the step against a per-component tolerance tol*(1+|y|) and ignores
    dt.  Both land on t1 exactly.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got [{t0!r}, {t1!r}]")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    y0 = np.asarray(y0, dtype=float)
    if labels is None:
        labels = getattr(field, "labels", None)
    if labels is None:
        labels = tuple(f"y{j}" for j in range(y0.size))
    if method == "rk4":
        times, states = _integrate_rk4(field, y0, t0, t1, dt)
    else:
        times, states = _integrate_rk45(field, y0, t0, t1, tol)
    meta = dict(metadata) if metadata else {}
    meta.setdefault("method", method)
    meta.setdefault("step", dt if method == "rk4" else tol)
    return Trajectory(times, states, tuple(labels), meta)


def invariant_drift(traj: Trajectory, f: Callable) -> float:
    """max_k |f(s_k) - f(s_0)| / max(1, |f(s_0)|) along the trajectory."""
    values = np.array([f(t, y) for t, y in zip(traj.times, traj.states)])
    return float(np.max(np.abs(values - values[0])) / max(1.0, abs(values[0])))


def first_variation(action: Callable, base, direction, eps: float) -> float:
    """action(base + eps*direction) - action(base).

    The direction must fix the configuration endpoints; everything else
    may move freely.
    """
    fixes = getattr(direction, "fixes_q_endpoints", None)
    if fixes is not None and not fixes:
        raise ValueError("deformation direction must vanish in q at the endpoints")
    return action(base.perturbed(eps, direction)) - action(base)


def trajectory_csv(traj: Trajectory) -> str:
    """CSV text: header t,<labels...>; 17 significant digits per value."""
    lines = ["t," + ",".join(traj.labels)]
    for t, row in zip(traj.times, traj.states):
        lines.append(",".join(f"{v:.17g}" for v in [t, *row]))
    return "\n".join(lines) + "\n"


def shared_labels(a: Trajectory, b: Trajectory) -> tuple:
    present = set(b.labels)
    return tuple(l for l in a.labels if l in present)


def max_deviation(a: Trajectory, b: Trajectory) -> float:
    """Largest pointwise gap between two routes on their shared columns.

    The finer trajectory is interpolated linearly onto the coarser grid,
    so comparisons tolerate different sampling but inherit an O(step^2)
    interpolation floor.
    """
    common = shared_labels(a, b)
    if not common:
        raise ValueError(
            f"no shared columns between {a.labels} and {b.labels}"
        )
    coarse, fine = (a, b) if a.samples <= b.samples else (b, a)
    fine = fine.resampled(coarse.times)
    gap = 0.0
    for label in common:
        gap = max(gap, float(np.max(np.abs(coarse.column(label) - fine.column(label)))))
    return gap
