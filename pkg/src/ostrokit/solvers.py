"""Newton iteration with analytic Jacobian for the implicit relations.

Both implicit solves in this package (top jet from its momentum, control
from the stationarity condition) are small dense root problems with an
exact Jacobian available, so a plain damped-free Newton loop with a
scale-aware residual tolerance is enough.  Warm starts are the caller's
business: pass the previous solution as the initial guess.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ConvergenceError(RuntimeError):
    """Newton iteration failed; message carries the last residual."""


class SingularJacobianError(RuntimeError):
    """Jacobian fell below the scale-aware invertibility threshold."""


def jacobian_threshold(jac: np.ndarray) -> float:
    n = jac.shape[0]
    scale = 1.0 + float(np.max(np.abs(jac))) if jac.size else 1.0
    return 1e-10 * scale ** n


def newton_solve(
    fun_jac: Callable,
    x0: Sequence[float],
    tol: float,
    max_iter: int = 50,
    label: str = "implicit relation",
) -> np.ndarray:
    """Solve F(x) = 0 given fun_jac(x) -> (residual, jacobian).

    Terminates when the residual infinity norm drops below `tol`.
    Raises SingularJacobianError when |det J| sinks below the scale-aware
    cutoff, ConvergenceError after `max_iter` iterations.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    res, jac = fun_jac(x)
    res = np.asarray(res, dtype=float)
    for _ in range(max_iter):
        if float(np.max(np.abs(res))) < tol:
            return x
        jac = np.asarray(jac, dtype=float).reshape(n, n)
        if n == 1:
            if abs(jac[0, 0]) <= jacobian_threshold(jac):
                raise SingularJacobianError(
                    f"singular Jacobian while solving {label} (|J| = {abs(jac[0,0]):.3e})"
                )
            x = x - res / jac[0, 0]
        else:
            det = abs(float(np.linalg.det(jac)))
            if det <= jacobian_threshold(jac):
                raise SingularJacobianError(
                    f"singular Jacobian while solving {label} (|det J| = {det:.3e})"
                )
            x = x - np.linalg.solve(jac, res)
        res, jac = fun_jac(x)
        res = np.asarray(res, dtype=float)
    if float(np.max(np.abs(res))) < tol:
        return x
    raise ConvergenceError(
        f"no convergence solving {label} after {max_iter} iterations; "
        f"last residual {float(np.max(np.abs(res))):.3e} (tol {tol:.3e})"
    )
