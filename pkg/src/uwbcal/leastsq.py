"""Damped least-squares (Levenberg-Marquardt) kernel.

One small dense solver shared by the anchor-network refinement and the tag
fix. Problems here have at most a few dozen residuals and ~10 unknowns, so
the normal equations are formed directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SingularUpdate

DAMPING_INITIAL = 1e-3
DAMPING_GROW = 10.0
DAMPING_SHRINK = 10.0
DAMPING_MAX = 1e14
MAX_ITERATIONS = 100
STEP_TOL = 1e-9   # max |coordinate update|, meters
GRAD_TOL = 1e-12  # inf-norm of the objective gradient 2 J^T r


@dataclass
class LeastSquaresResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    grad_inf: float


def levenberg_marquardt(fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                        x0: np.ndarray,
                        max_iterations: int = MAX_ITERATIONS,
                        step_tol: float = STEP_TOL,
                        grad_tol: float = GRAD_TOL) -> LeastSquaresResult:
    """Minimize sum(r(x)**2) for fun(x) -> (r, J).

    Steps solve (J^T J + lam*I) dx = -J^T r. Damping shrinks tenfold on an
    accepted step and grows tenfold on a rejected one, so the objective is
    non-increasing. Convergence is declared when the proposed step or the
    gradient drops below tolerance; hitting the iteration cap leaves
    ``converged`` False and the caller decides what to do with the best
    iterate. Raises :class:`SingularUpdate` if the damped system cannot be
    solved even at maximum damping.
    """
    x = np.asarray(x0, dtype=float).copy()
    r, jac = fun(x)
    f = float(r @ r)
    grad = 2.0 * (jac.T @ r)
    grad_inf = float(np.abs(grad).max()) if grad.size else 0.0

    if grad_inf <= grad_tol:
        return LeastSquaresResult(x, f, 0, True, grad_inf)

    lam = DAMPING_INITIAL
    converged = False
    iterations = 0
    identity = np.eye(x.size)

    for iterations in range(1, max_iterations + 1):
        jtj = jac.T @ jac
        jtr = jac.T @ r
        try:
            dx = np.linalg.solve(jtj + lam * identity, -jtr)
        except np.linalg.LinAlgError:
            dx = None
        if dx is None or not np.all(np.isfinite(dx)):
            lam *= DAMPING_GROW
            if lam > DAMPING_MAX:
                raise SingularUpdate(
                    "normal equations unsolvable at maximum damping")
            continue

        step_inf = float(np.abs(dx).max())
        r_trial, jac_trial = fun(x + dx)
        f_trial = float(r_trial @ r_trial)

        if f_trial < f:
            x = x + dx
            r, jac, f = r_trial, jac_trial, f_trial
            grad = 2.0 * (jac.T @ r)
            grad_inf = float(np.abs(grad).max())
            lam = max(lam / DAMPING_SHRINK, 1e-15)
            if step_inf < step_tol or grad_inf <= grad_tol:
                converged = True
                break
        else:
            lam *= DAMPING_GROW
            if step_inf < step_tol:
                # The solver cannot improve on x even with a tiny step: done.
                converged = True
                break
            if lam > DAMPING_MAX:
                break

    return LeastSquaresResult(x, f, iterations, converged, grad_inf)
