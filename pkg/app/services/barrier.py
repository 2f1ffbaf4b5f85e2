"""Log-barrier Newton method for small dense smooth concave programs.

A program maximizes a concave objective ``f(x)`` subject to concave
constraints ``c_i(x) >= 0``. Both are evaluated through callbacks returning
value, gradient and Hessian, so the same solver serves every surrogate
problem of the centralized algorithms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import nnls

from app.errors import NeedsPhaseOne

logger = logging.getLogger(__name__)

ObjectiveFn = Callable[[np.ndarray], Tuple[float, np.ndarray, np.ndarray]]
ConstraintFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]

ARMIJO_SLOPE = 0.3
BACKTRACK = 0.5
MIN_STEP = 1e-14
ACTIVE_TOL = 1e-3


@dataclass(frozen=True)
class ConcaveProgram:
    """``objective`` returns (f, grad, hess); ``constraints`` returns (c, jac, hessians)."""

    objective: ObjectiveFn
    constraints: Optional[ConstraintFn]
    num_variables: int
    num_constraints: int

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        if self.constraints is None or self.num_constraints == 0:
            return np.zeros(0)
        return self.constraints(x)[0]

    def is_strictly_feasible(self, x: np.ndarray) -> bool:
        values = self.constraint_values(x)
        return bool(np.all(np.isfinite(values)) and np.all(values > 0))


@dataclass(frozen=True)
class BarrierResult:
    x: np.ndarray
    objective: float
    newton_iterations: int
    outer_iterations: int
    stalled: bool
    kkt_residual: float


class _BarrierFunction:
    def __init__(self, program: ConcaveProgram, t: float) -> None:
        self.program = program
        self.t = t

    def value(self, x: np.ndarray) -> float:
        f = self.program.objective(x)[0]
        if self.program.num_constraints == 0:
            return self.t * f
        c = self.program.constraint_values(x)
        if not np.all(np.isfinite(c)) or np.any(c <= 0) or not np.isfinite(f):
            return -np.inf
        return self.t * f + float(np.log(c).sum())

    def derivatives(self, x: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        f, grad, hess = self.program.objective(x)
        value = self.t * f
        grad = self.t * grad
        hess = self.t * hess
        if self.program.num_constraints:
            c, jac, hessians = self.program.constraints(x)
            inv = 1.0 / c
            value = value + float(np.log(c).sum())
            grad = grad + jac.T @ inv
            hess = hess + np.einsum("i,ijk->jk", inv, hessians) - (jac.T * inv**2) @ jac
        return value, grad, hess


def _newton_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    neg = -0.5 * (hess + hess.T)
    scale = max(1.0, float(np.max(np.abs(np.diag(neg)))))
    shift = 0.0
    identity = np.eye(neg.shape[0])
    for _ in range(60):
        try:
            factor = cho_factor(neg + shift * identity, lower=True, check_finite=True)
            return cho_solve(factor, grad)
        except (LinAlgError, ValueError):
            shift = max(2.0 * shift, 1e-12 * scale)
    raise LinAlgError("barrier Hessian could not be regularized")


def _center(
    barrier: _BarrierFunction,
    x: np.ndarray,
    newton_tol: float,
    max_newton: int,
) -> Tuple[np.ndarray, int, bool]:
    for iteration in range(1, max_newton + 1):
        value, grad, hess = barrier.derivatives(x)
        direction = _newton_direction(grad, hess)
        decrement_sq = float(grad @ direction)
        # relative to the barrier value, which grows like t
        tolerance = newton_tol * max(1.0, abs(value))
        if decrement_sq / 2.0 <= tolerance:
            return x, iteration, False
        step = 1.0
        while True:
            candidate = x + step * direction
            candidate_value = barrier.value(candidate)
            if np.isfinite(candidate_value) and candidate_value >= value + ARMIJO_SLOPE * step * decrement_sq:
                break
            step *= BACKTRACK
            if step < MIN_STEP:
                # no ascent within floating point resolution
                return x, iteration, decrement_sq / 2.0 > 1e3 * tolerance
        if candidate_value <= value:
            # accepted only because the ascent is below the resolution of value
            return x, iteration, False
        x = candidate
    return x, max_newton, False


def maximize_barrier(
    program: ConcaveProgram,
    x0: np.ndarray,
    *,
    t0: float = 1.0,
    growth: float = 10.0,
    gap_tol: float = 1e-10,
    newton_tol: float = 1e-12,
    max_newton: int = 200,
    max_outer: int = 40,
) -> BarrierResult:
    x = np.array(x0, dtype=float)
    if program.num_constraints and not program.is_strictly_feasible(x):
        raise NeedsPhaseOne("starting point is not strictly feasible")

    total_newton = 0
    outer = 0
    stalled = False
    t = t0 if program.num_constraints else 1.0
    previous = np.nan
    while True:
        outer += 1
        x, iterations, stalled = _center(_BarrierFunction(program, t), x, newton_tol, max_newton)
        total_newton += iterations
        objective = float(program.objective(x)[0])
        logger.debug("barrier t=%.3g newton=%s objective=%.12g", t, iterations, objective)
        if stalled:
            logger.warning("Barrier line search stalled at t=%.3g, keeping best iterate", t)
            break
        if program.num_constraints == 0 or program.num_constraints / t <= gap_tol or outer >= max_outer:
            break
        if abs(objective - previous) <= gap_tol * max(1.0, abs(objective)):
            break
        previous = objective
        t *= growth

    return BarrierResult(
        x=x,
        objective=float(program.objective(x)[0]),
        newton_iterations=total_newton,
        outer_iterations=outer,
        stalled=stalled,
        kkt_residual=kkt_residual(program, x),
    )


def kkt_residual(program: ConcaveProgram, x: np.ndarray, active_tol: float = ACTIVE_TOL) -> float:
    """Stationarity with best non-negative multipliers, plus complementarity and violation."""
    _, grad, _ = program.objective(x)
    scale = max(1.0, float(np.linalg.norm(grad)))
    if program.num_constraints == 0:
        return float(np.linalg.norm(grad)) / scale
    c, jac, _ = program.constraints(x)
    active = c <= active_tol
    violation = float(np.maximum(0.0, -c).sum())
    if not np.any(active):
        return float(np.linalg.norm(grad)) / scale + violation
    multipliers, _ = nnls(jac[active].T, -grad)
    stationarity = float(np.linalg.norm(grad + jac[active].T @ multipliers)) / scale
    complementarity = float(np.abs(multipliers * c[active]).sum())
    return stationarity + complementarity + violation
