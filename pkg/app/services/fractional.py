"""Dinkelbach engines for single- and multi-ratio fractional programs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Generic, List, Optional, TypeVar

import numpy as np
from scipy.linalg import LinAlgError

from app.errors import CapExceeded, InnerSolverFailed, MonotonicityViolation, PowerControlError
from app.model import sinr_from_mu
from app.services.closed_form import nu, pi

logger = logging.getLogger(__name__)

X = TypeVar("X")

DEFAULT_TOL = 1e-8
DEFAULT_CAP = 50
MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class DinkelbachStep:
    iteration: int
    lam: float
    gap: float
    ratio: float


@dataclass(frozen=True)
class FractionalResult(Generic[X]):
    x: X
    lam: float
    trace: List[DinkelbachStep] = field(repr=False)

    @property
    def iterations(self) -> int:
        return len(self.trace)


@dataclass(frozen=True)
class FractionalProblem(Generic[X]):
    """max f(x)/g(x) with ``maximize(lam, previous_x)`` solving max f - lam*g."""

    numerator: Callable[[X], float]
    denominator: Callable[[X], float]
    maximize: Callable[[float, Optional[X]], X]
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_CAP
    strict: bool = False


@dataclass(frozen=True)
class MultiRatioProblem(Generic[X]):
    """max min_i f_i(x)/g_i(x) with ``maximize(lam, previous_x)`` solving max min_i (f_i - lam*g_i)."""

    numerators: Callable[[X], np.ndarray]
    denominators: Callable[[X], np.ndarray]
    maximize: Callable[[float, Optional[X]], X]
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_CAP
    strict: bool = False


def _inner(maximize: Callable[[float, Optional[X]], X], lam: float, x: Optional[X], trace: List[DinkelbachStep]) -> X:
    try:
        return maximize(lam, x)
    except (PowerControlError, ArithmeticError, LinAlgError) as exc:
        raise InnerSolverFailed(f"inner maximization failed at lambda={lam:.12g}: {exc}", list(trace)) from exc


def _run(
    evaluate: Callable[[Any, float], "tuple[float, float]"],
    maximize: Callable[[float, Optional[X]], X],
    tol: float,
    max_iter: int,
    lam0: float,
    x0: Optional[X],
    label: str,
    strict: bool = False,
) -> FractionalResult[X]:
    lam = float(lam0)
    x = x0
    trace: List[DinkelbachStep] = []
    for iteration in range(1, max_iter + 1):
        x = _inner(maximize, lam, x, trace)
        gap, ratio = evaluate(x, lam)
        if trace:
            problems = []
            if gap > trace[-1].gap + MONOTONE_SLACK * max(1.0, abs(trace[-1].gap)):
                problems.append(f"gap increased from {trace[-1].gap:.6g} to {gap:.6g}")
            if ratio < lam - MONOTONE_SLACK * max(1.0, abs(lam)):
                problems.append(f"lambda decreased from {lam:.12g} to {ratio:.12g}")
            for problem in problems:
                if strict:
                    raise MonotonicityViolation(f"{label} iteration {iteration}: {problem}")
                logger.warning("%s %s", label, problem)
        trace.append(DinkelbachStep(iteration=iteration, lam=lam, gap=gap, ratio=ratio))
        logger.debug("%s iteration=%s lambda=%.12g gap=%.3g", label, iteration, lam, gap)
        if gap <= tol:
            return FractionalResult(x=x, lam=ratio, trace=trace)
        lam = ratio
    raise CapExceeded(f"{label} did not reach gap {tol:g} within {max_iter} iterations", trace)


def dinkelbach(prob: FractionalProblem[X], lam0: float = 0.0, x0: Optional[X] = None) -> FractionalResult[X]:
    def evaluate(x: X, lam: float):
        f, g = float(prob.numerator(x)), float(prob.denominator(x))
        if not g > 0:
            raise ValueError("denominator must be positive on the feasible set")
        return f - lam * g, f / g

    return _run(evaluate, prob.maximize, prob.tol, prob.max_iter, lam0, x0, "dinkelbach", prob.strict)


def generalized_dinkelbach(prob: MultiRatioProblem[X], lam0: float = 0.0, x0: Optional[X] = None) -> FractionalResult[X]:
    def evaluate(x: X, lam: float):
        f = np.asarray(prob.numerators(x), dtype=float)
        g = np.asarray(prob.denominators(x), dtype=float)
        if not np.all(g > 0):
            raise ValueError("denominators must be positive on the feasible set")
        return float(np.min(f - lam * g)), float(np.min(f / g))

    return _run(evaluate, prob.maximize, prob.tol, prob.max_iter, lam0, x0, "generalized dinkelbach", prob.strict)


@dataclass(frozen=True)
class ScalarBestResponse:
    lam: float
    power: float
    sinr: float
    iterations: int
    gap: float


def scalar_dinkelbach_bestresponse(
    mu: float,
    gamma_bar: float,
    bandwidth: float,
    p_circuit: float,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> ScalarBestResponse:
    """Unconstrained maximizer of B*log2(1 + SINR(p)) / (p_c + p) for one link.

    Runs per Hz (B = 1) and rescales the price by B on return. The price
    starts at the efficiency of p = p_c, which lies below the optimum.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")

    def rate(p: float) -> float:
        return float(np.log2(1.0 + sinr_from_mu(mu, gamma_bar, p)))

    problem: FractionalProblem[float] = FractionalProblem(
        numerator=rate,
        denominator=lambda p: p_circuit + p,
        maximize=lambda lam, _: float(pi(lam, mu, gamma_bar, 1.0)),
        tol=tol,
        max_iter=max_iter,
    )
    seed = rate(p_circuit) / (2.0 * p_circuit)
    result = dinkelbach(problem, lam0=seed)
    power = result.x
    return ScalarBestResponse(
        lam=bandwidth * result.lam,
        power=power,
        sinr=float(nu(result.lam, mu, gamma_bar, 1.0)),
        iterations=result.iterations,
        gap=result.trace[-1].gap,
    )
