"""Centralized allocation by sequential concave surrogates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError

from app.errors import Infeasible, InfeasibleStart, MonotonicityViolation, PowerControlError
from app.model import (
    NetworkModel,
    PowerLike,
    as_power_matrix,
    gee,
    is_feasible_point,
    min_spectral_rate,
    min_weighted_ee,
    sum_spectral_rate,
)
from app.services.feasibility import check_feasible_n1, check_feasible_nblocks
from app.services.fractional import (
    FractionalProblem,
    MultiRatioProblem,
    dinkelbach,
    generalized_dinkelbach,
)
from app.services.surrogate import (
    P_FLOOR_W,
    ObjectiveKind,
    SurrogateProblem,
    SurrogateSolution,
    bound_params_at,
    expand,
    maximize_surrogate,
)
from app.utils.export import records_to_frame, write_frame

logger = logging.getLogger(__name__)

RUN_COLUMNS = [
    "iteration",
    "objective",
    "q_change",
    "inner_iterations",
    "newton_iterations",
    "kkt_residual",
    "phase_one",
    "total_power_w",
]


@dataclass(frozen=True)
class OuterTolerances:
    outer_tol: float = 1e-4
    max_outer: int = 50
    dinkelbach_tol: float = 1e-8
    dinkelbach_cap: int = 50
    monotone_slack: float = 1e-9
    strict: bool = True


@dataclass(frozen=True)
class OuterRecord:
    iteration: int
    power: np.ndarray = field(repr=False)
    objective: float
    a: Optional[np.ndarray] = field(default=None, repr=False)
    b: Optional[np.ndarray] = field(default=None, repr=False)
    inner_iterations: int = 0
    newton_iterations: int = 0
    kkt_residual: float = float("nan")
    q_change: float = float("nan")
    phase_one: bool = False


@dataclass
class CentralizedRun:
    kind: ObjectiveKind
    tolerances: OuterTolerances
    exact_rate: bool
    records: List[OuterRecord] = field(default_factory=list)
    converged: bool = False
    failure: Optional[str] = None

    @property
    def power(self) -> np.ndarray:
        return self.records[-1].power

    @property
    def objective(self) -> float:
        return self.records[-1].objective

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def objective_trace(self) -> np.ndarray:
        return np.array([record.objective for record in self.records])

    def is_monotone(self, slack: Optional[float] = None) -> bool:
        slack = self.tolerances.monotone_slack if slack is None else slack
        trace = self.objective_trace
        allowance = slack * np.maximum(np.abs(trace[:-1]), 1.0)
        return bool(np.all(trace[1:] >= trace[:-1] - allowance))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "iteration": record.iteration,
                "objective": record.objective,
                "q_change": record.q_change,
                "inner_iterations": record.inner_iterations,
                "newton_iterations": record.newton_iterations,
                "kkt_residual": record.kkt_residual,
                "phase_one": int(record.phase_one),
                "total_power_w": float(record.power.sum()),
            }
            for record in self.records
        ]
        return records_to_frame(rows, RUN_COLUMNS)


def write_run_csv(run: CentralizedRun, path: Union[str, Path]) -> Path:
    return write_frame(run.to_frame(), path)


def objective_value(model: NetworkModel, kind: ObjectiveKind, p: PowerLike, weights=None) -> float:
    if kind is ObjectiveKind.GEE:
        return gee(model, p)
    if kind is ObjectiveKind.MIN_EE:
        return min_weighted_ee(model, p, weights)
    if kind is ObjectiveKind.SUM_RATE:
        return sum_spectral_rate(model, p)
    if kind is ObjectiveKind.MIN_RATE:
        return min_spectral_rate(model, p)
    raise ValueError(f"{kind.value} is not an allocation objective")


def max_power_allocation(model: NetworkModel) -> np.ndarray:
    return np.repeat(model.p_max[:, None] / model.num_blocks, model.num_blocks, axis=1)


def default_start(model: NetworkModel) -> np.ndarray:
    """Minimum-power vector for single-block QoS, a half equal split without QoS, else the max-slack point."""
    if not np.any(model.rate_target > 0):
        return 0.5 * max_power_allocation(model)
    if model.num_blocks == 1:
        report = check_feasible_n1(model)
        if not report.feasible:
            raise Infeasible(report.reason or "rate targets are not reachable")
        return report.p_min[:, None].copy()
    report = check_feasible_nblocks(model)
    if not report.feasible:
        raise Infeasible(f"no surrogate-feasible allocation found (slack {report.slack:.3g})")
    return report.point


def _gee_step(problem: SurrogateProblem, q_outer: np.ndarray, lam0: float, tols: OuterTolerances):
    model = problem.model
    solutions: List[SurrogateSolution] = []

    def maximize(lam: float, q_prev: Optional[np.ndarray]) -> np.ndarray:
        solution = maximize_surrogate(problem.with_price(lam), q_outer if q_prev is None else q_prev)
        solutions.append(solution)
        return solution.q

    fractional: FractionalProblem[np.ndarray] = FractionalProblem(
        numerator=lambda q: float(expand(model, problem.a, problem.b, q).rate.sum()),
        denominator=lambda q: model.total_circuit_power + float(np.exp2(q).sum()),
        maximize=maximize,
        tol=tols.dinkelbach_tol,
        max_iter=tols.dinkelbach_cap,
    )
    result = dinkelbach(fractional, lam0=lam0)
    return result.x, result.iterations, solutions


def _min_ee_step(problem: SurrogateProblem, q_outer: np.ndarray, lam0: float, tols: OuterTolerances):
    model = problem.model
    weights = problem.user_weights
    solutions: List[SurrogateSolution] = []

    def maximize(lam: float, q_prev: Optional[np.ndarray]) -> np.ndarray:
        solution = maximize_surrogate(problem.with_price(lam), q_outer if q_prev is None else q_prev)
        solutions.append(solution)
        return solution.q

    fractional: MultiRatioProblem[np.ndarray] = MultiRatioProblem(
        numerators=lambda q: weights * expand(model, problem.a, problem.b, q).rate,
        denominators=lambda q: model.p_circuit + np.exp2(q).sum(axis=1),
        maximize=maximize,
        tol=tols.dinkelbach_tol,
        max_iter=tols.dinkelbach_cap,
    )
    result = generalized_dinkelbach(fractional, lam0=lam0)
    return result.x, result.iterations, solutions


def _rate_step(problem: SurrogateProblem, q_outer: np.ndarray, lam0: float, tols: OuterTolerances):
    solution = maximize_surrogate(problem, q_outer)
    return solution.q, 1, [solution]


_STEPS = {
    ObjectiveKind.GEE: _gee_step,
    ObjectiveKind.MIN_EE: _min_ee_step,
    ObjectiveKind.SUM_RATE: _rate_step,
    ObjectiveKind.MIN_RATE: _rate_step,
}


def _log_power(p: np.ndarray) -> np.ndarray:
    return np.log2(np.maximum(p, P_FLOOR_W))


def solve(
    model: NetworkModel,
    kind: ObjectiveKind,
    p_start: Optional[PowerLike] = None,
    weights=None,
    tols: Optional[OuterTolerances] = None,
    exact_rate: Optional[bool] = None,
) -> CentralizedRun:
    """Outer sequential-surrogate loop shared by every objective."""
    if kind not in _STEPS:
        raise ValueError(f"{kind.value} is not an allocation objective")
    tols = tols or OuterTolerances()
    if exact_rate is None:
        exact_rate = model.num_blocks == 1
    if weights is not None:
        weights = np.broadcast_to(np.asarray(weights, dtype=float), (model.num_users,))
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")

    p_prev = default_start(model) if p_start is None else np.array(as_power_matrix(model, p_start), dtype=float)
    report = is_feasible_point(model, p_prev)
    if not report.feasible:
        raise InfeasibleStart("start allocation violates a budget or a rate target")

    run = CentralizedRun(kind=kind, tolerances=tols, exact_rate=exact_rate)
    objective = objective_value(model, kind, p_prev, weights)
    run.records.append(OuterRecord(iteration=0, power=p_prev, objective=objective))
    q_prev = _log_power(p_prev)
    step = _STEPS[kind]

    for iteration in range(1, tols.max_outer + 1):
        a, b = bound_params_at(model, p_prev)
        problem = SurrogateProblem(model, a, b, kind, weights=weights, exact_rate=exact_rate)
        # the previous allocation is feasible for this surrogate, so its ratio is a valid lower start
        lam0 = objective / model.bandwidth if kind in (ObjectiveKind.GEE, ObjectiveKind.MIN_EE) else 0.0
        try:
            q, inner_iterations, solutions = step(problem, q_prev, max(lam0, 0.0), tols)
        except (PowerControlError, LinAlgError, ArithmeticError) as exc:
            logger.warning("%s outer iteration %s failed: %s", kind.value, iteration, exc)
            run.failure = str(exc)
            break

        p = np.exp2(q)
        new_objective = objective_value(model, kind, p, weights)
        last = solutions[-1]
        change = float(np.sum((q - q_prev) ** 2) / max(float(np.sum(q**2)), 1.0))
        run.records.append(
            OuterRecord(
                iteration=iteration,
                power=p,
                objective=new_objective,
                a=a,
                b=b,
                inner_iterations=inner_iterations,
                newton_iterations=sum(s.newton_iterations for s in solutions),
                kkt_residual=last.kkt_residual,
                q_change=change,
                phase_one=any(s.phase_one for s in solutions),
            )
        )
        logger.debug(
            "%s outer=%s objective=%.12g change=%.3g inner=%s", kind.value, iteration, new_objective, change, inner_iterations
        )
        if new_objective < objective - tols.monotone_slack * max(abs(objective), 1.0):
            message = f"{kind.value} objective decreased from {objective:.12g} to {new_objective:.12g}"
            if tols.strict:
                raise MonotonicityViolation(message)
            logger.warning(message)
        objective, p_prev, q_prev = new_objective, p, q
        if change <= tols.outer_tol:
            run.converged = True
            break

    if not run.converged and run.failure is None:
        logger.warning("%s stopped at the outer cap of %s iterations", kind.value, tols.max_outer)
    return run


def solve_gee(model: NetworkModel, p_start: Optional[PowerLike] = None, tols: Optional[OuterTolerances] = None, **kwargs) -> CentralizedRun:
    return solve(model, ObjectiveKind.GEE, p_start, tols=tols, **kwargs)


def solve_min_ee(
    model: NetworkModel,
    p_start: Optional[PowerLike] = None,
    weights=None,
    tols: Optional[OuterTolerances] = None,
    **kwargs,
) -> CentralizedRun:
    return solve(model, ObjectiveKind.MIN_EE, p_start, weights=weights, tols=tols, **kwargs)


def solve_sum_rate(model: NetworkModel, p_start: Optional[PowerLike] = None, tols: Optional[OuterTolerances] = None, **kwargs) -> CentralizedRun:
    return solve(model, ObjectiveKind.SUM_RATE, p_start, tols=tols, **kwargs)


def solve_min_rate(model: NetworkModel, p_start: Optional[PowerLike] = None, tols: Optional[OuterTolerances] = None, **kwargs) -> CentralizedRun:
    return solve(model, ObjectiveKind.MIN_RATE, p_start, tols=tols, **kwargs)
