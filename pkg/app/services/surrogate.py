"""Concave surrogate problems in log-power variables.

Powers are parametrized as ``p = 2**q``. Around an expansion point with SINRs
``g``, ``log2(1 + x) >= a*log2(x) + b`` with ``a = g/(1+g)`` turns every rate
into a concave function of ``q``. All objectives are expressed per Hz (rates
in bit/s/Hz, prices in bit/s/Hz/W), so solver tolerances do not depend on the
bandwidth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from app.errors import Infeasible, NeedsPhaseOne, TargetExceedsMaxSinr
from app.model import NetworkModel, sinr_matrix
from app.services.barrier import ConcaveProgram, maximize_barrier
from app.services.barrier import kkt_residual as program_kkt_residual
from app.utils.units import LN2

logger = logging.getLogger(__name__)

P_FLOOR_W = 1e-20
Q_FLOOR = float(np.log2(P_FLOOR_W))
GAMMA_TILDE_FLOOR = 1e-12


class ObjectiveKind(str, Enum):
    GEE = "gee"
    MIN_EE = "min-ee"
    SUM_RATE = "sum-rate"
    MIN_RATE = "min-rate"
    FEASIBILITY = "feasibility"

    @property
    def uses_epigraph(self) -> bool:
        return self in (ObjectiveKind.MIN_EE, ObjectiveKind.MIN_RATE, ObjectiveKind.FEASIBILITY)


def bound_params(gamma_tilde) -> Tuple[np.ndarray, np.ndarray]:
    """Coefficients of the tight lower bound of log2(1+x) at ``gamma_tilde``."""
    g = np.maximum(np.asarray(gamma_tilde, dtype=float), GAMMA_TILDE_FLOOR)
    a = g / (1.0 + g)
    b = np.log2(1.0 + g) - a * np.log2(g)
    return a, b


def bound_params_at(model: NetworkModel, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return bound_params(sinr_matrix(model, p))


@dataclass(frozen=True)
class SurrogateExpansion:
    """Per-user surrogate rates of one ``q`` with first and second derivatives.

    ``rate_grad`` is (K, K*N) and ``rate_hess`` is (K, K*N, K*N), both with
    respect to ``q`` flattened user-major.
    """

    power: np.ndarray
    rate: np.ndarray
    rate_grad: np.ndarray
    rate_hess: np.ndarray


def _cross_gains(model: NetworkModel) -> np.ndarray:
    # C[k, j, n] = phi[k, n] on the diagonal, omega[k, j, n] elsewhere
    gains = np.array(model.omega)
    for k in range(model.num_users):
        gains[k, k, :] = model.phi[k, :]
    return gains


def _log_sum_derivatives(
    weights: np.ndarray, offset: np.ndarray, power: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    total = offset + np.einsum("kjn,jn->kn", weights, power)
    shares = weights * power[None, :, :] / total[:, None, :]
    return np.log2(total), shares


def _log_sum_hessian(shares_kn: np.ndarray, num_users: int, num_blocks: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    index = np.arange(num_users) * num_blocks + n
    block = LN2 * (np.diag(shares_kn) - np.outer(shares_kn, shares_kn))
    return index, block


def expand(model: NetworkModel, a: np.ndarray, b: np.ndarray, q: np.ndarray) -> SurrogateExpansion:
    num_users, num_blocks = model.num_users, model.num_blocks
    size = num_users * num_blocks
    q = np.asarray(q, dtype=float).reshape(num_users, num_blocks)
    power = np.exp2(q)
    log_den, shares = _log_sum_derivatives(_cross_gains(model), model.noise, power)
    per_block = b + a * (np.log2(model.alpha) + q - log_den)

    grad = np.zeros((num_users, size))
    hess = np.zeros((num_users, size, size))
    for k in range(num_users):
        for n in range(num_blocks):
            index, block = _log_sum_hessian(shares[k, :, n], num_users, num_blocks, n)
            grad[k, index] -= a[k, n] * shares[k, :, n]
            grad[k, k * num_blocks + n] += a[k, n]
            hess[k][np.ix_(index, index)] -= a[k, n] * block
    return SurrogateExpansion(power=power, rate=per_block.sum(axis=1), rate_grad=grad, rate_hess=hess)


def exact_rate_constraints(
    model: NetworkModel, q: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Convex rate constraints for one block: log2 SINR_k - log2 SINR_min_k >= 0."""
    if model.num_blocks != 1:
        raise ValueError("exact rate constraints are defined for a single block")
    num_users = model.num_users
    q = np.asarray(q, dtype=float).reshape(num_users, 1)
    gamma_min = model.min_sinr
    margin = model.alpha[:, 0] - gamma_min * model.phi[:, 0]
    targeted = gamma_min > 0
    if np.any(margin[targeted] <= 0):
        raise TargetExceedsMaxSinr(np.flatnonzero(targeted & (margin <= 0)).tolist())
    with np.errstate(divide="ignore"):
        offset = np.where(targeted, np.log2(np.where(targeted, margin, 1.0) / np.where(targeted, gamma_min, 1.0)), 0.0)
    log_int, shares = _log_sum_derivatives(model.omega, model.noise, np.exp2(q))
    values = q[:, 0] - log_int[:, 0] + offset
    grad = np.eye(num_users) - shares[:, :, 0]
    hess = np.zeros((num_users, num_users, num_users))
    for k in range(num_users):
        _, block = _log_sum_hessian(shares[k, :, 0], num_users, 1, 0)
        hess[k] = -block
    return values, grad, hess


@dataclass(frozen=True)
class SurrogateProblem:
    """One inner problem of the sequential surrogate scheme."""

    model: NetworkModel
    a: np.ndarray
    b: np.ndarray
    kind: ObjectiveKind
    price: float = 0.0
    weights: Optional[np.ndarray] = None
    exact_rate: bool = False
    q_floor: float = Q_FLOOR

    @property
    def num_powers(self) -> int:
        return self.model.num_users * self.model.num_blocks

    @property
    def num_variables(self) -> int:
        return self.num_powers + (1 if self.kind.uses_epigraph else 0)

    @property
    def rate_users(self) -> np.ndarray:
        return np.flatnonzero(self.model.rate_target > 0)

    @property
    def user_weights(self) -> np.ndarray:
        return self.model.weight if self.weights is None else np.asarray(self.weights, dtype=float)

    def with_price(self, price: float) -> "SurrogateProblem":
        return SurrogateProblem(
            self.model, self.a, self.b, self.kind, price, self.weights, self.exact_rate, self.q_floor
        )

    def _rate_constraints(self, q: np.ndarray, expansion: SurrogateExpansion):
        users = self.rate_users
        if self.exact_rate:
            values, grad, hess = exact_rate_constraints(self.model, q)
            return values[users], grad[users], hess[users]
        targets = self.model.rate_target[users]
        return expansion.rate[users] - targets, expansion.rate_grad[users], expansion.rate_hess[users]

    def _power_constraints(self, expansion: SurrogateExpansion):
        num_users, num_blocks = self.model.num_users, self.model.num_blocks
        scaled = expansion.power / self.model.p_max[:, None]
        values = 1.0 - scaled.sum(axis=1)
        grad = np.zeros((num_users, self.num_powers))
        hess = np.zeros((num_users, self.num_powers, self.num_powers))
        for k in range(num_users):
            span = slice(k * num_blocks, (k + 1) * num_blocks)
            grad[k, span] = -LN2 * scaled[k]
            hess[k, span, span] = np.diag(-LN2**2 * scaled[k])
        return values, grad, hess

    def _user_value_rows(self, expansion: SurrogateExpansion):
        num_users, num_blocks = self.model.num_users, self.model.num_blocks
        if self.kind is ObjectiveKind.MIN_RATE:
            return expansion.rate.copy(), expansion.rate_grad.copy(), expansion.rate_hess.copy()
        w = self.user_weights
        values = w * expansion.rate - self.price * (self.model.p_circuit + expansion.power.sum(axis=1))
        grad = w[:, None] * expansion.rate_grad
        hess = w[:, None, None] * expansion.rate_hess
        for k in range(num_users):
            span = slice(k * num_blocks, (k + 1) * num_blocks)
            grad[k, span] -= self.price * LN2 * expansion.power[k]
            hess[k, span, span] -= np.diag(self.price * LN2**2 * expansion.power[k])
        return values, grad, hess

    def constraint_blocks(self, x: np.ndarray):
        q = x[: self.num_powers]
        expansion = expand(self.model, self.a, self.b, q)
        blocks: List[Tuple[np.ndarray, np.ndarray, np.ndarray, bool]] = []

        slack_rows = self.kind is ObjectiveKind.FEASIBILITY
        blocks.append(self._power_constraints(expansion) + (slack_rows,))
        if len(self.rate_users):
            blocks.append(self._rate_constraints(q, expansion) + (slack_rows,))
        if self.kind in (ObjectiveKind.MIN_EE, ObjectiveKind.MIN_RATE):
            blocks.append(self._user_value_rows(expansion) + (True,))
        box = (
            q - self.q_floor,
            np.eye(self.num_powers),
            np.zeros((self.num_powers, self.num_powers, self.num_powers)),
        )
        blocks.append(box + (False,))

        values, jac, hessians = [], [], []
        size = self.num_variables
        for vals, grad, hess, minus_t in blocks:
            rows = len(vals)
            full_grad = np.zeros((rows, size))
            full_grad[:, : self.num_powers] = grad
            full_hess = np.zeros((rows, size, size))
            full_hess[:, : self.num_powers, : self.num_powers] = hess
            if minus_t:
                vals = vals - x[-1]
                full_grad[:, -1] = -1.0
            values.append(vals)
            jac.append(full_grad)
            hessians.append(full_hess)
        return np.concatenate(values), np.vstack(jac), np.concatenate(hessians)

    def objective_terms(self, x: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        size = self.num_variables
        if self.kind.uses_epigraph:
            grad = np.zeros(size)
            grad[-1] = 1.0
            return float(x[-1]), grad, np.zeros((size, size))
        expansion = expand(self.model, self.a, self.b, x[: self.num_powers])
        value = float(expansion.rate.sum())
        grad = expansion.rate_grad.sum(axis=0)
        hess = expansion.rate_hess.sum(axis=0)
        if self.kind is ObjectiveKind.GEE:
            power = expansion.power.ravel()
            value -= self.price * (self.model.total_circuit_power + power.sum())
            grad = grad - self.price * LN2 * power
            hess = hess - np.diag(self.price * LN2**2 * power)
        return value, grad, hess

    def to_program(self) -> ConcaveProgram:
        num_constraints = (
            self.model.num_users
            + len(self.rate_users)
            + (self.model.num_users if self.kind in (ObjectiveKind.MIN_EE, ObjectiveKind.MIN_RATE) else 0)
            + self.num_powers
        )
        return ConcaveProgram(
            objective=self.objective_terms,
            constraints=self.constraint_blocks,
            num_variables=self.num_variables,
            num_constraints=num_constraints,
        )

    def epigraph_level(self, q: np.ndarray) -> float:
        x = np.append(np.asarray(q, dtype=float).ravel(), 0.0)
        values, jac, _ = self.constraint_blocks(x)
        tied = jac[:, -1] < 0
        return float(values[tied].min())

    def is_interior(self, q: np.ndarray) -> bool:
        relaxed = SurrogateProblem(self.model, self.a, self.b, ObjectiveKind.SUM_RATE, 0.0, None, self.exact_rate, self.q_floor)
        values, _, _ = relaxed.constraint_blocks(np.asarray(q, dtype=float).ravel())
        return bool(np.all(np.isfinite(values)) and np.all(values > 0))


@dataclass(frozen=True)
class SurrogateSolution:
    q: np.ndarray
    epigraph: Optional[float]
    objective: float
    kkt_residual: float
    newton_iterations: int
    stalled: bool
    phase_one: bool = False

    @property
    def power(self) -> np.ndarray:
        return np.exp2(self.q)


@dataclass(frozen=True)
class InteriorPoint:
    q: np.ndarray
    slack: float
    solution: SurrogateSolution = field(repr=False)


def _initial_variables(problem: SurrogateProblem, q: np.ndarray) -> np.ndarray:
    x = np.asarray(q, dtype=float).ravel()
    if problem.kind.uses_epigraph:
        x = np.append(x, problem.epigraph_level(x) - 1.0)
    return x


def equal_split_q(model: NetworkModel, fraction: float = 1.0) -> np.ndarray:
    split = fraction * model.p_max[:, None] / model.num_blocks
    return np.log2(np.broadcast_to(split, (model.num_users, model.num_blocks)).copy())


def find_interior_point(
    model: NetworkModel,
    a: np.ndarray,
    b: np.ndarray,
    q_start: Optional[np.ndarray] = None,
    exact_rate: bool = False,
) -> InteriorPoint:
    """Maximize the smallest normalized slack of the power and rate constraints."""
    if q_start is None:
        q_start = equal_split_q(model, 0.5)
    q_start = np.maximum(np.asarray(q_start, dtype=float).reshape(model.num_users, model.num_blocks), Q_FLOOR + 1.0)
    problem = SurrogateProblem(model, a, b, ObjectiveKind.FEASIBILITY, exact_rate=exact_rate)
    solution = _solve(problem, q_start)
    logger.debug("phase one slack=%.6g", solution.epigraph)
    return InteriorPoint(q=solution.q, slack=float(solution.epigraph), solution=solution)


def _solve(problem: SurrogateProblem, q_start: np.ndarray) -> SurrogateSolution:
    program = problem.to_program()
    result = maximize_barrier(program, _initial_variables(problem, q_start))
    num_users, num_blocks = problem.model.num_users, problem.model.num_blocks
    q = result.x[: problem.num_powers].reshape(num_users, num_blocks)
    epigraph = float(result.x[-1]) if problem.kind.uses_epigraph else None
    return SurrogateSolution(
        q=q,
        epigraph=epigraph,
        objective=result.objective,
        kkt_residual=result.kkt_residual,
        newton_iterations=result.newton_iterations,
        stalled=result.stalled,
    )


def maximize_surrogate(
    problem: SurrogateProblem, q_start: np.ndarray, *, allow_phase_one: bool = True
) -> SurrogateSolution:
    num_users, num_blocks = problem.model.num_users, problem.model.num_blocks
    q_start = np.asarray(q_start, dtype=float).reshape(num_users, num_blocks)
    used_phase_one = False
    if problem.kind is not ObjectiveKind.FEASIBILITY and not problem.is_interior(q_start):
        if not allow_phase_one:
            raise NeedsPhaseOne("start point is not strictly inside the surrogate feasible set")
        interior = find_interior_point(problem.model, problem.a, problem.b, q_start, problem.exact_rate)
        if interior.slack <= 0:
            raise Infeasible(f"surrogate constraints admit no interior point (best slack {interior.slack:.3g})")
        q_start = interior.q
        used_phase_one = True
    solution = _solve(problem, q_start)
    if used_phase_one:
        solution = replace(solution, phase_one=True)
    return solution


def kkt_residual(problem: SurrogateProblem, q: np.ndarray, epigraph: Optional[float] = None) -> float:
    x = np.asarray(q, dtype=float).ravel()
    if problem.kind.uses_epigraph:
        level = problem.epigraph_level(x) if epigraph is None else epigraph
        x = np.append(x, level)
    return program_kkt_residual(problem.to_program(), x)


def surrogate_rates(model: NetworkModel, a: np.ndarray, b: np.ndarray, q: np.ndarray) -> np.ndarray:
    return expand(model, a, b, q).rate


def surrogate_rate(model: NetworkModel, a: np.ndarray, b: np.ndarray, q: np.ndarray, k: int) -> float:
    return float(surrogate_rates(model, a, b, q)[k])


def surrogate_rate_gradient(model: NetworkModel, a: np.ndarray, b: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    return expand(model, a, b, q).rate_grad[k].reshape(model.num_users, model.num_blocks)


def surrogate_gee(model: NetworkModel, a: np.ndarray, b: np.ndarray, q: np.ndarray) -> float:
    expansion = expand(model, a, b, q)
    return float(model.bandwidth * expansion.rate.sum() / (model.total_circuit_power + expansion.power.sum()))


def surrogate_gee_gradient(model: NetworkModel, a: np.ndarray, b: np.ndarray, q: np.ndarray) -> np.ndarray:
    expansion = expand(model, a, b, q)
    numerator = expansion.rate.sum()
    denominator = model.total_circuit_power + expansion.power.sum()
    grad = (expansion.rate_grad.sum(axis=0) * denominator - numerator * LN2 * expansion.power.ravel()) / denominator**2
    return (model.bandwidth * grad).reshape(model.num_users, model.num_blocks)


def surrogate_user_ee(model: NetworkModel, a: np.ndarray, b: np.ndarray, q: np.ndarray, k: int) -> float:
    expansion = expand(model, a, b, q)
    return float(model.bandwidth * expansion.rate[k] / (model.p_circuit[k] + expansion.power[k].sum()))


def surrogate_user_ee_gradient(model: NetworkModel, a: np.ndarray, b: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    expansion = expand(model, a, b, q)
    num_blocks = model.num_blocks
    denominator = model.p_circuit[k] + expansion.power[k].sum()
    den_grad = np.zeros(model.num_users * num_blocks)
    den_grad[k * num_blocks : (k + 1) * num_blocks] = LN2 * expansion.power[k]
    grad = (expansion.rate_grad[k] * denominator - expansion.rate[k] * den_grad) / denominator**2
    return (model.bandwidth * grad).reshape(model.num_users, num_blocks)
