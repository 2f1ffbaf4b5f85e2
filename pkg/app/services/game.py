"""Best responses and best-response dynamics of the energy-efficiency game.

Every user maximizes its own EE against the interference it measures. The
response is indexed by a price: ``pi(x)`` per block, clipped between the
price that just meets the rate target and the price that just exhausts the
budget. Prices are in bit/J; the closed forms take the real bandwidth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.errors import EmptyStrategySet, Infeasible, InfeasibleStart, UnreachableSinr
from app.model import NetworkModel, PowerLike, as_power_matrix, mu_matrix, power_for_sinr, sinr_from_mu, sinr_matrix
from app.services.closed_form import g, nu, pi, price_for_sinr
from app.services.feasibility import brd_sufficient_condition
from app.services.fractional import FractionalProblem, dinkelbach, scalar_dinkelbach_bestresponse
from app.utils.export import trajectory_frame, write_frame
from app.utils.seeding import SeedLike, as_generator
from app.utils.units import LN2

__all__ = [
    "nu",
    "g",
    "pi",
    "UserResponse",
    "WaterLevel",
    "GameState",
    "BrdResult",
    "min_power_n1",
    "best_response_n1",
    "min_power_waterlevel",
    "best_response_nblocks",
    "estimate_mu",
    "fixed_point_residual",
    "run_brd",
    "standard_function_probe",
    "contraction_metric",
]

logger = logging.getLogger(__name__)

BISECTION_LO = 1e-12
BISECTION_HI = 1e12
BISECTION_STEPS = 200
BUDGET_TOL = 1e-9

SEQUENTIAL = "sequential"
JACOBI = "jacobi"


@dataclass(frozen=True)
class UserResponse:
    power: np.ndarray
    lam_star: float
    lam_low: float
    lam_high: float

    @property
    def lam_prime(self) -> float:
        return max(self.lam_high, min(self.lam_star, self.lam_low))


@dataclass(frozen=True)
class WaterLevel:
    lam: float
    power: np.ndarray


@dataclass(frozen=True)
class GameState:
    iteration: int
    p: np.ndarray = field(repr=False)
    measured_sinr: np.ndarray = field(repr=False)
    lam_star: np.ndarray = field(repr=False)
    lam_low: np.ndarray = field(repr=False)
    lam_high: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class BrdResult:
    states: List[GameState]
    converged: bool
    schedule: str

    @property
    def power(self) -> np.ndarray:
        return self.states[-1].p

    @property
    def iterations(self) -> int:
        return len(self.states) - 1

    @property
    def trajectory(self) -> List[np.ndarray]:
        return [state.p for state in self.states]

    def to_frame(self, model: NetworkModel) -> pd.DataFrame:
        return trajectory_frame(model, self.trajectory)


def write_brd_csv(model: NetworkModel, result: BrdResult, path: Union[str, Path]) -> Path:
    return write_frame(result.to_frame(model), path)


def _mu_of(model: NetworkModel, p_others: PowerLike, k: int) -> np.ndarray:
    return mu_matrix(model, as_power_matrix(model, p_others))[k]


def _total_rate(lam: float, mu: np.ndarray, gamma_bar: np.ndarray, bandwidth: float) -> float:
    return float(np.log2(1.0 + nu(lam, mu, gamma_bar, bandwidth)).sum())


def _total_power(lam: float, mu: np.ndarray, gamma_bar: np.ndarray, bandwidth: float) -> float:
    return float(np.sum(pi(lam, mu, gamma_bar, bandwidth)))


def _log_bisect(fn: Callable[[float], float], target: float, hi: float) -> Tuple[float, float]:
    """Bracket [lo, hi] of the crossing of a non-increasing ``fn`` with ``target``."""
    lo = BISECTION_LO
    while fn(lo) < target:
        if lo < 1e-290:
            raise Infeasible(f"level {target:.6g} is not reached at any positive price")
        lo *= 1e-6
    for _ in range(BISECTION_STEPS):
        if hi / lo - 1.0 <= 1e-15:
            break
        mid = float(np.sqrt(lo * hi))
        if fn(mid) >= target:
            lo = mid
        else:
            hi = mid
    return lo, hi


def _price_ceiling(mu: np.ndarray, bandwidth: float) -> float:
    # above B*mu/ln2 on every block the response is zero
    return max(BISECTION_HI, 4.0 * bandwidth * float(np.max(mu)))


def _rate_price(mu: np.ndarray, gamma_bar: np.ndarray, bandwidth: float, theta: float) -> float:
    if theta <= 0:
        return np.inf
    ceiling = float(np.log2(1.0 + gamma_bar).sum())
    if theta >= ceiling:
        raise Infeasible(f"rate target {theta:.6g} bit/s/Hz is not below the cap {ceiling:.6g}")
    lo, _ = _log_bisect(lambda lam: _total_rate(lam, mu, gamma_bar, bandwidth), theta, _price_ceiling(mu, bandwidth))
    return lo


def _budget_price(mu: np.ndarray, gamma_bar: np.ndarray, bandwidth: float, p_max: float) -> float:
    _, hi = _log_bisect(lambda lam: _total_power(lam, mu, gamma_bar, bandwidth), p_max, _price_ceiling(mu, bandwidth))
    return hi


def _unconstrained_price(mu: np.ndarray, gamma_bar: np.ndarray, bandwidth: float, p_circuit: float) -> float:
    num_blocks = mu.shape[0]

    def rate(p: np.ndarray) -> float:
        return float(np.log2(1.0 + sinr_from_mu(mu, gamma_bar, p)).sum())

    problem: FractionalProblem[np.ndarray] = FractionalProblem(
        numerator=rate,
        denominator=lambda p: p_circuit + float(np.sum(p)),
        maximize=lambda lam, _: np.asarray(pi(lam, mu, gamma_bar, 1.0), dtype=float),
        tol=1e-12,
        max_iter=100,
    )
    seed_power = np.full(num_blocks, p_circuit / num_blocks)
    result = dinkelbach(problem, lam0=rate(seed_power) / (p_circuit + p_circuit))
    return bandwidth * result.lam


def _respond_n1(model: NetworkModel, k: int, mu: np.ndarray) -> UserResponse:
    mu_k = float(mu[0])
    gamma_bar = float(model.gamma_bar[k, 0])
    bandwidth = model.bandwidth
    p_max = float(model.p_max[k])
    unconstrained = scalar_dinkelbach_bestresponse(mu_k, gamma_bar, bandwidth, float(model.p_circuit[k]))

    gamma_min = float(model.min_sinr[k])
    if gamma_min > 0:
        try:
            p_low = float(power_for_sinr(mu_k, gamma_bar, gamma_min))
        except UnreachableSinr as exc:
            raise EmptyStrategySet(k, np.inf, p_max) from exc
        lam_low = float(price_for_sinr(gamma_min, mu_k, gamma_bar, bandwidth))
    else:
        p_low, lam_low = 0.0, np.inf
    if p_low > p_max * (1.0 + BUDGET_TOL):
        raise EmptyStrategySet(k, p_low, p_max)

    lam_high = float(price_for_sinr(sinr_from_mu(mu_k, gamma_bar, p_max), mu_k, gamma_bar, bandwidth))
    power = min(p_max, max(unconstrained.power, p_low))
    return UserResponse(power=np.array([power]), lam_star=unconstrained.lam, lam_low=lam_low, lam_high=lam_high)


def _respond_nblocks(model: NetworkModel, k: int, mu: np.ndarray) -> UserResponse:
    gamma_bar = model.gamma_bar[k]
    bandwidth = model.bandwidth
    p_max = float(model.p_max[k])
    lam_star = _unconstrained_price(mu, gamma_bar, bandwidth, float(model.p_circuit[k]))
    lam_high = _budget_price(mu, gamma_bar, bandwidth, p_max)
    try:
        lam_low = _rate_price(mu, gamma_bar, bandwidth, float(model.rate_target[k]))
    except Infeasible as exc:
        raise EmptyStrategySet(k, np.inf, p_max) from exc
    if lam_low < lam_high:
        needed = _total_power(lam_low, mu, gamma_bar, bandwidth)
        if needed > p_max * (1.0 + BUDGET_TOL):
            raise EmptyStrategySet(k, needed, p_max)
    lam_prime = max(lam_high, min(lam_star, lam_low))
    power = np.asarray(pi(lam_prime, mu, gamma_bar, bandwidth), dtype=float)
    return UserResponse(power=power, lam_star=lam_star, lam_low=lam_low, lam_high=lam_high)


def _respond(model: NetworkModel, k: int, mu: np.ndarray) -> UserResponse:
    if model.num_blocks == 1:
        return _respond_n1(model, k, mu)
    return _respond_nblocks(model, k, mu)


def min_power_n1(model: NetworkModel, p_others: PowerLike, k: int) -> float:
    """Smallest power meeting user k's rate target on a single block."""
    if model.num_blocks != 1:
        raise ValueError("min_power_n1 needs a single-block model")
    gamma_min = float(model.min_sinr[k])
    if gamma_min == 0:
        return 0.0
    mu = float(_mu_of(model, p_others, k)[0])
    return float(power_for_sinr(mu, model.gamma_bar[k, 0], gamma_min))


def best_response_n1(model: NetworkModel, p_others: PowerLike, k: int) -> float:
    if model.num_blocks != 1:
        raise ValueError("best_response_n1 needs a single-block model")
    return float(_respond_n1(model, k, _mu_of(model, p_others, k)).power[0])


def min_power_waterlevel(model: NetworkModel, p_others: PowerLike, k: int) -> WaterLevel:
    theta = float(model.rate_target[k])
    if theta <= 0:
        return WaterLevel(lam=np.inf, power=np.zeros(model.num_blocks))
    mu = _mu_of(model, p_others, k)
    gamma_bar = model.gamma_bar[k]
    lam = _rate_price(mu, gamma_bar, model.bandwidth, theta)
    return WaterLevel(lam=lam, power=np.asarray(pi(lam, mu, gamma_bar, model.bandwidth), dtype=float))


def best_response_nblocks(model: NetworkModel, p_others: PowerLike, k: int) -> np.ndarray:
    return _respond_nblocks(model, k, _mu_of(model, p_others, k)).power


def estimate_mu(measured_sinr, p, gamma_bar) -> np.ndarray:
    gamma = np.asarray(measured_sinr, dtype=float)
    p = np.asarray(p, dtype=float)
    gamma_bar = np.asarray(gamma_bar, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        shortfall = np.where(np.isinf(gamma_bar), 1.0, 1.0 - gamma / gamma_bar)
        mu = gamma / (p * shortfall)
    return np.where(p > 0, mu, np.nan)


def _measured(model: NetworkModel, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    sinr = sinr_matrix(model, p)
    mu = estimate_mu(sinr, p, model.gamma_bar)
    # a silent link measures nothing, fall back to the known gain
    mu = np.where(np.isfinite(mu), mu, mu_matrix(model, p))
    return sinr, mu


def fixed_point_residual(model: NetworkModel, p: PowerLike) -> float:
    matrix = as_power_matrix(model, p)
    mu = mu_matrix(model, matrix)
    gaps = [
        float(np.max(np.abs(_respond(model, k, mu[k]).power - matrix[k]))) / float(model.p_max[k])
        for k in range(model.num_users)
    ]
    return max(gaps)


def _default_profile(model: NetworkModel) -> np.ndarray:
    from app.services.centralized import default_start

    return default_start(model)


def run_brd(
    model: NetworkModel,
    p0: Optional[PowerLike] = None,
    schedule: str = SEQUENTIAL,
    tol: float = 1e-10,
    cap: int = 1000,
) -> BrdResult:
    if schedule not in (SEQUENTIAL, JACOBI):
        raise ValueError(f"unknown schedule {schedule!r}")
    p = _default_profile(model) if p0 is None else np.array(as_power_matrix(model, p0), dtype=float)
    if np.any(p < 0) or np.any(p.sum(axis=1) > model.p_max * (1.0 + BUDGET_TOL)):
        raise InfeasibleStart("start profile leaves the power budgets")
    if model.num_blocks == 1 and np.any(model.rate_target > 0):
        sufficient = brd_sufficient_condition(model)
        if not np.all(sufficient):
            logger.warning("Strategy sets may become empty for users %s", np.flatnonzero(~sufficient).tolist())

    num_users = model.num_users
    sinr, _ = _measured(model, p)
    nan = np.full(num_users, np.nan)
    states = [GameState(0, p.copy(), sinr, nan, nan, nan)]
    converged = False
    for iteration in range(1, cap + 1):
        lam_star, lam_low, lam_high = np.empty(num_users), np.empty(num_users), np.empty(num_users)
        updated = p.copy()
        _, frozen_mu = _measured(model, p)
        for k in range(num_users):
            mu = _measured(model, updated)[1][k] if schedule == SEQUENTIAL else frozen_mu[k]
            response = _respond(model, k, mu)
            updated[k] = response.power
            lam_star[k], lam_low[k], lam_high[k] = response.lam_star, response.lam_low, response.lam_high
        movement = float(np.max(np.abs(updated - p).max(axis=1) / model.p_max))
        p = updated
        sinr, _ = _measured(model, p)
        states.append(GameState(iteration, p.copy(), sinr, lam_star, lam_low, lam_high))
        logger.debug("brd iteration=%s movement=%.3g", iteration, movement)
        if movement <= tol:
            converged = True
            break
    if not converged:
        logger.warning("Best-response dynamics did not settle within %s rounds", cap)
    return BrdResult(states=states, converged=converged, schedule=schedule)


@dataclass(frozen=True)
class StandardFunctionViolation:
    prop: str
    profile: np.ndarray = field(repr=False)
    detail: str = ""


@dataclass(frozen=True)
class StandardFunctionReport:
    user: int
    samples: int
    skipped: int
    violations: List[StandardFunctionViolation]

    @property
    def holds(self) -> bool:
        return not self.violations


def standard_function_probe(
    model: NetworkModel, k: int, samples: int = 64, beta: float = 2.0, seed: SeedLike = None
) -> StandardFunctionReport:
    """Sampled check that user k's best response is non-negative, monotone and scalable in the others' powers."""
    if beta <= 1:
        raise ValueError("beta must exceed one")
    rng = as_generator(seed)
    spread = model.p_max[:, None] / model.num_blocks
    violations: List[StandardFunctionViolation] = []
    skipped = 0

    def respond(profile: np.ndarray) -> np.ndarray:
        return _respond(model, k, mu_matrix(model, profile)[k]).power

    for _ in range(samples):
        high = rng.uniform(0.0, 1.0, (model.num_users, model.num_blocks)) * spread
        low = high * rng.uniform(0.0, 1.0, high.shape)
        try:
            r_high, r_low, r_scaled = respond(high), respond(low), respond(beta * high)
        except (EmptyStrategySet, Infeasible):
            skipped += 1
            continue
        slack = 1e-9 * float(model.p_max[k])
        if np.any(r_high < 0):
            violations.append(StandardFunctionViolation("non-negativity", high, f"response {r_high}"))
        if np.any(r_high < r_low - slack):
            violations.append(StandardFunctionViolation("monotonicity", high, f"{r_high} below {r_low} for a dominated profile"))
        active = r_high > 0
        if np.any(active & (r_scaled >= beta * r_high)) or np.any(~active & (r_scaled > slack)):
            violations.append(StandardFunctionViolation("scalability", high, f"B(beta p)={r_scaled}, beta B(p)={beta * r_high}"))
    return StandardFunctionReport(user=k, samples=samples, skipped=skipped, violations=violations)


@dataclass(frozen=True)
class ContractionEstimate:
    value: float
    interference_norm_sq: float
    sensitivity_sup: float
    samples: int
    label: str = "HEURISTIC"

    @property
    def below_one(self) -> bool:
        return self.value < 1.0


def _sensitivity(model: NetworkModel, k: int, mu: np.ndarray, step: float = 1e-6) -> float:
    alpha = model.alpha[k]
    gamma_bar = model.gamma_bar[k]
    bandwidth = model.bandwidth
    scale = bandwidth / LN2
    lam = _respond(model, k, mu).lam_prime
    if not np.isfinite(lam) or lam <= 0:
        return 0.0
    active = scale * mu > lam
    if not np.any(active):
        return 0.0

    xi = np.zeros_like(mu)
    for ell in np.flatnonzero(active):
        up, down = mu.copy(), mu.copy()
        h = step * mu[ell]
        up[ell] += h
        down[ell] -= h
        derivative = (1.0 / _respond(model, k, up).lam_prime - 1.0 / _respond(model, k, down).lam_prime) / (2.0 * h)
        xi[ell] = mu[ell] ** 2 / alpha[ell] * derivative

    finite = np.isfinite(gamma_bar)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_val = g(lam, mu, gamma_bar, bandwidth)
        s_finite = gamma_bar * (g_val - (2.0 + gamma_bar)) / (2.0 * alpha * (1.0 + gamma_bar)) - gamma_bar * scale * mu / (
            lam * alpha * g_val
        )
        ratio = np.where(finite, gamma_bar / g_val, 1.0)
    s = np.where(finite, s_finite, -1.0 / alpha)
    index = np.flatnonzero(active)
    bracket = np.diag(s[index]) + (ratio[index][:, None] * scale) * xi[index][None, :]
    return float(np.sum(bracket**2))


def contraction_metric(model: NetworkModel, k: int, num_samples: int = 256, seed: SeedLike = None) -> ContractionEstimate:
    """Sampled lower estimate of the contraction bound for user k's best response.

    The supremum runs over equivalent gains between full-power interference
    and no interference, drawn log-uniformly. The result is a diagnostic,
    not a certificate.
    """
    others = np.arange(model.num_users) != k
    interference_norm_sq = float(np.sum(model.omega[k][others] ** 2))
    if interference_norm_sq == 0.0:
        return ContractionEstimate(0.0, 0.0, 0.0, 0)
    rng = as_generator(seed)
    mu_high = model.alpha[k] / model.noise[k]
    loudest = model.omega[k].T @ model.p_max
    mu_low = model.alpha[k] / (model.noise[k] + loudest)
    sup = 0.0
    for _ in range(num_samples):
        mu = np.exp(rng.uniform(np.log(mu_low), np.log(mu_high)))
        try:
            sup = max(sup, _sensitivity(model, k, mu))
        except (EmptyStrategySet, Infeasible):
            continue
    return ContractionEstimate(interference_norm_sq * sup, interference_norm_sq, sup, num_samples)
