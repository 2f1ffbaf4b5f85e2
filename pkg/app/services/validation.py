"""Numerical invariant checks run by the ``validate`` command."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from app.errors import PowerControlError
from app.model import NetworkModel, link_state, sinr_from_mu, sinr_matrix, user_ees
from app.services.centralized import OuterTolerances, solve_gee
from app.services.feasibility import check_feasible_n1, fixed_point_feasibility
from app.services.game import best_response_n1, min_power_n1
from app.services.surrogate import bound_params, bound_params_at, equal_split_q, surrogate_gee, surrogate_gee_gradient
from app.utils.seeding import SeedLike, as_generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    skipped: bool = False


@dataclass
class ValidationReport:
    label: str
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]

    def lines(self) -> List[str]:
        rows = []
        for check in self.checks:
            state = "skip" if check.skipped else ("ok" if check.passed else "FAIL")
            rows.append(f"[{state}] {self.label} {check.name}: {check.detail}")
        return rows


def _skip(name: str, reason: str) -> CheckResult:
    return CheckResult(name, True, reason, skipped=True)


def _random_profile(model: NetworkModel, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.05, 1.0, (model.num_users, model.num_blocks)) * model.p_max[:, None] / model.num_blocks


def check_sinr_identity(model: NetworkModel, rng: np.random.Generator) -> CheckResult:
    p = _random_profile(model, rng)
    state = link_state(model, p)
    rebuilt = sinr_from_mu(state.mu, state.gamma_bar, p)
    error = float(np.max(np.abs(rebuilt - state.gamma) / np.maximum(state.gamma, 1e-300)))
    return CheckResult("sinr-identity", error <= 1e-10, f"max relative error {error:.3g}")


def check_bound_validity(rng: np.random.Generator, samples: int = 10_000) -> CheckResult:
    gamma = np.exp(rng.uniform(np.log(1e-6), np.log(1e6), samples))
    gamma_tilde = np.exp(rng.uniform(np.log(1e-6), np.log(1e6), samples))
    a, b = bound_params(gamma_tilde)
    gap = np.log2(1.0 + gamma) - (a * np.log2(gamma) + b)
    tight = np.abs(np.log2(1.0 + gamma_tilde) - (a * np.log2(gamma_tilde) + b))
    worst = float(gap.min())
    passed = worst >= -1e-12 and float(tight.max()) <= 1e-10
    return CheckResult("bound-validity", passed, f"min gap {worst:.3g}, max tightness error {float(tight.max()):.3g}")


def check_feasibility_oracle(model: NetworkModel) -> CheckResult:
    if model.num_blocks != 1:
        return _skip("feasibility-oracle", "multi-block model")
    report = check_feasible_n1(model)
    if abs(report.rho - 1.0) < 1e-6 or (
        report.p_min is not None and np.any(np.abs(report.p_min / model.p_max - 1.0) < 1e-6)
    ):
        return _skip("feasibility-oracle", "instance sits on the feasibility boundary")
    oracle = fixed_point_feasibility(model).feasible
    return CheckResult(
        "feasibility-oracle", report.feasible == oracle, f"spectral test {report.feasible}, fixed point {oracle}"
    )


def check_min_power_tightness(model: NetworkModel) -> CheckResult:
    if model.num_blocks != 1 or not np.any(model.rate_target > 0):
        return _skip("min-power-tightness", "no single-block rate targets")
    report = check_feasible_n1(model)
    if not report.feasible:
        return _skip("min-power-tightness", "targets infeasible")
    sinr = sinr_matrix(model, report.p_min)[:, 0]
    targeted = model.rate_target > 0
    error = float(np.max(np.abs(sinr[targeted] - model.min_sinr[targeted]) / model.min_sinr[targeted]))
    return CheckResult("min-power-tightness", error <= 1e-8, f"max relative SINR error {error:.3g}")


def check_surrogate_gradient(model: NetworkModel, rng: np.random.Generator, step: float = 1e-6) -> CheckResult:
    p = _random_profile(model, rng)
    a, b = bound_params_at(model, p)
    q = equal_split_q(model, 0.5) + rng.uniform(-1.0, 1.0, (model.num_users, model.num_blocks))
    analytic = surrogate_gee_gradient(model, a, b, q)
    numeric = np.zeros_like(q)
    for index in np.ndindex(*q.shape):
        up, down = q.copy(), q.copy()
        up[index] += step
        down[index] -= step
        numeric[index] = (surrogate_gee(model, a, b, up) - surrogate_gee(model, a, b, down)) / (2.0 * step)
    scale = max(float(np.max(np.abs(analytic))), 1e-6 * abs(surrogate_gee(model, a, b, q)), 1e-300)
    error = float(np.max(np.abs(analytic - numeric))) / scale
    return CheckResult("surrogate-gradient", error <= 1e-4, f"relative error {error:.3g}")


def check_best_response_grid(model: NetworkModel, rng: np.random.Generator, points: int = 20_000) -> CheckResult:
    if model.num_blocks != 1:
        return _skip("best-response-grid", "multi-block model")
    profile = _random_profile(model, rng)[:, 0]
    k = int(rng.integers(model.num_users))
    try:
        low = min_power_n1(model, profile, k)
        response = best_response_n1(model, profile, k)
    except PowerControlError as exc:
        return _skip("best-response-grid", f"user {k}: {exc}")
    p_max = float(model.p_max[k])
    if low > p_max:
        return _skip("best-response-grid", f"user {k} has an empty strategy set")

    def ee_of(power: float) -> float:
        trial = profile.copy()
        trial[k] = power
        return float(user_ees(model, trial)[k])

    grid = np.geomspace(max(low, p_max * 1e-9), p_max, points)
    best = max(ee_of(value) for value in grid)
    achieved = ee_of(response)
    passed = achieved >= best * (1.0 - 1e-6)
    return CheckResult("best-response-grid", passed, f"user {k}: response EE {achieved:.6g}, grid best {best:.6g}")


def check_dinkelbach_monotone(model: NetworkModel) -> CheckResult:
    try:
        run = solve_gee(model.relaxed(), tols=OuterTolerances(strict=False))
    except PowerControlError as exc:
        return CheckResult("gee-monotone", False, str(exc))
    return CheckResult("gee-monotone", run.is_monotone(), f"{run.iterations} outer iterations, GEE {run.objective:.6g}")


def run_suite(model: NetworkModel, label: str = "model", seed: SeedLike = None, slow: bool = True) -> ValidationReport:
    rng = as_generator(seed)
    report = ValidationReport(label)
    checks: List[Callable[[], CheckResult]] = [
        lambda: check_sinr_identity(model, rng),
        lambda: check_bound_validity(rng),
        lambda: check_feasibility_oracle(model),
        lambda: check_min_power_tightness(model),
        lambda: check_surrogate_gradient(model, rng),
        lambda: check_best_response_grid(model, rng),
    ]
    if slow:
        checks.append(lambda: check_dinkelbach_monotone(model))
    for check in checks:
        result = check()
        if not result.passed:
            logger.warning("Invariant check failed for %s: %s (%s)", label, result.name, result.detail)
        report.checks.append(result)
    return report

