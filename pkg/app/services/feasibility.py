"""Feasibility of rate targets under per-user power budgets."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from app.errors import DimensionError, Infeasible, SpectralRadiusNotConverged, TargetExceedsMaxSinr
from app.model import DEFAULT_FEASIBILITY_TOL, NetworkModel, sinr_matrix
from app.services.surrogate import bound_params, find_interior_point

logger = logging.getLogger(__name__)

POWER_ITERATION_TOL = 1e-10
POWER_ITERATION_MAX = 10_000


@dataclass(frozen=True)
class FeasibilityMatrix:
    F: np.ndarray
    s: np.ndarray
    gamma_min: np.ndarray


@dataclass(frozen=True)
class SingleBlockFeasibility:
    feasible: bool
    rho: float
    p_min: Optional[np.ndarray]
    reason: str = ""


@dataclass(frozen=True)
class MultiBlockFeasibility:
    feasible: bool
    slack: float
    point: np.ndarray


def _require_single_block(model: NetworkModel) -> None:
    if model.num_blocks != 1:
        raise DimensionError(f"expected a single-block model, got N={model.num_blocks}")


def build_feasibility_matrix(model: NetworkModel) -> FeasibilityMatrix:
    _require_single_block(model)
    gamma_min = model.min_sinr
    margin = model.alpha[:, 0] - model.phi[:, 0] * gamma_min
    if np.any(margin <= 0):
        raise TargetExceedsMaxSinr(np.flatnonzero(margin <= 0).tolist())
    scale = gamma_min / margin
    F = scale[:, None] * model.omega[:, :, 0]
    s = scale * model.noise[:, 0]
    return FeasibilityMatrix(F=F, s=s, gamma_min=gamma_min)


def _irreducible_radius(block: np.ndarray, tol: float, max_iter: int) -> float:
    # power iteration on block + I keeps the iteration aperiodic
    shifted = block + np.eye(block.shape[0])
    x = np.ones(block.shape[0])
    lower = upper = 0.0
    for _ in range(max_iter):
        y = shifted @ x
        ratios = y / x
        lower, upper = float(ratios.min()), float(ratios.max())
        if upper - lower <= tol * max(1.0, upper):
            return 0.5 * (lower + upper) - 1.0
        x = y / np.linalg.norm(y)
    raise SpectralRadiusNotConverged(lower - 1.0, upper - 1.0, max_iter)


def spectral_radius(F, tol: float = POWER_ITERATION_TOL, max_iter: int = POWER_ITERATION_MAX) -> float:
    """Perron root of a nonnegative matrix, block by strongly connected component."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {F.shape}")
    if not np.all(np.isfinite(F)) or np.any(F < 0):
        raise ValueError("spectral_radius needs a finite nonnegative matrix")
    num_components, labels = connected_components(csr_matrix(F), directed=True, connection="strong")
    rho = 0.0
    for component in range(num_components):
        index = np.flatnonzero(labels == component)
        block = F[np.ix_(index, index)]
        if index.size == 1:
            rho = max(rho, float(block[0, 0]))
        elif np.any(block > 0):
            rho = max(rho, _irreducible_radius(block, tol, max_iter))
    return rho


def min_power_vector(F, s) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    s = np.asarray(s, dtype=float)
    rho = spectral_radius(F)
    if rho >= 1.0:
        raise Infeasible(f"spectral radius {rho:.6g} is not below one")
    x = lu_solve(lu_factor(np.eye(F.shape[0]) - F), s)
    return np.maximum(x, 0.0)


def check_feasible_n1(model: NetworkModel, tol: float = DEFAULT_FEASIBILITY_TOL) -> SingleBlockFeasibility:
    _require_single_block(model)
    if not np.any(model.rate_target > 0):
        return SingleBlockFeasibility(True, 0.0, np.zeros(model.num_users))
    try:
        matrix = build_feasibility_matrix(model)
    except TargetExceedsMaxSinr as exc:
        return SingleBlockFeasibility(False, np.inf, None, str(exc))
    rho = spectral_radius(matrix.F)
    if rho >= 1.0:
        return SingleBlockFeasibility(False, rho, None, f"spectral radius {rho:.6g} >= 1")
    p_min = min_power_vector(matrix.F, matrix.s)
    over = p_min > model.p_max * (1.0 + tol)
    if np.any(over):
        return SingleBlockFeasibility(False, rho, p_min, f"minimum power exceeds budget for users {np.flatnonzero(over).tolist()}")
    return SingleBlockFeasibility(True, rho, p_min)


def brd_sufficient_condition(model: NetworkModel) -> np.ndarray:
    """Per-user check that the minimum power stays affordable when all others transmit at full budget."""
    _require_single_block(model)
    gamma_min = model.min_sinr
    margin = model.alpha[:, 0] - model.phi[:, 0] * gamma_min
    worst_interference = model.noise[:, 0] + model.omega[:, :, 0] @ model.p_max
    with np.errstate(divide="ignore", invalid="ignore"):
        needed = np.where(margin > 0, gamma_min * worst_interference / np.where(margin > 0, margin, 1.0), np.inf)
    needed = np.where(gamma_min == 0, 0.0, needed)
    return model.p_max >= needed


def check_feasible_nblocks(model: NetworkModel, expansion_point: Optional[np.ndarray] = None) -> MultiBlockFeasibility:
    if expansion_point is None:
        expansion_point = model.p_max[:, None] / model.num_blocks * np.ones((1, model.num_blocks))
    expansion_point = np.asarray(expansion_point, dtype=float)
    if np.any(expansion_point <= 0):
        raise ValueError("expansion point needs strictly positive powers")
    half_split = np.log2(0.5 * model.p_max[:, None] / model.num_blocks * np.ones((1, model.num_blocks)))
    if not np.any(model.rate_target > 0):
        return MultiBlockFeasibility(True, 0.5, np.exp2(half_split))
    a, b = bound_params(sinr_matrix(model, expansion_point))
    interior = find_interior_point(model, a, b, half_split)
    logger.debug("multi-block feasibility slack=%.6g", interior.slack)
    return MultiBlockFeasibility(interior.slack >= 0, interior.slack, np.exp2(interior.q))


def fixed_point_feasibility(
    model: NetworkModel, max_iter: int = 100_000, tol: float = 1e-12
) -> SingleBlockFeasibility:
    """Clipped standard-interference iteration p <- min(F p + s, p_max) from zero."""
    _require_single_block(model)
    if not np.any(model.rate_target > 0):
        return SingleBlockFeasibility(True, 0.0, np.zeros(model.num_users))
    try:
        matrix = build_feasibility_matrix(model)
    except TargetExceedsMaxSinr as exc:
        return SingleBlockFeasibility(False, np.inf, None, str(exc))
    p = np.zeros(model.num_users)
    for _ in range(max_iter):
        update = np.minimum(matrix.F @ p + matrix.s, model.p_max)
        if np.all(np.abs(update - p) <= tol * np.maximum(model.p_max, 1e-300)):
            p = update
            break
        p = update
    demand = matrix.F @ p + matrix.s
    feasible = bool(np.all(demand <= model.p_max * (1.0 + 1e-9)))
    return SingleBlockFeasibility(feasible, np.nan, p if feasible else None)
