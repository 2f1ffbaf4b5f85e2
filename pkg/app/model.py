"""Network data model, generalized SINR and energy-efficiency metrics.

All powers are linear Watts, rates are bit/s (or bit/s/Hz for the spectral
forms and the rate targets), gains are dimensionless. A zero self-interference
coefficient is represented by an infinite SINR cap, and every formula below
takes the analytic limit in that case.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from app.errors import DimensionError, UnreachableSinr

DEFAULT_FEASIBILITY_TOL = 1e-9


def _frozen(values, name: str, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise DimensionError(f"{name} must have {ndim} dimension(s), got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must be finite")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class NetworkModel:
    """Per-link coefficients of the generalized SINR plus budgets and targets.

    Shapes: ``alpha``, ``phi``, ``noise`` are (K, N); ``omega`` is (K, K, N)
    with ``omega[k, j, n]`` the gain of interferer j on user k over block n
    (the diagonal is ignored and stored as zero); ``p_max``, ``p_circuit``,
    ``rate_target`` and ``weight`` are (K,).
    """

    alpha: np.ndarray
    phi: np.ndarray
    omega: np.ndarray
    noise: np.ndarray
    p_max: np.ndarray
    p_circuit: np.ndarray
    rate_target: np.ndarray
    weight: np.ndarray
    bandwidth: float = 1.0

    def __post_init__(self) -> None:
        alpha = _frozen(self.alpha, "alpha", 2)
        num_users, num_blocks = alpha.shape
        if num_users < 1 or num_blocks < 1:
            raise DimensionError("a model needs at least one user and one block")
        phi = _frozen(self.phi, "phi", 2)
        noise = _frozen(self.noise, "noise", 2)
        omega = np.array(self.omega, dtype=float)
        if omega.shape != (num_users, num_users, num_blocks):
            raise DimensionError(f"omega must have shape {(num_users, num_users, num_blocks)}, got {omega.shape}")
        if not np.all(np.isfinite(omega)):
            raise ValueError("omega must be finite")
        for k in range(num_users):
            omega[k, k, :] = 0.0
        omega.setflags(write=False)
        for name, array in (("phi", phi), ("noise", noise)):
            if array.shape != (num_users, num_blocks):
                raise DimensionError(f"{name} must have shape {(num_users, num_blocks)}, got {array.shape}")

        vectors = {}
        for name in ("p_max", "p_circuit", "rate_target", "weight"):
            vector = _frozen(getattr(self, name), name, 1)
            if vector.shape != (num_users,):
                raise DimensionError(f"{name} must have shape {(num_users,)}, got {vector.shape}")
            vectors[name] = vector

        if np.any(alpha <= 0):
            raise ValueError("alpha must be strictly positive")
        if np.any(noise <= 0):
            raise ValueError("noise must be strictly positive")
        if np.any(phi < 0) or np.any(omega < 0):
            raise ValueError("phi and omega must be non-negative")
        if np.any(vectors["p_max"] <= 0) or np.any(vectors["p_circuit"] <= 0):
            raise ValueError("p_max and p_circuit must be strictly positive")
        if np.any(vectors["rate_target"] < 0):
            raise ValueError("rate_target must be non-negative")
        if np.any(vectors["weight"] < 0):
            raise ValueError("weight must be non-negative")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "noise", noise)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        for name, vector in vectors.items():
            object.__setattr__(self, name, vector)

    @property
    def num_users(self) -> int:
        return self.alpha.shape[0]

    @property
    def num_blocks(self) -> int:
        return self.alpha.shape[1]

    @property
    def total_circuit_power(self) -> float:
        return float(self.p_circuit.sum())

    @property
    def gamma_bar(self) -> np.ndarray:
        """Interference- and noise-free SINR cap, +inf where phi is zero."""
        with np.errstate(divide="ignore"):
            return np.where(self.phi > 0, self.alpha / np.where(self.phi > 0, self.phi, 1.0), np.inf)

    @property
    def min_sinr(self) -> np.ndarray:
        return np.exp2(self.rate_target) - 1.0

    def with_rate_targets(self, rate_target) -> "NetworkModel":
        return replace(self, rate_target=np.broadcast_to(np.asarray(rate_target, dtype=float), (self.num_users,)))

    def with_budget(self, p_max) -> "NetworkModel":
        return replace(self, p_max=np.broadcast_to(np.asarray(p_max, dtype=float), (self.num_users,)))

    def with_weights(self, weight) -> "NetworkModel":
        return replace(self, weight=np.broadcast_to(np.asarray(weight, dtype=float), (self.num_users,)))

    def relaxed(self) -> "NetworkModel":
        return self.with_rate_targets(0.0)


@dataclass(frozen=True)
class PowerAllocation:
    p: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.p, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2:
            raise DimensionError(f"power allocation must be (K, N), got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("powers must be finite and non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def total_per_user(self) -> np.ndarray:
        return self.p.sum(axis=1)


@dataclass(frozen=True)
class LinkState:
    mu: np.ndarray
    gamma_bar: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    budget_slack: np.ndarray = field(repr=False)
    rate_slack: np.ndarray = field(repr=False)


PowerLike = Union[PowerAllocation, np.ndarray, list]


def as_power_matrix(model: NetworkModel, p: PowerLike) -> np.ndarray:
    if isinstance(p, PowerAllocation):
        matrix = p.p
    else:
        matrix = np.asarray(p, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
    if matrix.shape != (model.num_users, model.num_blocks):
        raise DimensionError(
            f"power allocation shape {matrix.shape} does not match model {(model.num_users, model.num_blocks)}"
        )
    return matrix


def interference(model: NetworkModel, p: PowerLike) -> np.ndarray:
    matrix = as_power_matrix(model, p)
    return np.einsum("kjn,jn->kn", model.omega, matrix)


def mu_matrix(model: NetworkModel, p: PowerLike) -> np.ndarray:
    return model.alpha / (model.noise + interference(model, p))


def sinr_matrix(model: NetworkModel, p: PowerLike) -> np.ndarray:
    matrix = as_power_matrix(model, p)
    return model.alpha * matrix / (model.noise + model.phi * matrix + interference(model, p))


def compute_sinr(model: NetworkModel, p: PowerLike, k: int, n: int = 0) -> float:
    return float(sinr_matrix(model, p)[k, n])


def compute_mu(model: NetworkModel, p: PowerLike, k: int, n: int = 0) -> float:
    return float(mu_matrix(model, p)[k, n])


def sinr_from_mu(mu, gamma_bar, p):
    """SINR written through the equivalent gain and the SINR cap."""
    mu = np.asarray(mu, dtype=float)
    gamma_bar = np.asarray(gamma_bar, dtype=float)
    p = np.asarray(p, dtype=float)
    mu_p = mu * p
    with np.errstate(invalid="ignore"):
        bounded = gamma_bar * mu_p / (gamma_bar + mu_p)
    return np.where(np.isinf(gamma_bar), mu_p, bounded)


def power_for_sinr(mu, gamma_bar, gamma_target):
    mu = np.asarray(mu, dtype=float)
    gamma_bar = np.asarray(gamma_bar, dtype=float)
    gamma = np.asarray(gamma_target, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("target SINR must be non-negative")
    if np.any(gamma >= gamma_bar):
        raise UnreachableSinr(f"target SINR {gamma} is not below the cap {gamma_bar}")
    power = (gamma / mu) / (1.0 - gamma / gamma_bar)
    return float(power) if power.ndim == 0 else power


def link_state(model: NetworkModel, p: PowerLike) -> LinkState:
    return LinkState(mu=mu_matrix(model, p), gamma_bar=model.gamma_bar, gamma=sinr_matrix(model, p))


def spectral_rates(model: NetworkModel, p: PowerLike) -> np.ndarray:
    return np.log2(1.0 + sinr_matrix(model, p)).sum(axis=1)


def user_spectral_rate(model: NetworkModel, p: PowerLike, k: int) -> float:
    return float(spectral_rates(model, p)[k])


def user_rate(model: NetworkModel, p: PowerLike, k: int) -> float:
    return model.bandwidth * user_spectral_rate(model, p, k)


def user_ees(model: NetworkModel, p: PowerLike) -> np.ndarray:
    matrix = as_power_matrix(model, p)
    return model.bandwidth * spectral_rates(model, matrix) / (model.p_circuit + matrix.sum(axis=1))


def user_ee(model: NetworkModel, p: PowerLike, k: int) -> float:
    return float(user_ees(model, p)[k])


def gee(model: NetworkModel, p: PowerLike) -> float:
    matrix = as_power_matrix(model, p)
    total_rate = model.bandwidth * spectral_rates(model, matrix).sum()
    return float(total_rate / (model.total_circuit_power + matrix.sum()))


def min_weighted_ee(model: NetworkModel, p: PowerLike, weights: Optional[np.ndarray] = None) -> float:
    w = model.weight if weights is None else np.asarray(weights, dtype=float)
    return float(np.min(w * user_ees(model, p)))


def sum_spectral_rate(model: NetworkModel, p: PowerLike) -> float:
    return float(spectral_rates(model, p).sum())


def min_spectral_rate(model: NetworkModel, p: PowerLike) -> float:
    return float(spectral_rates(model, p).min())


def is_feasible_point(model: NetworkModel, p: PowerLike, tol: float = DEFAULT_FEASIBILITY_TOL) -> FeasibilityReport:
    """Budget and rate-target check with relative tolerance ``tol``."""
    matrix = as_power_matrix(model, p)
    budget_slack = model.p_max - matrix.sum(axis=1)
    rate_slack = spectral_rates(model, matrix) - model.rate_target
    budget_ok = budget_slack >= -tol * model.p_max
    rate_ok = rate_slack >= -tol * np.maximum(1.0, model.rate_target)
    nonneg = bool(np.all(matrix >= 0))
    return FeasibilityReport(
        feasible=bool(nonneg and np.all(budget_ok) and np.all(rate_ok)),
        budget_slack=budget_slack,
        rate_slack=rate_slack,
    )
