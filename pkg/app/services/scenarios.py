"""Scenario generators producing :class:`~app.model.NetworkModel` instances."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Type, Union

import numpy as np
from pydantic import BaseModel, Extra, Field, root_validator, validator

from app.errors import ScenarioError, TargetUndefined
from app.model import NetworkModel
from app.utils.configfile import split_list
from app.utils.seeding import SeedLike, as_generator
from app.utils.units import dbm_to_watts, dbw_to_watts, thermal_noise_watts

logger = logging.getLogger(__name__)

PATH_LOSS_DB_AT_1M = 38.0
PATH_LOSS_EXPONENT = 3.5


class _ScenarioBase(BaseModel):
    bandwidth_hz: float = Field(1e6, gt=0)
    noise_figure_db: float = 3.0
    n0_dbm_hz: float = -174.0
    p_circuit_dbm: float = 10.0
    p_max_dbw: float = -10.0
    rate_percentage: float = Field(0.0, ge=0, le=100)
    weight: float = Field(1.0, ge=0)
    path_loss_db_1m: float = PATH_LOSS_DB_AT_1M
    path_loss_exponent: float = Field(PATH_LOSS_EXPONENT, gt=0)
    seed: Optional[int] = None

    class Config:
        extra = Extra.forbid
        allow_mutation = False

    @property
    def noise_w(self) -> float:
        return thermal_noise_watts(self.bandwidth_hz, self.noise_figure_db, self.n0_dbm_hz)


class MassiveMimoScenario(_ScenarioBase):
    kind: Literal["massive-mimo"] = "massive-mimo"
    num_users: int = Field(5, ge=1)
    num_antennas: int = Field(50, ge=1)
    cell_radius_m: float = Field(250.0, gt=0)
    min_distance_m: float = Field(35.0, gt=0)
    epsilon_bs: float = Field(0.1, ge=0, lt=1)
    csi: Literal["perfect", "estimated"] = "perfect"
    tau: float = Field(1e-2, gt=0)

    @root_validator(skip_on_failure=True)
    def _geometry(cls, values: Dict[str, object]) -> Dict[str, object]:
        if values["min_distance_m"] >= values["cell_radius_m"]:
            raise ValueError("min_distance_m must be smaller than cell_radius_m")
        if values["num_antennas"] < values["num_users"]:
            logger.warning(
                "Massive MIMO scenario with fewer antennas (%s) than users (%s)",
                values["num_antennas"],
                values["num_users"],
            )
        return values


class RelayOfdmaScenario(_ScenarioBase):
    kind: Literal["relay-ofdma"] = "relay-ofdma"
    bandwidth_hz: float = Field(180e3, gt=0)
    num_cells: int = Field(3, ge=1)
    num_users: int = Field(3, ge=1)
    num_antennas: int = Field(3, ge=1)
    num_subcarriers: int = Field(16, ge=1)
    relay_power_w: List[float] = Field(default_factory=lambda: [0.1])
    user_distance_min_m: float = Field(100.0, gt=0)
    user_distance_max_m: float = Field(300.0, gt=0)
    relay_bs_distance_m: float = Field(150.0, gt=0)

    @validator("relay_power_w", pre=True)
    def _split_relay_powers(cls, value: object) -> List[float]:
        return [float(chunk) for chunk in split_list(value)]

    @root_validator(skip_on_failure=True)
    def _consistent(cls, values: Dict[str, object]) -> Dict[str, object]:
        powers = values["relay_power_w"]
        if len(powers) not in (1, values["num_subcarriers"]):
            raise ValueError("relay_power_w needs one value or one per subcarrier")
        if any(power < 0 for power in powers):
            raise ValueError("relay powers must be non-negative")
        if values["user_distance_min_m"] > values["user_distance_max_m"]:
            raise ValueError("user distance interval is empty")
        return values

    @property
    def relay_powers(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.relay_power_w, dtype=float), (self.num_subcarriers,)).copy()


class SyntheticScenario(BaseModel):
    kind: Literal["synthetic"] = "synthetic"
    num_users: int = Field(3, ge=1)
    num_blocks: int = Field(1, ge=1)
    alpha_log10_min: float = -1.0
    alpha_log10_max: float = 1.0
    cross_gain: float = Field(0.1, ge=0)
    gamma_bar_min: float = Field(10.0, gt=0)
    gamma_bar_max: float = Field(1000.0, gt=0)
    self_interference: bool = True
    noise_w: float = Field(1.0, gt=0)
    p_max_dbw: float = 10.0
    p_circuit_w: float = Field(1.0, gt=0)
    bandwidth_hz: float = Field(1.0, gt=0)
    rate_percentage: float = Field(0.0, ge=0, le=100)
    weight: float = Field(1.0, ge=0)
    seed: Optional[int] = None

    class Config:
        extra = Extra.forbid
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def _ranges(cls, values: Dict[str, object]) -> Dict[str, object]:
        if values["alpha_log10_min"] > values["alpha_log10_max"]:
            raise ValueError("alpha_log10_min exceeds alpha_log10_max")
        if values["gamma_bar_min"] > values["gamma_bar_max"]:
            raise ValueError("gamma_bar_min exceeds gamma_bar_max")
        return values


ScenarioConfig = Union[MassiveMimoScenario, RelayOfdmaScenario, SyntheticScenario]

SCENARIO_TYPES: Dict[str, Type[BaseModel]] = {
    "massive-mimo": MassiveMimoScenario,
    "relay-ofdma": RelayOfdmaScenario,
    "synthetic": SyntheticScenario,
}


def path_loss_gain(distance_m, pl0_db: float = PATH_LOSS_DB_AT_1M, exponent: float = PATH_LOSS_EXPONENT):
    """Linear large-scale gain of a log-distance path loss referenced at 1 m."""
    distance = np.asarray(distance_m, dtype=float)
    if np.any(distance <= 0):
        raise ScenarioError("distances must be strictly positive")
    return np.power(10.0, -(pl0_db + 10.0 * exponent * np.log10(distance)) / 10.0)


def gen_channel(
    seed: SeedLike,
    dims: Union[int, Tuple[int, ...]],
    distance,
    pl0_db: float = PATH_LOSS_DB_AT_1M,
    exponent: float = PATH_LOSS_EXPONENT,
) -> np.ndarray:
    """Rayleigh channel: CN(0, g(d)) entries, ``distance`` broadcast against ``dims``."""
    rng = as_generator(seed)
    gain = path_loss_gain(distance, pl0_db, exponent)
    real = rng.standard_normal(dims)
    imag = rng.standard_normal(dims)
    return np.sqrt(gain / 2.0) * (real + 1j * imag)


def drop_users(rng: np.random.Generator, num_users: int, min_distance: float, max_distance: float) -> np.ndarray:
    radius_sq = rng.uniform(min_distance**2, max_distance**2, size=num_users)
    return np.sqrt(radius_sq)


def target_rates_from_percentage(model: NetworkModel, rate_percentage) -> np.ndarray:
    percentage = np.broadcast_to(np.asarray(rate_percentage, dtype=float), (model.num_users,))
    if np.any(percentage < 0) or np.any(percentage > 100):
        raise ValueError("rate percentages must lie in [0, 100]")
    gamma_bar = model.gamma_bar
    targets = np.zeros(model.num_users)
    for k in range(model.num_users):
        if percentage[k] == 0:
            continue
        if np.any(np.isinf(gamma_bar[k])):
            raise TargetUndefined(f"user {k} has no self-interference, its maximum rate is unbounded")
        targets[k] = percentage[k] / 100.0 * float(np.log2(1.0 + gamma_bar[k]).sum())
    return targets


def _finalize(
    alpha: np.ndarray,
    phi: np.ndarray,
    omega: np.ndarray,
    noise: np.ndarray,
    cfg: Union[_ScenarioBase, SyntheticScenario],
    p_circuit_w: float,
) -> NetworkModel:
    num_users = alpha.shape[0]
    try:
        model = NetworkModel(
            alpha=alpha,
            phi=phi,
            omega=omega,
            noise=noise,
            p_max=np.full(num_users, float(dbw_to_watts(cfg.p_max_dbw))),
            p_circuit=np.full(num_users, p_circuit_w),
            rate_target=np.zeros(num_users),
            weight=np.full(num_users, cfg.weight),
            bandwidth=cfg.bandwidth_hz,
        )
    except ValueError as exc:
        raise ScenarioError(f"generated coefficients are invalid: {exc}") from exc
    if cfg.rate_percentage > 0:
        model = model.with_rate_targets(target_rates_from_percentage(model, cfg.rate_percentage))
    return model


def _resolve_seed(cfg, seed: SeedLike) -> SeedLike:
    return cfg.seed if seed is None else seed


def gen_massive_mimo(cfg: MassiveMimoScenario, seed: SeedLike = None) -> NetworkModel:
    rng = as_generator(_resolve_seed(cfg, seed))
    distances = drop_users(rng, cfg.num_users, cfg.min_distance_m, cfg.cell_radius_m)
    sigma2 = cfg.noise_w

    if cfg.csi == "estimated":
        # statistical CSI; antenna count does not enter the coefficients
        large_scale = path_loss_gain(distances, cfg.path_loss_db_1m, cfg.path_loss_exponent)
        rho = large_scale / (cfg.tau + large_scale)
        alpha = rho**2
        phi = large_scale * rho
        omega = rho[:, None] * large_scale[None, :]
        noise = sigma2 * rho
    else:
        h = gen_channel(
            rng, (cfg.num_users, cfg.num_antennas), distances[:, None], cfg.path_loss_db_1m, cfg.path_loss_exponent
        )
        power = np.abs(h) ** 2
        norms = power.sum(axis=1)
        gram = h.conj() @ h.T
        eps2 = cfg.epsilon_bs**2
        alpha = norms**2
        phi = eps2 * (power**2).sum(axis=1)
        omega = np.abs(gram) ** 2 + eps2 * (power @ power.T)
        noise = sigma2 * norms

    p_circuit = float(dbm_to_watts(cfg.p_circuit_dbm))
    return _finalize(alpha[:, None], phi[:, None], omega[:, :, None], noise[:, None], cfg, p_circuit)


@dataclass(frozen=True)
class RelayCoefficients:
    alpha: np.ndarray
    phi: np.ndarray
    omega: np.ndarray
    noise: np.ndarray
    serving_bs: np.ndarray


def relay_coefficients(cfg: RelayOfdmaScenario, seed: SeedLike = None) -> RelayCoefficients:
    rng = as_generator(_resolve_seed(cfg, seed))
    num_users, num_carriers = cfg.num_users, cfg.num_subcarriers
    distances = rng.uniform(cfg.user_distance_min_m, cfg.user_distance_max_m, size=num_users)
    to_relay = gen_channel(
        rng, (num_users, num_carriers), distances[:, None], cfg.path_loss_db_1m, cfg.path_loss_exponent
    )
    to_bs = gen_channel(
        rng,
        (cfg.num_cells, num_carriers, cfg.num_antennas),
        cfg.relay_bs_distance_m,
        cfg.path_loss_db_1m,
        cfg.path_loss_exponent,
    )
    serving = np.arange(num_users) % cfg.num_cells
    # MRC on the relay-to-BS hop: |c^H h|^2 = ||h||^4 and ||c||^2 = ||h||^2
    filter_norm = (np.abs(to_bs[serving]) ** 2).sum(axis=2)
    coherent = filter_norm**2

    sigma2 = cfg.noise_w
    relay_power = cfg.relay_powers[None, :]
    user_gain = np.abs(to_relay) ** 2
    forwarded = relay_power * coherent + sigma2 * filter_norm

    alpha = relay_power * user_gain * coherent
    phi = sigma2 * user_gain * filter_norm
    omega = forwarded[:, None, :] * user_gain[None, :, :]
    noise = sigma2 * forwarded
    return RelayCoefficients(alpha=alpha, phi=phi, omega=omega, noise=noise, serving_bs=serving)


def gen_relay_ofdma(cfg: RelayOfdmaScenario, seed: SeedLike = None) -> NetworkModel:
    coefficients = relay_coefficients(cfg, seed)
    if np.any(coefficients.alpha <= 0):
        raise ScenarioError("relay power is zero on some subcarrier, direct gains vanish")
    p_circuit = float(dbm_to_watts(cfg.p_circuit_dbm))
    return _finalize(coefficients.alpha, coefficients.phi, coefficients.omega, coefficients.noise, cfg, p_circuit)


def gen_synthetic(cfg: SyntheticScenario, seed: SeedLike = None) -> NetworkModel:
    rng = as_generator(_resolve_seed(cfg, seed))
    shape = (cfg.num_users, cfg.num_blocks)
    alpha = np.power(10.0, rng.uniform(cfg.alpha_log10_min, cfg.alpha_log10_max, size=shape))
    gamma_bar = np.exp(rng.uniform(np.log(cfg.gamma_bar_min), np.log(cfg.gamma_bar_max), size=shape))
    phi = alpha / gamma_bar if cfg.self_interference else np.zeros(shape)
    scale = np.power(10.0, rng.uniform(cfg.alpha_log10_min, cfg.alpha_log10_max, size=(cfg.num_users,) + shape))
    omega = cfg.cross_gain * scale * rng.uniform(0.0, 1.0, size=(cfg.num_users,) + shape)
    noise = np.full(shape, cfg.noise_w)
    return _finalize(alpha, phi, omega, noise, cfg, cfg.p_circuit_w)


def generate(cfg: ScenarioConfig, seed: SeedLike = None) -> NetworkModel:
    if isinstance(cfg, MassiveMimoScenario):
        return gen_massive_mimo(cfg, seed)
    if isinstance(cfg, RelayOfdmaScenario):
        return gen_relay_ofdma(cfg, seed)
    if isinstance(cfg, SyntheticScenario):
        return gen_synthetic(cfg, seed)
    raise ScenarioError(f"unsupported scenario config {type(cfg).__name__}")


def scenario_from_mapping(values: Dict[str, str]) -> ScenarioConfig:
    kind = values.get("kind", "massive-mimo")
    try:
        model_cls = SCENARIO_TYPES[kind]
    except KeyError as exc:
        raise ScenarioError(f"unknown scenario kind {kind!r}, expected one of {sorted(SCENARIO_TYPES)}") from exc
    return model_cls.parse_obj(values)


def num_blocks_of(cfg: ScenarioConfig) -> int:
    if isinstance(cfg, RelayOfdmaScenario):
        return cfg.num_subcarriers
    if isinstance(cfg, SyntheticScenario):
        return cfg.num_blocks
    return 1


def describe(cfg: ScenarioConfig) -> str:
    fields: Sequence[str] = [f"{name}={value}" for name, value in cfg.dict().items() if name != "kind"]
    return f"{cfg.kind}({', '.join(fields)})"
