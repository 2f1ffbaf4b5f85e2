from __future__ import annotations

from typing import Callable

import numpy as np
import pytest

from app.model import NetworkModel
from app.services.scenarios import SyntheticScenario, gen_synthetic


def _per_link(value, num_users: int, num_blocks: int) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim == 1:
        array = array[:, None]
    return np.broadcast_to(array, (num_users, num_blocks)).copy()


def build_model(
    alpha,
    phi=0.0,
    omega=None,
    noise=1.0,
    p_max=1.0,
    p_circuit=1.0,
    rate_target=0.0,
    weight=1.0,
    bandwidth=1.0,
) -> NetworkModel:
    """Model from scalars or per-user lists; ``alpha`` fixes K (and N when 2-D)."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 0:
        alpha = alpha.reshape(1, 1)
    elif alpha.ndim == 1:
        alpha = alpha[:, None]
    num_users, num_blocks = alpha.shape
    if omega is None:
        omega = np.zeros((num_users, num_users, num_blocks))
    else:
        omega = np.asarray(omega, dtype=float)
        if omega.ndim == 0:
            omega = np.full((num_users, num_users), float(omega))
        if omega.ndim == 2:
            omega = np.repeat(omega[:, :, None], num_blocks, axis=2)
    return NetworkModel(
        alpha=alpha,
        phi=_per_link(phi, num_users, num_blocks),
        omega=omega,
        noise=_per_link(noise, num_users, num_blocks),
        p_max=np.broadcast_to(np.asarray(p_max, dtype=float), (num_users,)).copy(),
        p_circuit=np.broadcast_to(np.asarray(p_circuit, dtype=float), (num_users,)).copy(),
        rate_target=np.broadcast_to(np.asarray(rate_target, dtype=float), (num_users,)).copy(),
        weight=np.broadcast_to(np.asarray(weight, dtype=float), (num_users,)).copy(),
        bandwidth=bandwidth,
    )


@pytest.fixture
def make_model() -> Callable[..., NetworkModel]:
    return build_model


@pytest.fixture
def synthetic() -> Callable[..., NetworkModel]:
    def factory(seed: int = 0, **fields) -> NetworkModel:
        return gen_synthetic(SyntheticScenario(**fields), seed)

    return factory


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20160)


@pytest.fixture
def synthetic_config_text() -> str:
    return "\n".join(
        [
            "name=tiny",
            "algorithms=alg1-gee,alg2,max-power",
            "p_max_dbw=0,10",
            "rate_percentage=0,10",
            "trials=2",
            "master_seed=11",
            "scenario.kind=synthetic",
            "scenario.num_users=2",
            "scenario.cross_gain=0.05",
            "",
        ]
    )
