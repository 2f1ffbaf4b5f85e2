from __future__ import annotations

import math

import numpy as np


def db_to_linear(value_db):
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbw_to_watts(value_dbw):
    return db_to_linear(value_dbw)


def dbm_to_watts(value_dbm):
    return db_to_linear(np.asarray(value_dbm, dtype=float) - 30.0)


def watts_to_dbw(value_w):
    return linear_to_db(value_w)


def thermal_noise_watts(bandwidth_hz: float, noise_figure_db: float, n0_dbm_hz: float) -> float:
    """Receiver noise power F * B * N0 in Watts."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return float(dbm_to_watts(n0_dbm_hz) * bandwidth_hz * db_to_linear(noise_figure_db))


LN2 = math.log(2.0)
