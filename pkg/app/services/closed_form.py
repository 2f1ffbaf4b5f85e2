"""Closed-form per-block best response at a given energy price.

For a link with equivalent gain ``mu`` and SINR cap ``gamma_bar``, the power
maximizing ``B*log2(1 + SINR(p)) - x*p`` is ``pi(x)`` and reaches SINR
``nu(x)``. ``B`` enters only as ``B/ln 2`` because the rate is measured with
log2. ``gamma_bar = inf`` takes the interference-free limit.
"""

from __future__ import annotations

import numpy as np

from app.utils.units import LN2


def _scale(bandwidth) -> np.ndarray:
    return np.asarray(bandwidth, dtype=float) / LN2


def g(x, mu, gamma_bar, bandwidth=1.0):
    x, mu, gamma_bar = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, mu, gamma_bar)))
    c = _scale(bandwidth)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.sqrt(gamma_bar**2 + 4.0 * c * mu * (1.0 + gamma_bar) / x)
    return np.where(np.isinf(gamma_bar), np.inf, value)


def nu(x, mu, gamma_bar, bandwidth=1.0):
    x, mu, gamma_bar = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, mu, gamma_bar)))
    c = _scale(bandwidth)
    gain = np.maximum(c * mu - x, 0.0)
    finite = np.isfinite(gamma_bar)
    with np.errstate(divide="ignore", invalid="ignore"):
        bounded = 2.0 * gamma_bar * gain / (2.0 * c * mu + x * (gamma_bar + g(x, mu, gamma_bar, bandwidth)))
        unbounded = gain / x
    value = np.where(finite, bounded, unbounded)
    return np.where(x <= 0, gamma_bar, value)


def pi(x, mu, gamma_bar, bandwidth=1.0):
    """Power reaching ``nu(x)``: (nu/mu) / (1 - nu/gamma_bar)."""
    x, mu, gamma_bar = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, mu, gamma_bar)))
    c = _scale(bandwidth)
    gain = np.maximum(c * mu - x, 0.0)
    finite = np.isfinite(gamma_bar)
    with np.errstate(divide="ignore", invalid="ignore"):
        bounded = 2.0 * gamma_bar * gain / (mu * x * (gamma_bar + g(x, mu, gamma_bar, bandwidth) + 2.0))
        unbounded = gain / (mu * x)
    value = np.where(finite, bounded, unbounded)
    return np.where(x <= 0, np.inf, value)


def nu_expanded(x, mu, gamma_bar, bandwidth=1.0, form: str = "single"):
    """Unsimplified optimal-SINR expressions, kept as a cross-check of :func:`nu`.

    ``form="single"`` is gamma_bar * [1 + x/(2 c mu) (gamma_bar - g)]+ and
    ``form="multi"`` is gamma_bar/(2 mu) * [2 mu + (x/c)(gamma_bar - g)]+, with
    c = B/ln 2. Both lose precision when x is small.
    """
    x, mu, gamma_bar = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, mu, gamma_bar)))
    c = _scale(bandwidth)
    spread = gamma_bar - g(x, mu, gamma_bar, bandwidth)
    if form == "single":
        return gamma_bar * np.maximum(1.0 + x / (2.0 * c * mu) * spread, 0.0)
    if form == "multi":
        return gamma_bar / (2.0 * mu) * np.maximum(2.0 * mu + x / c * spread, 0.0)
    raise ValueError(f"unknown form {form!r}")


def stationarity_quadratic(gamma, x, mu, gamma_bar, bandwidth=1.0):
    """c mu gamma^2 - (2 c mu gamma_bar + x gamma_bar^2) gamma + gamma_bar^2 (c mu - x), zero at nu(x)."""
    c = _scale(bandwidth)
    gamma = np.asarray(gamma, dtype=float)
    return c * mu * gamma**2 - (2.0 * c * mu * gamma_bar + x * gamma_bar**2) * gamma + gamma_bar**2 * (c * mu - x)


def quadratic_scale(x, mu, gamma_bar, bandwidth=1.0):
    c = _scale(bandwidth)
    return np.maximum.reduce(
        [
            np.abs(c * mu * gamma_bar**2),
            np.abs((2.0 * c * mu * gamma_bar + x * gamma_bar**2) * gamma_bar),
            np.abs(gamma_bar**2 * c * mu),
            np.abs(gamma_bar**2 * x),
        ]
    )


def price_for_sinr(gamma, mu, gamma_bar, bandwidth=1.0):
    """Inverse of :func:`nu`: the price at which the optimal SINR is ``gamma``."""
    gamma, mu, gamma_bar = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (gamma, mu, gamma_bar)))
    c = _scale(bandwidth)
    with np.errstate(invalid="ignore"):
        shortfall = np.where(np.isinf(gamma_bar), 1.0, 1.0 - gamma / gamma_bar)
    return c * mu * np.maximum(shortfall, 0.0) ** 2 / (1.0 + gamma)
