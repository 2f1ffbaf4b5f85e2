import numpy as np
import pytest

from app.errors import DimensionError, UnreachableSinr
from app.model import (
    PowerAllocation,
    compute_mu,
    compute_sinr,
    gee,
    is_feasible_point,
    min_weighted_ee,
    mu_matrix,
    power_for_sinr,
    sinr_from_mu,
    sinr_matrix,
    spectral_rates,
    user_ee,
    user_ees,
    user_rate,
    user_spectral_rate,
)


def test_sinr_without_interference(make_model):
    model = make_model(alpha=1.0, noise=1.0)
    assert compute_sinr(model, [1.0], 0) == pytest.approx(1.0)


def test_sinr_saturates_at_cap(make_model):
    model = make_model(alpha=2.0, phi=1.0, noise=1.0)
    assert model.gamma_bar[0, 0] == pytest.approx(2.0)
    assert compute_sinr(model, [1e12], 0) == pytest.approx(2.0, rel=1e-9)


def test_sinr_matches_equivalent_gain_form(synthetic, rng):
    model = synthetic(seed=3, num_users=3, num_blocks=2)
    p = rng.uniform(0.1, 1.0, (3, 2)) * model.p_max[:, None]
    direct = sinr_matrix(model, p)
    rebuilt = sinr_from_mu(mu_matrix(model, p), model.gamma_bar, p)
    np.testing.assert_allclose(rebuilt, direct, rtol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_sinr_rises_with_own_power(synthetic, rng, seed):
    model = synthetic(seed=seed, num_users=3, num_blocks=2, cross_gain=0.5)
    p = rng.uniform(0.05, 1.0, (3, 2)) * model.p_max[:, None] / 2
    base = sinr_matrix(model, p)
    for k in range(3):
        for n in range(2):
            louder = p.copy()
            louder[k, n] *= 1.5
            changed = sinr_matrix(model, louder)
            assert changed[k, n] > base[k, n]
            others = np.arange(3) != k
            assert np.all(changed[others, n] < base[others, n])
            np.testing.assert_array_equal(np.delete(changed, n, axis=1), np.delete(base, n, axis=1))


@pytest.mark.parametrize("seed", range(20))
def test_sinr_falls_as_interference_grows(synthetic, rng, seed):
    model = synthetic(seed=seed, num_users=4, cross_gain=0.5)
    p = rng.uniform(0.05, 1.0, 4) * model.p_max
    for k in range(4):
        previous = compute_sinr(model, p, k)
        for scale in (1.5, 3.0, 10.0):
            crowded = scale * p
            crowded[k] = p[k]
            current = compute_sinr(model, crowded, k)
            assert current < previous
            previous = current


def test_infinite_cap_without_self_interference(make_model):
    model = make_model(alpha=[1.0, 2.0], phi=[0.0, 0.5])
    assert np.isinf(model.gamma_bar[0, 0])
    assert model.gamma_bar[1, 0] == pytest.approx(4.0)


def test_mu_without_interferers(make_model):
    model = make_model(alpha=1.0, noise=1.0)
    assert compute_mu(model, [0.7], 0) == pytest.approx(1.0)


def test_mu_halves_when_interference_doubles(make_model):
    model = make_model(alpha=[1.0, 1.0], omega=[[0.0, 0.3], [0.2, 0.0]], noise=1e-15)
    p = np.array([1.0, 2.0])
    ratio = compute_mu(model, 2.0 * p, 0) / compute_mu(model, p, 0)
    assert ratio == pytest.approx(0.5, rel=1e-9)


def test_mu_direct_formula(synthetic, rng):
    model = synthetic(seed=5, num_users=3)
    p = rng.uniform(0.0, 1.0, 3) * model.p_max
    for k in range(3):
        interference = sum(model.omega[k, j, 0] * p[j] for j in range(3) if j != k)
        expected = model.alpha[k, 0] / (model.noise[k, 0] + interference)
        assert compute_mu(model, p, k) == pytest.approx(expected, rel=1e-12)


def test_power_for_sinr_examples():
    assert power_for_sinr(1.0, 2.0, 0.0) == 0.0
    assert power_for_sinr(1.0, 2.0, 1.0) == pytest.approx(2.0)
    assert power_for_sinr(0.5, np.inf, 3.0) == pytest.approx(6.0)


def test_power_for_sinr_rejects_cap():
    with pytest.raises(UnreachableSinr):
        power_for_sinr(1.0, 2.0, 2.0)


def test_power_for_sinr_inverts_sinr(rng):
    mu = np.exp(rng.uniform(-5.0, 5.0, 1000))
    gamma_bar = np.exp(rng.uniform(0.0, 7.0, 1000))
    gamma = rng.uniform(0.0, 0.99, 1000) * gamma_bar
    power = power_for_sinr(mu, gamma_bar, gamma)
    np.testing.assert_allclose(sinr_from_mu(mu, gamma_bar, power), gamma, rtol=1e-10)


def test_rates(make_model, synthetic, rng):
    model = make_model(alpha=1.0, bandwidth=1.0)
    assert user_rate(model, [0.0], 0) == 0.0
    assert user_rate(model, [1.0], 0) == pytest.approx(1.0)

    multi = synthetic(seed=1, num_users=2, num_blocks=2, bandwidth_hz=3.0)
    p = rng.uniform(0.1, 1.0, (2, 2))
    sinr = sinr_matrix(multi, p)
    expected = np.log2(1.0 + sinr[1, 0]) + np.log2(1.0 + sinr[1, 1])
    assert user_spectral_rate(multi, p, 1) == pytest.approx(expected)
    assert user_rate(multi, p, 1) == pytest.approx(3.0 * expected)


def test_user_ee(make_model):
    model = make_model(alpha=1.0, p_circuit=1.0)
    assert user_ee(model, [0.0], 0) == 0.0
    assert user_ee(model, [1.0], 0) == pytest.approx(0.5)
    assert gee(model, [1.0]) == pytest.approx(user_ee(model, [1.0], 0))


def test_gee_direct_formula(synthetic, rng):
    model = synthetic(seed=2, num_users=2, bandwidth_hz=10.0)
    p = rng.uniform(0.1, 1.0, 2) * model.p_max
    expected = 10.0 * spectral_rates(model, p).sum() / (model.p_circuit.sum() + p.sum())
    assert gee(model, p) == pytest.approx(expected)
    assert gee(model, np.zeros(2)) == 0.0


def test_min_weighted_ee(synthetic, rng):
    model = synthetic(seed=4, num_users=3)
    p = rng.uniform(0.1, 1.0, 3)
    weights = np.array([1.0, 0.5, 2.0])
    assert min_weighted_ee(model, p, weights) == pytest.approx(np.min(weights * user_ees(model, p)))
    assert min_weighted_ee(model, p, [1.0, 0.0, 1.0]) == 0.0
    single = synthetic(seed=4, num_users=1)
    assert min_weighted_ee(single, [0.3]) == pytest.approx(user_ee(single, [0.3], 0))


def test_feasible_point(make_model):
    model = make_model(alpha=[1.0, 1.0], p_max=1.0)
    assert is_feasible_point(model, [0.0, 0.0]).feasible
    report = is_feasible_point(model, [2.0, 0.5])
    assert not report.feasible
    assert report.budget_slack[0] == pytest.approx(-1.0)


def test_rate_slack(make_model):
    model = make_model(alpha=1.0, rate_target=1.0, p_max=10.0)
    assert is_feasible_point(model, [1.0]).feasible
    report = is_feasible_point(model, [0.5])
    assert not report.feasible
    assert report.rate_slack[0] < 0


def test_dimension_errors(make_model):
    model = make_model(alpha=[1.0, 1.0])
    with pytest.raises(DimensionError):
        sinr_matrix(model, np.ones(3))
    with pytest.raises(DimensionError):
        PowerAllocation(np.ones((2, 2, 2)))


def test_model_validation(make_model):
    with pytest.raises(ValueError):
        make_model(alpha=1.0, phi=-1.0)
    with pytest.raises(ValueError):
        make_model(alpha=0.0)
    model = make_model(alpha=[1.0, 1.0], omega=[[5.0, 0.1], [0.2, 5.0]])
    assert model.omega[0, 0, 0] == 0.0
    assert model.omega[1, 1, 0] == 0.0
    assert model.relaxed().rate_target.sum() == 0.0
