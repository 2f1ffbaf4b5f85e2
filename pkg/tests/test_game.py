import numpy as np
import pytest

from app.errors import EmptyStrategySet, Infeasible, InfeasibleStart
from app.model import mu_matrix, sinr_from_mu, sinr_matrix, user_ee
from app.services.feasibility import brd_sufficient_condition, check_feasible_n1
from app.services.game import (
    JACOBI,
    best_response_n1,
    best_response_nblocks,
    contraction_metric,
    estimate_mu,
    fixed_point_residual,
    min_power_n1,
    min_power_waterlevel,
    run_brd,
    standard_function_probe,
    write_brd_csv,
)


def _profile(model, rng):
    return rng.uniform(0.05, 1.0, (model.num_users, model.num_blocks)) * model.p_max[:, None] / model.num_blocks


def test_min_power_examples(make_model):
    assert min_power_n1(make_model(alpha=1.0), [0.5], 0) == 0.0
    assert min_power_n1(make_model(alpha=1.0, noise=1.0, rate_target=1.0), [0.0], 0) == pytest.approx(1.0)


def test_min_power_meets_target(synthetic, rng):
    model = synthetic(seed=3, num_users=3, rate_percentage=20.0)
    profile = _profile(model, rng)[:, 0]
    for k in range(3):
        trial = profile.copy()
        trial[k] = min_power_n1(model, profile, k)
        assert sinr_matrix(model, trial)[k, 0] == pytest.approx(model.min_sinr[k], rel=1e-10)


def test_best_response_matches_grid(synthetic, rng):
    for seed in range(20):
        model = synthetic(seed=seed, num_users=3, rate_percentage=5.0 * (seed % 3), cross_gain=0.05)
        profile = _profile(model, rng)[:, 0]
        k = seed % 3
        low = min_power_n1(model, profile, k)
        if low > model.p_max[k]:
            continue
        response = best_response_n1(model, profile, k)

        def ee_of(power):
            trial = profile.copy()
            trial[k] = power
            return user_ee(model, trial, k)

        grid = np.geomspace(max(low, 1e-9 * model.p_max[k]), model.p_max[k], 20_000)
        best = max(ee_of(power) for power in grid)
        assert low * (1.0 - 1e-9) <= response <= model.p_max[k] * (1.0 + 1e-12)
        assert ee_of(response) >= best * (1.0 - 1e-6)


def test_huge_circuit_power_uses_whole_budget(make_model):
    model = make_model(alpha=1.0, p_max=1.0, p_circuit=1e9)
    assert best_response_n1(model, [0.0], 0) == pytest.approx(1.0)


def test_rate_dominated_response(make_model):
    model = make_model(alpha=1.0, p_max=100.0, p_circuit=0.01, rate_target=np.log2(51.0))
    assert best_response_n1(model, [0.0], 0) == pytest.approx(50.0, rel=1e-10)


def test_empty_strategy_set(make_model):
    model = make_model(alpha=1.0, p_max=1.0, rate_target=np.log2(51.0))
    with pytest.raises(EmptyStrategySet) as excinfo:
        best_response_n1(model, [0.0], 0)
    assert excinfo.value.p_min == pytest.approx(50.0)


def test_waterlevel_without_target(synthetic, rng):
    model = synthetic(seed=1, num_blocks=3)
    level = min_power_waterlevel(model, _profile(model, rng), 0)
    np.testing.assert_array_equal(level.power, np.zeros(3))


def test_waterlevel_single_block_equals_min_power(synthetic, rng):
    model = synthetic(seed=5, num_users=3, rate_percentage=15.0)
    profile = _profile(model, rng)
    for k in range(3):
        level = min_power_waterlevel(model, profile, k)
        assert level.power[0] == pytest.approx(min_power_n1(model, profile[:, 0], k), rel=1e-8)


def test_waterlevel_meets_target(synthetic, rng):
    model = synthetic(seed=7, num_users=2, num_blocks=4, rate_percentage=25.0)
    profile = _profile(model, rng)
    mu = mu_matrix(model, profile)
    for k in range(2):
        level = min_power_waterlevel(model, profile, k)
        achieved = np.log2(1.0 + sinr_from_mu(mu[k], model.gamma_bar[k], level.power)).sum()
        assert achieved == pytest.approx(model.rate_target[k], abs=1e-8)


def test_waterlevel_rejects_unreachable_target(synthetic, rng):
    model = synthetic(seed=7, num_users=2, num_blocks=2)
    ceiling = np.log2(1.0 + model.gamma_bar).sum(axis=1)
    with pytest.raises(Infeasible):
        min_power_waterlevel(model.with_rate_targets(ceiling + 0.1), _profile(model, rng), 0)


def test_multi_block_response_degenerates(synthetic, rng):
    model = synthetic(seed=9, num_users=3, rate_percentage=10.0, cross_gain=0.05)
    profile = _profile(model, rng)
    for k in range(3):
        expected = best_response_n1(model, profile[:, 0], k)
        assert best_response_nblocks(model, profile, k)[0] == pytest.approx(expected, rel=1e-6)


def test_symmetric_blocks_get_equal_power(make_model):
    model = make_model(alpha=[[1.0, 1.0], [2.0, 2.0]], phi=0.01, omega=0.1, p_max=3.0)
    response = best_response_nblocks(model, np.full((2, 2), 0.5), 0)
    assert response[0] == pytest.approx(response[1], rel=1e-12)


def test_two_block_response_matches_grid(make_model):
    model = make_model(alpha=[[1.0, 4.0], [1.0, 1.0]], phi=[[0.02, 0.1], [0.01, 0.01]], omega=0.2, p_max=2.0, p_circuit=0.2)
    profile = np.array([[0.0, 0.0], [0.3, 0.7]])
    response = best_response_nblocks(model, profile, 0)
    mu = mu_matrix(model, profile)[0]
    axis = np.geomspace(1e-5, 2.0, 400)
    x, y = np.meshgrid(axis, axis, indexing="ij")
    rate = np.log2(1.0 + sinr_from_mu(mu[0], model.gamma_bar[0, 0], x)) + np.log2(
        1.0 + sinr_from_mu(mu[1], model.gamma_bar[0, 1], y)
    )
    ee = np.where(x + y <= 2.0, rate / (0.2 + x + y), -np.inf)
    trial = profile.copy()
    trial[0] = response
    assert response.sum() <= 2.0 * (1.0 + 1e-9)
    assert user_ee(model, trial, 0) >= float(ee.max()) * (1.0 - 1e-4)


def test_single_user_settles_after_one_sweep(make_model):
    model = make_model(alpha=1.0, phi=0.01, p_max=5.0)
    result = run_brd(model)
    assert result.converged
    assert result.iterations <= 2
    assert result.states[1].p[0, 0] == pytest.approx(best_response_n1(model, [0.0], 0))


def _contracting_instances(synthetic, count):
    models = []
    for seed in range(100, 100 + 4 * count):
        model = synthetic(seed=seed, num_users=3, rate_percentage=5.0, cross_gain=0.01, alpha_log10_min=0.0)
        if np.all(brd_sufficient_condition(model)) and check_feasible_n1(model).feasible:
            models.append(model)
        if len(models) == count:
            return models
    pytest.fail(f"only {len(models)} of {count} instances meet the sufficient condition")


def _agree_from_two_starts(model):
    first = run_brd(model)
    second = run_brd(model, p0=model.p_max[:, None].copy())
    assert first.converged and second.converged
    assert not np.allclose(first.states[0].p, second.states[0].p)
    spread = np.abs(first.power - second.power).max() / np.abs(first.power).max()
    assert spread < 1e-6
    assert fixed_point_residual(model, first.power) < 1e-7
    assert fixed_point_residual(model, second.power) < 1e-7


def test_dynamics_reach_a_unique_point(synthetic):
    for model in _contracting_instances(synthetic, 50):
        _agree_from_two_starts(model)


def test_contracting_users_settle(synthetic):
    settled = 0
    for model in _contracting_instances(synthetic, 10):
        estimates = [contraction_metric(model, k, num_samples=64, seed=k) for k in range(model.num_users)]
        if not all(estimate.below_one for estimate in estimates):
            continue
        _agree_from_two_starts(model)
        settled += 1
    assert settled > 0


def test_jacobi_schedule_agrees(synthetic):
    model = _contracting_instances(synthetic, 1)[0]
    sequential = run_brd(model)
    jacobi = run_brd(model, schedule=JACOBI)
    assert jacobi.converged
    np.testing.assert_allclose(jacobi.power, sequential.power, rtol=1e-6)


def test_multi_block_dynamics(synthetic, tmp_path):
    model = synthetic(seed=4, num_users=2, num_blocks=3, cross_gain=0.01, alpha_log10_min=0.0)
    result = run_brd(model)
    assert result.converged
    assert fixed_point_residual(model, result.power) < 1e-7
    frame = result.to_frame(model)
    assert len(frame) == (result.iterations + 1) * 2 * 3
    assert write_brd_csv(model, result, tmp_path / "brd.csv").exists()


def test_dynamics_validate_inputs(make_model):
    model = make_model(alpha=[1.0, 1.0], p_max=1.0)
    with pytest.raises(ValueError):
        run_brd(model, schedule="random")
    with pytest.raises(InfeasibleStart):
        run_brd(model, p0=[2.0, 0.5])


def test_estimate_mu(rng):
    mu = np.exp(rng.uniform(-2.0, 2.0, 50))
    gamma_bar = np.exp(rng.uniform(1.0, 5.0, 50))
    p = rng.uniform(0.1, 3.0, 50)
    np.testing.assert_allclose(estimate_mu(sinr_from_mu(mu, gamma_bar, p), p, gamma_bar), mu, rtol=1e-10)
    assert np.isnan(estimate_mu(0.0, 0.0, 10.0))


def test_standard_function_without_interference(make_model):
    model = make_model(alpha=[1.0, 2.0], phi=0.01, p_max=2.0)
    report = standard_function_probe(model, 0, samples=32, seed=1)
    assert report.holds
    assert report.skipped == 0


def test_standard_function_with_interference(synthetic):
    model = synthetic(seed=13, num_users=3, cross_gain=0.2)
    for k in range(3):
        report = standard_function_probe(model, k, samples=64, seed=k)
        assert report.holds, report.violations


def test_standard_function_rejects_small_scale(make_model):
    with pytest.raises(ValueError):
        standard_function_probe(make_model(alpha=1.0), 0, beta=1.0)


def test_contraction_zero_cases(make_model):
    assert contraction_metric(make_model(alpha=[1.0, 2.0], phi=0.01), 0).value == 0.0
    single = contraction_metric(make_model(alpha=1.0, phi=0.01), 0)
    assert single.value == 0.0
    assert single.below_one
    assert single.label == "HEURISTIC"


def test_contraction_estimate_is_finite(synthetic):
    model = synthetic(seed=3, num_users=3, num_blocks=2, cross_gain=0.01)
    estimate = contraction_metric(model, 0, num_samples=32, seed=0)
    assert np.isfinite(estimate.value)
    assert estimate.value >= 0.0
    assert estimate.samples == 32
