import time

import numpy as np
import pandas as pd
import pytest

from app.errors import InfeasibleStart
from app.model import gee, is_feasible_point, min_weighted_ee, sinr_from_mu, user_ees
from app.services.centralized import (
    OuterTolerances,
    default_start,
    max_power_allocation,
    objective_value,
    solve,
    solve_gee,
    solve_min_ee,
    solve_min_rate,
    solve_sum_rate,
    write_run_csv,
)
from app.services.surrogate import ObjectiveKind

SOLVERS = [solve_gee, solve_min_ee, solve_sum_rate, solve_min_rate]


@pytest.fixture
def qos_model(synthetic):
    return synthetic(seed=31, num_users=3, rate_percentage=10.0, cross_gain=0.02, alpha_log10_min=0.0)


def _grid_best_gee(model, points=400):
    """Best GEE of a two-user single-block model over a uniform power grid."""
    axis = np.linspace(0.0, 1.0, points)
    p = np.stack(np.meshgrid(axis * model.p_max[0], axis * model.p_max[1], indexing="ij"))
    alpha, phi, noise = model.alpha[:, 0], model.phi[:, 0], model.noise[:, 0]
    rate = 0.0
    for k, j in ((0, 1), (1, 0)):
        sinr = alpha[k] * p[k] / (noise[k] + phi[k] * p[k] + model.omega[k, j, 0] * p[j])
        rate = rate + np.log2(1.0 + sinr)
    return float(np.max(model.bandwidth * rate / (model.total_circuit_power + p[0] + p[1])))


@pytest.mark.parametrize("solver", SOLVERS)
def test_single_block_runs_are_monotone_and_feasible(qos_model, solver):
    run = solver(qos_model)
    assert run.failure is None
    assert run.exact_rate
    assert run.is_monotone()
    assert is_feasible_point(qos_model, run.power).feasible


@pytest.mark.parametrize("solver", SOLVERS)
def test_multi_block_runs_are_monotone_and_feasible(synthetic, solver):
    model = synthetic(seed=8, num_users=2, num_blocks=2, rate_percentage=10.0, cross_gain=0.02, alpha_log10_min=0.0)
    run = solver(model)
    assert run.failure is None
    assert not run.exact_rate
    assert run.is_monotone()
    assert is_feasible_point(model, run.power).feasible


def test_single_user_gee_matches_grid(make_model):
    model = make_model(alpha=1.0, phi=0.01, noise=1.0, p_max=10.0, p_circuit=1.0)
    run = solve_gee(model)
    powers = np.linspace(0.0, 10.0, 100_001)
    best = float(np.max(np.log2(1.0 + sinr_from_mu(1.0, 100.0, powers)) / (1.0 + powers)))
    assert run.objective >= 0.99 * best
    assert run.objective <= best * (1.0 + 1e-6)


def test_two_user_gee_near_grid_optimum(synthetic):
    model = synthetic(seed=2, num_users=2, cross_gain=0.1)
    run = solve_gee(model)
    assert run.objective >= 0.98 * _grid_best_gee(model) or run.records[-1].kkt_residual <= 1e-5


def test_two_user_centering_stays_short(synthetic):
    model = synthetic(seed=0, num_users=2, cross_gain=0.1)
    run = solve_gee(model)
    for record in run.records[1:]:
        assert record.inner_iterations >= 1
        assert record.newton_iterations <= 300 * record.inner_iterations


def test_single_user_min_ee_equals_gee(make_model):
    model = make_model(alpha=2.0, phi=0.05, p_max=5.0, p_circuit=0.5)
    assert solve_min_ee(model).objective == pytest.approx(solve_gee(model).objective, rel=5e-3)


def test_weight_scaling_leaves_allocation(qos_model):
    weights = np.array([1.0, 2.0, 0.5])
    base = solve_min_ee(qos_model, weights=weights)
    scaled = solve_min_ee(qos_model, weights=5.0 * weights)
    assert min_weighted_ee(qos_model, scaled.power, 5.0 * weights) == pytest.approx(5.0 * base.objective, rel=1e-3)


def test_symmetric_users_share_efficiency(make_model):
    model = make_model(alpha=[1.0, 1.0], phi=0.01, omega=0.05, p_max=4.0, p_circuit=1.0)
    run = solve_min_ee(model)
    ees = user_ees(model, run.power)
    assert ees[0] == pytest.approx(ees[1], rel=1e-2)


def test_sum_rate_spends_budget_without_self_interference(make_model):
    model = make_model(alpha=1.0, p_max=3.0)
    run = solve_sum_rate(model)
    assert run.power.sum() == pytest.approx(3.0, rel=1e-6)


def test_sum_rate_is_less_efficient_at_large_budget(synthetic):
    model = synthetic(seed=6, num_users=3, p_max_dbw=20.0, cross_gain=0.05)
    assert gee(model, solve_sum_rate(model).power) <= gee(model, solve_gee(model).power) * (1.0 + 1e-6)


def test_min_rate_equalizes_symmetric_users(make_model):
    model = make_model(alpha=[1.0, 1.0], phi=0.01, omega=0.1, p_max=2.0)
    run = solve_min_rate(model)
    rates = np.log2(1.0 + run.power[:, 0] / (1.0 + 0.01 * run.power[:, 0] + 0.1 * run.power[::-1, 0]))
    assert rates[0] == pytest.approx(rates[1], rel=1e-3)


def test_infeasible_start_is_rejected(qos_model):
    with pytest.raises(InfeasibleStart):
        solve_gee(qos_model, p_start=2.0 * qos_model.p_max)


def test_default_start(synthetic, qos_model):
    relaxed = synthetic(seed=1, num_users=2)
    np.testing.assert_allclose(default_start(relaxed), 0.5 * max_power_allocation(relaxed))
    assert is_feasible_point(qos_model, default_start(qos_model)).feasible


def test_feasibility_is_not_an_objective(qos_model):
    with pytest.raises(ValueError):
        solve(qos_model, ObjectiveKind.FEASIBILITY)
    with pytest.raises(ValueError):
        objective_value(qos_model, ObjectiveKind.FEASIBILITY, default_start(qos_model))


def test_relaxed_start_warns_instead_of_raising(qos_model):
    run = solve_gee(qos_model, tols=OuterTolerances(strict=False, max_outer=3))
    assert 1 <= run.iterations <= 3


def test_run_record_csv(qos_model, tmp_path):
    run = solve_gee(qos_model)
    path = write_run_csv(run, tmp_path / "runs" / "gee.csv")
    frame = pd.read_csv(path)
    assert list(frame["iteration"]) == list(range(run.iterations + 1))
    assert frame["objective"].iloc[-1] == pytest.approx(run.objective, rel=1e-10)
    assert objective_value(qos_model, ObjectiveKind.GEE, run.power) == pytest.approx(run.objective)


@pytest.mark.slow
def test_two_user_oracle_acceptance(synthetic):
    started = time.perf_counter()
    close = 0
    for seed in range(100):
        model = synthetic(seed=seed, num_users=2, cross_gain=0.1)
        run = solve_gee(model)
        if run.objective >= 0.98 * _grid_best_gee(model):
            close += 1
        else:
            assert run.records[-1].kkt_residual <= 1e-5
    assert close >= 90
    assert time.perf_counter() - started < 120.0
