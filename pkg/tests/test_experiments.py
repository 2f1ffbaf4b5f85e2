from pathlib import Path

import numpy as np
import pytest

from app.config import Settings
from app.errors import ConfigError
from app.services.experiments import (
    STATUS_OK,
    STATUS_SKIPPED,
    TRIAL_COLUMNS,
    SweepPoint,
    _parse_grid,
    load_experiment_config,
    parse_experiment,
    plan_text,
    run_sweep,
    run_trial,
    sweep_points,
)
from app.utils.seeding import trial_seed

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def config_file(tmp_path, synthetic_config_text):
    path = tmp_path / "tiny.env"
    path.write_text(synthetic_config_text)
    return path


@pytest.fixture
def tiny(config_file, tmp_path):
    return load_experiment_config(config_file).with_defaults(Settings(output_dir=tmp_path / "out"))


def test_parse_grid():
    assert _parse_grid("-38:-10:4") == [-38.0, -34.0, -30.0, -26.0, -22.0, -18.0, -14.0, -10.0]
    assert _parse_grid("0:1:0.25") == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    assert _parse_grid("15, 20,25") == [15.0, 20.0, 25.0]
    with pytest.raises(ValueError):
        _parse_grid("5:0:1")


def test_loaded_config(tiny):
    assert tiny.name == "tiny"
    assert tiny.algorithms == ["alg1-gee", "alg2", "max-power"]
    assert tiny.p_max_dbw == [0.0, 10.0]
    assert tiny.trials == 2
    assert tiny.master_seed == 11
    assert tiny.scenario.kind == "synthetic"
    assert tiny.scenario.num_users == 2


@pytest.mark.parametrize(
    "values",
    [
        {"algorithms": "", "scenario.kind": "synthetic"},
        {"algorithms": "alg9", "scenario.kind": "synthetic"},
        {"algorithms": "alg1-gee", "scenario.kind": "synthetic", "scenario.num_blocks": "2"},
        {"algorithms": "max-power", "rate_percentage": "120", "scenario.kind": "synthetic"},
        {"algorithms": "max-power", "scenario.kind": "cellular"},
    ],
)
def test_rejected_configs(values):
    with pytest.raises(ConfigError):
        parse_experiment(values)


def test_multi_block_config_accepts_block_algorithms():
    config = parse_experiment({"algorithms": "alg3-gee,alg4", "scenario.kind": "synthetic", "scenario.num_blocks": "3"})
    assert config.scenario.num_blocks == 3


def test_diagnostics_carry_line_numbers(tmp_path):
    broken = tmp_path / "broken.env"
    broken.write_text("name=broken\nthis line is not valid\nscenario.kind=synthetic\n")
    with pytest.raises(ConfigError) as excinfo:
        load_experiment_config(broken)
    assert f"{broken}:2" in str(excinfo.value)

    bad_value = tmp_path / "bad_value.env"
    bad_value.write_text("name=bad\nscenario.kind=synthetic\ntrials=0\n")
    with pytest.raises(ConfigError) as excinfo:
        load_experiment_config(bad_value)
    assert excinfo.value.diagnostics[0][0] == 3
    assert "trials" in excinfo.value.diagnostics[0][1]


def test_sweep_points_are_rate_major(tiny):
    points = sweep_points(tiny)
    assert [(point.rate_percentage, point.p_max_dbw) for point in points] == [
        (0.0, 0.0),
        (0.0, 10.0),
        (10.0, 0.0),
        (10.0, 10.0),
    ]
    assert [point.index for point in points] == [0, 1, 2, 3]


def test_plan_text(tiny):
    plan = plan_text(tiny)
    assert "grid points: 4 (8 trials)" in plan
    assert "alg1-gee, alg2, max-power" in plan


def test_trial_without_targets(tiny):
    rows = run_trial(tiny, SweepPoint(0, 10.0, 0.0), trial_seed(11, 0, 0))
    by_name = {row["algorithm"]: row for row in rows}
    assert set(by_name) == {"alg1-gee", "alg2", "max-power"}
    assert all(row["status"] == STATUS_OK for row in rows)
    assert all(row["feasible"] == 1 and row["qos_relaxed"] == 0 for row in rows)
    assert by_name["alg1-gee"]["gee_bit_per_joule"] >= by_name["max-power"]["gee_bit_per_joule"] * (1.0 - 1e-9)
    assert by_name["max-power"]["iterations"] == 0


def test_unreachable_targets_are_skipped_without_fallback(tiny):
    config = tiny.copy(
        update={"qos_fallback": False, "scenario": tiny.scenario.copy(update={"cross_gain": 1.0})}
    )
    rows = run_trial(config, SweepPoint(0, -20.0, 95.0), trial_seed(11, 0, 0))
    assert all(row["status"] == STATUS_SKIPPED for row in rows)
    assert all(row["feasible"] == 0 for row in rows)
    assert all(np.isnan(row["gee_bit_per_joule"]) for row in rows)


def test_unreachable_targets_are_relaxed_with_fallback(tiny):
    config = tiny.copy(update={"scenario": tiny.scenario.copy(update={"cross_gain": 1.0})})
    rows = run_trial(config, SweepPoint(0, -20.0, 95.0), trial_seed(11, 0, 0))
    assert all(row["qos_relaxed"] == 1 for row in rows)
    assert all(row["status"] != STATUS_SKIPPED for row in rows)


def test_sweep_writes_results(tiny):
    result = run_sweep(tiny)
    assert list(result.trials.columns) == TRIAL_COLUMNS
    assert len(result.trials) == 4 * 2 * 3
    assert result.feasibility["trials"].sum() == 8
    assert set(result.gee["algorithm"]) == {"alg1-gee", "alg2", "max-power"}
    assert (result.gee["trials_ok"] <= 2).all()
    for name in ("trials", "feasibility", "gee", "min_ee", "iterations", "summary"):
        assert result.paths[name].exists()
    assert "wall_time_s" not in result.paths["trials"].read_text().splitlines()[0]
    assert "wall time" in result.paths["summary"].read_text()


def test_sweep_is_reproducible(tiny, tmp_path):
    first = run_sweep(tiny.copy(update={"output_dir": tmp_path / "first"}))
    second = run_sweep(tiny.copy(update={"output_dir": tmp_path / "second"}))
    assert first.paths["trials"].read_bytes() == second.paths["trials"].read_bytes()
    assert first.paths["gee"].read_bytes() == second.paths["gee"].read_bytes()


def test_trials_share_channels_across_points(tiny):
    result = run_sweep(tiny, write=False)
    seeds = result.trials.groupby("trial")["seed"].nunique()
    assert (seeds == 1).all()
    assert result.paths == {}


def test_block_game_runners_share_dynamics(tiny):
    config = tiny.copy(update={"algorithms": ["alg2", "alg4"]})
    rows = {row["algorithm"]: row for row in run_trial(config, SweepPoint(0, 10.0, 0.0), trial_seed(11, 0, 0))}
    assert rows["alg2"]["status"] == rows["alg4"]["status"] == STATUS_OK
    assert rows["alg2"]["gee_bit_per_joule"] == rows["alg4"]["gee_bit_per_joule"]

    blocks = parse_experiment(
        {"algorithms": "alg4", "scenario.kind": "synthetic", "scenario.num_blocks": "3", "scenario.cross_gain": "0.01"}
    )
    rows = run_trial(blocks, SweepPoint(0, 10.0, 0.0), trial_seed(11, 0, 0))
    assert rows[0]["status"] == STATUS_OK
    assert rows[0]["iterations"] >= 1


def _shipped(name, tmp_path, **update):
    config = load_experiment_config(CONFIG_DIR / f"{name}.env").copy(update=update)
    return config.with_defaults(Settings(output_dir=tmp_path / name, workers=1))


def _inversions(values):
    return int(np.sum(np.diff(np.asarray(values, dtype=float)) < 0))


@pytest.mark.slow
def test_feasibility_is_monotone_in_budget_and_target(tmp_path):
    result = run_sweep(_shipped("massive_mimo_feasibility", tmp_path, trials=40), write=False)
    table = result.feasibility.pivot(index="rate_percentage", columns="p_max_dbw", values="feasible_fraction")
    assert list(table.index) == [15.0, 20.0, 25.0, 30.0]
    for _, curve in table.iterrows():
        assert _inversions(curve.values) <= 1
    for _, curve in table.items():
        assert _inversions(-curve.values) <= 1


@pytest.fixture(scope="module")
def gee_sweep(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("gee")
    algorithms = ["alg1-gee", "alg2", "sum-rate"]
    config = _shipped("massive_mimo_gee", tmp_path, trials=10, rate_percentage=[0.0], algorithms=algorithms)
    return run_sweep(config, write=False)


def _curve(frame, algorithm, column):
    rows = frame[(frame["algorithm"] == algorithm) & (frame["rate_percentage"] == 0.0)].sort_values("p_max_dbw")
    return rows[column].to_numpy()


@pytest.mark.slow
def test_gee_saturates_with_budget(gee_sweep):
    curve = _curve(gee_sweep.gee, "alg1-gee", "gee_mean_bit_per_joule")
    assert np.all(np.diff(curve) >= -1e-3 * curve[:-1])
    top = curve[-3:]
    assert (top.max() - top.min()) / top.max() <= 0.01
    sum_rate = _curve(gee_sweep.gee, "sum-rate", "gee_mean_bit_per_joule")
    assert sum_rate[-1] <= 0.95 * curve[-1]


@pytest.mark.slow
def test_iteration_counts_stay_small(gee_sweep):
    centralized = _curve(gee_sweep.iterations, "alg1-gee", "iterations_mean")
    distributed = _curve(gee_sweep.iterations, "alg2", "iterations_mean")
    assert len(centralized) == 8
    assert np.all((centralized >= 1) & (centralized <= 15))
    assert distributed[0] <= centralized[0] + 2


@pytest.mark.slow
def test_centralized_dominates_distributed_per_trial(gee_sweep):
    trials = gee_sweep.trials
    ok = trials[trials["status"] == STATUS_OK]
    paired = ok.pivot_table(index=["point", "trial"], columns="algorithm", values="gee_bit_per_joule").dropna(
        subset=["alg1-gee", "alg2"]
    )
    assert len(paired) >= 60
    dominated = paired["alg1-gee"] >= paired["alg2"] * (1.0 - 1e-6)
    assert dominated.mean() >= 0.98


@pytest.mark.parametrize(
    "name, baseline", [("massive_mimo_gee", "min-rate"), ("relay_ofdma", "sum-rate")]
)
def test_shipped_sweeps_cover_targets_and_baselines(name, baseline):
    config = load_experiment_config(CONFIG_DIR / f"{name}.env")
    assert config.rate_percentage == [0.0, 20.0]
    assert baseline in config.algorithms
    assert "max-power" in config.algorithms
