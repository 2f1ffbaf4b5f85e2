"""Config-driven Monte-Carlo sweeps over power budgets and rate targets."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Extra, Field, root_validator, validator
from scipy.linalg import LinAlgError

from app.config import Settings, get_settings
from app.errors import ConfigError, PowerControlError
from app.model import (
    NetworkModel,
    gee,
    is_feasible_point,
    min_spectral_rate,
    min_weighted_ee,
    sum_spectral_rate,
)
from app.services.centralized import (
    CentralizedRun,
    max_power_allocation,
    solve_gee,
    solve_min_ee,
    solve_min_rate,
    solve_sum_rate,
)
from app.services.feasibility import check_feasible_n1, check_feasible_nblocks
from app.services.game import run_brd
from app.services.scenarios import SCENARIO_TYPES, ScenarioConfig, describe, generate, num_blocks_of
from app.utils.configfile import SCENARIO_PREFIX, ConfigEntries, load_entries, split_list, validate_entries
from app.utils.export import write_frame
from app.utils.seeding import trial_seed

logger = logging.getLogger(__name__)

DEFAULT_POWER_GRID_DBW = tuple(float(value) for value in range(-38, -9, 4))
SCENARIO_STREAM = 0

SINGLE_BLOCK_ALGORITHMS = ("alg1-gee", "alg1-minee", "alg2")
ALGORITHMS = SINGLE_BLOCK_ALGORITHMS + ("alg3-gee", "alg3-minee", "alg4", "sum-rate", "min-rate", "max-power")

STATUS_OK = "ok"
STATUS_PARTIAL = "partial"
STATUS_FAILED = "failed"
STATUS_SKIPPED = "skipped"

TRIAL_COLUMNS = [
    "point",
    "p_max_dbw",
    "rate_percentage",
    "trial",
    "seed",
    "algorithm",
    "feasible",
    "qos_relaxed",
    "status",
    "gee_bit_per_joule",
    "min_ee_bit_per_joule",
    "min_rate_bit_per_s_hz",
    "sum_rate_bit_per_s_hz",
    "total_power_w",
    "iterations",
    "wall_time_s",
    "error",
]
GRID_KEYS = ["rate_percentage", "p_max_dbw"]


def _parse_grid(value: object) -> List[float]:
    """Comma separated numbers, or ``start:stop:step`` with ``stop`` included."""
    if isinstance(value, str) and ":" in value:
        try:
            start, stop, step = (float(chunk) for chunk in value.split(":"))
        except ValueError as exc:
            raise ValueError(f"range {value!r} must read start:stop:step") from exc
        if step <= 0 or stop < start:
            raise ValueError(f"range {value!r} is empty")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(count)]
    return [float(chunk) for chunk in split_list(value)]


class ExperimentConfig(BaseModel):
    name: str = "experiment"
    scenario: ScenarioConfig = Field(..., discriminator="kind")
    p_max_dbw: List[float] = Field(default_factory=lambda: list(DEFAULT_POWER_GRID_DBW))
    rate_percentage: List[float] = Field(default_factory=lambda: [0.0])
    algorithms: List[str] = Field(default_factory=lambda: ["alg1-gee", "max-power"])
    trials: Optional[int] = Field(None, ge=1)
    master_seed: Optional[int] = Field(None, ge=0)
    output_dir: Optional[Path] = None
    workers: Optional[int] = Field(None, ge=1)
    qos_fallback: bool = True

    class Config:
        extra = Extra.forbid

    @validator("p_max_dbw", "rate_percentage", pre=True)
    def _split_grid(cls, value: object) -> object:
        return _parse_grid(value) if isinstance(value, str) else value

    @validator("algorithms", pre=True)
    def _split_algorithms(cls, value: object) -> List[str]:
        return [name.lower() for name in split_list(value)]

    @validator("p_max_dbw", "rate_percentage")
    def _non_empty_grid(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("grid must not be empty")
        return value

    @validator("rate_percentage")
    def _percentages(cls, value: List[float]) -> List[float]:
        if any(not 0 <= item <= 100 for item in value):
            raise ValueError("rate percentages must lie in [0, 100]")
        return value

    @validator("algorithms")
    def _known_algorithms(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one algorithm is required")
        unknown = [name for name in value if name not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}, expected a subset of {list(ALGORITHMS)}")
        return value

    @root_validator(skip_on_failure=True)
    def _block_count(cls, values: Dict[str, object]) -> Dict[str, object]:
        if num_blocks_of(values["scenario"]) > 1:
            single = [name for name in values["algorithms"] if name in SINGLE_BLOCK_ALGORITHMS]
            if single:
                raise ValueError(f"{single} need a single-block scenario")
        return values

    def with_defaults(self, settings: Settings) -> "ExperimentConfig":
        update = {}
        if self.trials is None:
            update["trials"] = settings.trials
        if self.master_seed is None:
            update["master_seed"] = settings.master_seed
        if self.output_dir is None:
            update["output_dir"] = settings.output_dir
        if self.workers is None:
            update["workers"] = settings.workers
        return self.copy(update=update) if update else self


def experiment_from_entries(entries: ConfigEntries) -> ExperimentConfig:
    section = entries.section(SCENARIO_PREFIX)
    kind = section.values.get("kind", "massive-mimo")
    scenario_cls = SCENARIO_TYPES.get(kind)
    if scenario_cls is None:
        raise ConfigError(
            entries.source,
            [(section.line_of("kind"), f"scenario.kind: unknown scenario {kind!r}, expected one of {sorted(SCENARIO_TYPES)}")],
        )
    scenario = validate_entries(scenario_cls, section, prefix=SCENARIO_PREFIX)
    return validate_entries(ExperimentConfig, entries.without(SCENARIO_PREFIX), extra={"scenario": scenario})


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    return experiment_from_entries(load_entries(path))


@dataclass(frozen=True)
class SweepPoint:
    index: int
    p_max_dbw: float
    rate_percentage: float


def sweep_points(config: ExperimentConfig) -> List[SweepPoint]:
    points = []
    for rate in config.rate_percentage:
        for power in config.p_max_dbw:
            points.append(SweepPoint(len(points), power, rate))
    return points


def point_scenario(config: ExperimentConfig, point: SweepPoint) -> ScenarioConfig:
    return config.scenario.copy(update={"p_max_dbw": point.p_max_dbw, "rate_percentage": point.rate_percentage})


@dataclass(frozen=True)
class AlgorithmOutcome:
    power: Optional[np.ndarray]
    iterations: int
    failure: Optional[str] = None


def _centralized(run: CentralizedRun) -> AlgorithmOutcome:
    return AlgorithmOutcome(run.power, run.iterations, run.failure)


def _brd(model: NetworkModel) -> AlgorithmOutcome:
    # serves alg2 and alg4: run_brd picks the closed-form or the water-filling response from the block count
    result = run_brd(model)
    failure = None if result.converged else "best-response dynamics did not settle"
    return AlgorithmOutcome(result.power, result.iterations, failure)


_RUNNERS: Dict[str, Callable[[NetworkModel], AlgorithmOutcome]] = {
    "alg1-gee": lambda model: _centralized(solve_gee(model, exact_rate=True)),
    "alg1-minee": lambda model: _centralized(solve_min_ee(model, exact_rate=True)),
    "alg2": _brd,
    "alg3-gee": lambda model: _centralized(solve_gee(model, exact_rate=False)),
    "alg3-minee": lambda model: _centralized(solve_min_ee(model, exact_rate=False)),
    "alg4": _brd,
    "sum-rate": lambda model: _centralized(solve_sum_rate(model)),
    "min-rate": lambda model: _centralized(solve_min_rate(model)),
    "max-power": lambda model: AlgorithmOutcome(max_power_allocation(model), 0),
}


def is_qos_feasible(model: NetworkModel) -> bool:
    if not np.any(model.rate_target > 0):
        return True
    if model.num_blocks == 1:
        return check_feasible_n1(model).feasible
    return check_feasible_nblocks(model).feasible


def _metrics(model: NetworkModel, power: Optional[np.ndarray]) -> Dict[str, float]:
    if power is None:
        return {
            "gee_bit_per_joule": np.nan,
            "min_ee_bit_per_joule": np.nan,
            "min_rate_bit_per_s_hz": np.nan,
            "sum_rate_bit_per_s_hz": np.nan,
            "total_power_w": np.nan,
        }
    return {
        "gee_bit_per_joule": gee(model, power),
        "min_ee_bit_per_joule": min_weighted_ee(model, power),
        "min_rate_bit_per_s_hz": min_spectral_rate(model, power),
        "sum_rate_bit_per_s_hz": sum_spectral_rate(model, power),
        "total_power_w": float(np.sum(power)),
    }


def run_trial(config: ExperimentConfig, point: SweepPoint, seed: int, trial: int = 0) -> List[Dict[str, object]]:
    """All configured algorithms on one random scenario; failures become rows, never exceptions."""
    base = {
        "point": point.index,
        "p_max_dbw": point.p_max_dbw,
        "rate_percentage": point.rate_percentage,
        "trial": trial,
        "seed": seed,
    }
    try:
        model = generate(point_scenario(config, point), seed)
        feasible = is_qos_feasible(model)
    except PowerControlError as exc:
        logger.warning("Trial %s at point %s: scenario failed: %s", trial, point.index, exc)
        failed = {"feasible": 0, "qos_relaxed": 0, "status": STATUS_FAILED, "iterations": 0, "wall_time_s": 0.0}
        return [
            {**base, "algorithm": name, **failed, "error": str(exc), **_metrics(None, None)} for name in config.algorithms
        ]

    relaxed = not feasible
    if relaxed and config.qos_fallback:
        logger.debug("Trial %s at point %s: QoS infeasible, relaxing rate targets", trial, point.index)
    target = model.relaxed() if relaxed else model

    rows = []
    for name in config.algorithms:
        row = {**base, "algorithm": name, "feasible": int(feasible), "qos_relaxed": int(relaxed), "error": ""}
        if relaxed and not config.qos_fallback:
            rows.append({**row, "status": STATUS_SKIPPED, "iterations": 0, "wall_time_s": 0.0, **_metrics(target, None)})
            continue
        started = time.perf_counter()
        try:
            outcome = _RUNNERS[name](target)
        except (PowerControlError, LinAlgError, ArithmeticError) as exc:
            logger.warning("Trial %s at point %s: %s failed: %s", trial, point.index, name, exc)
            outcome = AlgorithmOutcome(None, 0, str(exc))
        except Exception as exc:  # noqa: BLE001
            logger.exception("Trial %s at point %s: %s crashed", trial, point.index, name)
            outcome = AlgorithmOutcome(None, 0, f"{type(exc).__name__}: {exc}")
        elapsed = time.perf_counter() - started

        if outcome.power is None:
            status = STATUS_FAILED
        elif outcome.failure:
            status = STATUS_PARTIAL
        else:
            status = STATUS_OK
        if outcome.power is not None and name != "max-power" and not is_feasible_point(target, outcome.power).feasible:
            logger.warning("Trial %s at point %s: %s returned an infeasible allocation", trial, point.index, name)
        rows.append(
            {
                **row,
                "status": status,
                "iterations": outcome.iterations,
                "wall_time_s": elapsed,
                "error": outcome.failure or "",
                **_metrics(target, outcome.power),
            }
        )
    return rows


def _trial_task(task: Tuple[ExperimentConfig, SweepPoint, int]) -> List[Dict[str, object]]:
    config, point, trial = task
    return run_trial(config, point, trial_seed(config.master_seed, SCENARIO_STREAM, trial), trial)


def plan_text(config: ExperimentConfig) -> str:
    points = sweep_points(config)
    lines = [
        f"experiment: {config.name}",
        f"scenario: {describe(config.scenario)}",
        f"algorithms: {', '.join(config.algorithms)}",
        f"p_max_dbw: {', '.join(f'{value:g}' for value in config.p_max_dbw)}",
        f"rate_percentage: {', '.join(f'{value:g}' for value in config.rate_percentage)}",
        f"trials per point: {config.trials}",
        f"grid points: {len(points)} ({len(points) * (config.trials or 0)} trials)",
        f"master seed: {config.master_seed}",
        f"workers: {config.workers}",
        f"output: {config.output_dir}",
    ]
    return "\n".join(lines)


@dataclass
class SweepResult:
    config: ExperimentConfig
    trials: pd.DataFrame
    feasibility: pd.DataFrame
    gee: pd.DataFrame
    min_ee: pd.DataFrame
    iterations: pd.DataFrame
    summary: str
    paths: Dict[str, Path] = field(default_factory=dict)

    @property
    def failures(self) -> int:
        return int(self.trials["status"].isin([STATUS_FAILED, STATUS_PARTIAL]).sum())


def _std(series: pd.Series) -> float:
    values = series.dropna()
    return float(values.std(ddof=0)) if len(values) else np.nan


def aggregate(trials: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    per_trial = trials.drop_duplicates(["point", "trial"])
    feasibility = (
        per_trial.groupby(GRID_KEYS, sort=True)
        .agg(trials=("trial", "size"), feasible_count=("feasible", "sum"))
        .reset_index()
    )
    feasibility["feasible_fraction"] = feasibility["feasible_count"] / feasibility["trials"]

    keys = GRID_KEYS + ["algorithm"]
    grouped = trials.groupby(keys, sort=True)
    gee_frame = grouped.agg(
        trials_ok=("gee_bit_per_joule", "count"),
        gee_mean_bit_per_joule=("gee_bit_per_joule", "mean"),
        gee_std_bit_per_joule=("gee_bit_per_joule", _std),
        min_rate_mean_bit_per_s_hz=("min_rate_bit_per_s_hz", "mean"),
        qos_relaxed_fraction=("qos_relaxed", "mean"),
    ).reset_index()
    min_ee_frame = grouped.agg(
        trials_ok=("min_ee_bit_per_joule", "count"),
        min_ee_mean_bit_per_joule=("min_ee_bit_per_joule", "mean"),
        min_ee_std_bit_per_joule=("min_ee_bit_per_joule", _std),
    ).reset_index()
    solved = trials[trials["status"].isin([STATUS_OK, STATUS_PARTIAL])]
    iterations = (
        solved.groupby(keys, sort=True)
        .agg(runs=("iterations", "size"), iterations_mean=("iterations", "mean"), iterations_max=("iterations", "max"))
        .reset_index()
    )
    return {"feasibility": feasibility, "gee": gee_frame, "min_ee": min_ee_frame, "iterations": iterations}


def _format(value: float) -> str:
    return "nan" if value is None or not np.isfinite(value) else f"{value:.6g}"


def summary_markdown(config: ExperimentConfig, trials: pd.DataFrame, frames: Dict[str, pd.DataFrame]) -> str:
    lines = [f"# {config.name}", "", f"Scenario: `{describe(config.scenario)}`", ""]
    lines += ["| R [%] | P_max [dBW] | algorithm | GEE [bit/J] | min EE [bit/J] | min rate [bit/s/Hz] | iterations | wall time [s] |"]
    lines += ["|---|---|---|---|---|---|---|---|"]
    timing = trials.groupby(GRID_KEYS + ["algorithm"], sort=True)["wall_time_s"].mean()
    iterations = frames["iterations"].set_index(GRID_KEYS + ["algorithm"])["iterations_mean"]
    min_ee = frames["min_ee"].set_index(GRID_KEYS + ["algorithm"])["min_ee_mean_bit_per_joule"]
    for row in frames["gee"].itertuples(index=False):
        key = (row.rate_percentage, row.p_max_dbw, row.algorithm)
        lines.append(
            f"| {row.rate_percentage:g} | {row.p_max_dbw:g} | {row.algorithm} | {_format(row.gee_mean_bit_per_joule)} | "
            f"{_format(min_ee.get(key, np.nan))} | {_format(row.min_rate_mean_bit_per_s_hz)} | "
            f"{_format(iterations.get(key, np.nan))} | {_format(timing.get(key, np.nan))} |"
        )

    lines += ["", "## Feasibility", ""]
    for row in frames["feasibility"].itertuples(index=False):
        lines.append(f"- R={row.rate_percentage:g}%, P_max={row.p_max_dbw:g} dBW: {row.feasible_count}/{row.trials}")

    gee_frame = frames["gee"]
    if 0.0 in set(gee_frame["rate_percentage"]) and len(set(gee_frame["rate_percentage"])) > 1:
        lines += ["", "## Minimum rate against the unconstrained run", ""]
        base = gee_frame[gee_frame["rate_percentage"] == 0.0].set_index(["p_max_dbw", "algorithm"])["min_rate_mean_bit_per_s_hz"]
        for row in gee_frame[gee_frame["rate_percentage"] > 0].itertuples(index=False):
            reference = base.get((row.p_max_dbw, row.algorithm), np.nan)
            lines.append(
                f"- {row.algorithm}, R={row.rate_percentage:g}%, P_max={row.p_max_dbw:g} dBW: "
                f"{_format(reference)} -> {_format(row.min_rate_mean_bit_per_s_hz)} bit/s/Hz"
            )

    failures = trials[trials["status"].isin([STATUS_FAILED, STATUS_PARTIAL])]
    lines += ["", f"Solver failures: {len(failures)}", ""]
    return "\n".join(lines)


def _execute(config: ExperimentConfig, tasks: List[Tuple[ExperimentConfig, SweepPoint, int]]) -> List[Dict[str, object]]:
    rows: List[Dict[str, object]] = []
    if config.workers and config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for trial_rows in pool.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (4 * config.workers))):
                rows.extend(trial_rows)
    else:
        for task in tasks:
            rows.extend(_trial_task(task))
    return rows


def run_sweep(config: ExperimentConfig, settings: Optional[Settings] = None, write: bool = True) -> SweepResult:
    config = config.with_defaults(settings or get_settings())
    points = sweep_points(config)
    logger.info("Sweep %s: %s points x %s trials, %s", config.name, len(points), config.trials, ", ".join(config.algorithms))
    tasks = [(config, point, trial) for point in points for trial in range(config.trials)]
    trials = pd.DataFrame.from_records(_execute(config, tasks), columns=TRIAL_COLUMNS)
    trials = trials.sort_values(["point", "trial", "algorithm"], kind="mergesort").reset_index(drop=True)
    frames = aggregate(trials)
    result = SweepResult(
        config=config,
        trials=trials,
        summary=summary_markdown(config, trials, frames),
        **frames,
    )
    if write:
        result.paths = write_results(result)
    if result.failures:
        logger.warning("Sweep %s recorded %s solver failures", config.name, result.failures)
    return result


def write_results(result: SweepResult) -> Dict[str, Path]:
    out = Path(result.config.output_dir)
    paths = {
        "trials": write_frame(result.trials.drop(columns=["wall_time_s"]), out / "trials.csv"),
        "feasibility": write_frame(result.feasibility, out / "feasibility.csv"),
        "gee": write_frame(result.gee, out / "gee.csv"),
        "min_ee": write_frame(result.min_ee, out / "min_ee.csv"),
        "iterations": write_frame(result.iterations, out / "iterations.csv"),
    }
    summary = out / "summary.md"
    summary.write_text(result.summary, encoding="utf-8")
    paths["summary"] = summary
    return paths


def parse_experiment(values: Dict[str, str], source: str = "<mapping>") -> ExperimentConfig:
    entries = ConfigEntries(source, {key.lower(): str(value) for key, value in values.items()}, {})
    return experiment_from_entries(entries)
