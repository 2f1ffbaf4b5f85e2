"""Command-line entry point: ``python -m app.main <command> --config <file>``.

Exit codes: 0 on success, 1 when a solver failed or an invariant check did
not hold, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from app.config import Settings, get_settings
from app.errors import ConfigError, PowerControlError
from app.model import NetworkModel, gee, min_spectral_rate, min_weighted_ee
from app.services.centralized import solve, write_run_csv
from app.services.experiments import (
    SCENARIO_STREAM,
    ExperimentConfig,
    load_experiment_config,
    plan_text,
    point_scenario,
    run_sweep,
    sweep_points,
)
from app.services.feasibility import brd_sufficient_condition, check_feasible_n1, check_feasible_nblocks
from app.services.game import JACOBI, SEQUENTIAL, run_brd, write_brd_csv
from app.services.scenarios import generate
from app.services.surrogate import ObjectiveKind
from app.services.validation import run_suite
from app.utils.export import load_model_csv
from app.utils.seeding import trial_seed

logger = logging.getLogger("eepc")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
VALIDATION_STREAM = 1


def _configure_logging(settings: Settings, override: Optional[str]) -> None:
    level = (override or settings.log_level).upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load_config(args: argparse.Namespace, settings: Settings) -> ExperimentConfig:
    config = load_experiment_config(args.config).with_defaults(settings)
    update = {}
    if args.seed is not None:
        update["master_seed"] = args.seed
    if args.out is not None:
        update["output_dir"] = Path(args.out)
    return config.copy(update=update) if update else config


def _instance(args: argparse.Namespace, config: ExperimentConfig) -> NetworkModel:
    if getattr(args, "model", None):
        return load_model_csv(args.model)
    points = sweep_points(config)
    if not 0 <= args.point < len(points):
        raise ConfigError(str(args.config), [(None, f"--point must lie in [0, {len(points) - 1}]")])
    point = points[args.point]
    logger.info("Instance: point %s (P_max=%g dBW, R=%g%%), trial %s", point.index, point.p_max_dbw, point.rate_percentage, args.trial)
    return generate(point_scenario(config, point), trial_seed(config.master_seed, SCENARIO_STREAM, args.trial))


def _cmd_feas(args: argparse.Namespace, settings: Settings) -> int:
    config = _load_config(args, settings)
    model = _instance(args, config)
    if model.num_blocks == 1:
        report = check_feasible_n1(model, settings.feasibility_tol)
        print(f"feasible: {report.feasible}")
        print(f"spectral radius: {report.rho:.12g}")
        if report.p_min is not None:
            print(f"minimum powers [W]: {np.array2string(report.p_min, precision=6)}")
        if report.reason:
            print(f"reason: {report.reason}")
        print(f"best-response sufficient condition: {brd_sufficient_condition(model).tolist()}")
    else:
        report = check_feasible_nblocks(model)
        print(f"feasible (sufficient test): {report.feasible}")
        print(f"max-min slack: {report.slack:.6g}")
    return EXIT_OK


def _cmd_solve(args: argparse.Namespace, settings: Settings) -> int:
    config = _load_config(args, settings)
    model = _instance(args, config)
    kind = ObjectiveKind(args.objective)
    exact_rate = None if args.rate_constraint == "auto" else args.rate_constraint == "exact"
    run = solve(model, kind, exact_rate=exact_rate)
    path = write_run_csv(run, Path(config.output_dir) / f"solve_{kind.value}.csv")
    print(f"objective ({kind.value}): {run.objective:.12g}")
    print(f"outer iterations: {run.iterations}, converged: {run.converged}")
    print(f"GEE [bit/J]: {gee(model, run.power):.12g}")
    print(f"min weighted EE [bit/J]: {min_weighted_ee(model, run.power):.12g}")
    print(f"min rate [bit/s/Hz]: {min_spectral_rate(model, run.power):.12g}")
    print(f"run record: {path}")
    if run.failure:
        print(f"solver failure: {run.failure}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _cmd_game(args: argparse.Namespace, settings: Settings) -> int:
    config = _load_config(args, settings)
    model = _instance(args, config)
    result = run_brd(model, schedule=args.schedule, tol=args.tol, cap=args.cap)
    path = write_brd_csv(model, result, Path(config.output_dir) / "brd_trajectory.csv")
    print(f"converged: {result.converged} after {result.iterations} rounds ({result.schedule})")
    print(f"GEE [bit/J]: {gee(model, result.power):.12g}")
    print(f"min weighted EE [bit/J]: {min_weighted_ee(model, result.power):.12g}")
    print(f"trajectory: {path}")
    return EXIT_OK if result.converged else EXIT_FAILURE


def _cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    config = _load_config(args, settings)
    update = {}
    if args.trials is not None:
        update["trials"] = args.trials
    if args.workers is not None:
        update["workers"] = args.workers
    if update:
        config = config.copy(update=update)
    if args.dry_run:
        print(plan_text(config))
        return EXIT_OK
    result = run_sweep(config, settings)
    print(result.summary)
    for name, path in result.paths.items():
        logger.info("Wrote %s to %s", name, path)
    return EXIT_FAILURE if result.failures else EXIT_OK


def _cmd_validate(args: argparse.Namespace, settings: Settings) -> int:
    paths: Sequence[Path] = [Path(args.config)] if args.config else sorted(CONFIG_DIR.glob("*.env"))
    if not paths:
        raise ConfigError(str(CONFIG_DIR), [(None, "no config files found")])
    passed = True
    for path in paths:
        args.config = path
        config = _load_config(args, settings)
        point = sweep_points(config)[-1]
        for instance in range(args.instances):
            seed = trial_seed(config.master_seed, VALIDATION_STREAM, instance)
            try:
                model = generate(point_scenario(config, point), seed)
            except PowerControlError as exc:
                print(f"[FAIL] {path.name}#{instance} scenario: {exc}")
                passed = False
                continue
            report = run_suite(model, f"{path.name}#{instance}", seed=seed, slow=not args.fast)
            for line in report.lines():
                print(line)
            passed = passed and report.passed
    return EXIT_OK if passed else EXIT_FAILURE


def _build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eepc", description="Energy-efficient power control experiments")
    parser.add_argument("--log-level", help="Override EEPC_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_common(sub: argparse.ArgumentParser, config_required: bool = True) -> None:
        sub.add_argument("--config", required=config_required, help="key=value experiment config")
        sub.add_argument("--seed", type=int, help="Override the master seed")
        sub.add_argument("--out", help="Override the output directory")

    def add_instance(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--point", type=int, default=0, help="Grid point index (rate-major)")
        sub.add_argument("--trial", type=int, default=0, help="Trial index selecting the random scenario")
        sub.add_argument("--model", help="Load a model dump instead of generating one")

    feas = commands.add_parser("feas", help="Feasibility of the rate targets")
    add_common(feas)
    add_instance(feas)
    feas.set_defaults(handler=_cmd_feas)

    solve_cmd = commands.add_parser("solve", help="Centralized allocation")
    add_common(solve_cmd)
    add_instance(solve_cmd)
    solve_cmd.add_argument(
        "--objective",
        default=ObjectiveKind.GEE.value,
        choices=[kind.value for kind in ObjectiveKind if kind is not ObjectiveKind.FEASIBILITY],
    )
    solve_cmd.add_argument("--rate-constraint", default="auto", choices=["auto", "exact", "surrogate"])
    solve_cmd.set_defaults(handler=_cmd_solve)

    game = commands.add_parser("game", help="Best-response dynamics")
    add_common(game)
    add_instance(game)
    game.add_argument("--schedule", default=SEQUENTIAL, choices=[SEQUENTIAL, JACOBI])
    game.add_argument("--tol", type=float, default=1e-10)
    game.add_argument("--cap", type=int, default=1000)
    game.set_defaults(handler=_cmd_game)

    sweep = commands.add_parser("sweep", help="Monte-Carlo sweep")
    add_common(sweep)
    sweep.add_argument("--trials", type=int)
    sweep.add_argument("--workers", type=int)
    sweep.add_argument("--dry-run", action="store_true", help="Print the planned grid and exit")
    sweep.set_defaults(handler=_cmd_sweep)

    validate = commands.add_parser("validate", help="Invariant checks on every shipped config")
    add_common(validate, config_required=False)
    validate.add_argument("--instances", type=int, default=2)
    validate.add_argument("--fast", action="store_true", help="Skip the centralized monotonicity run")
    validate.set_defaults(handler=_cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_arg_parser().parse_args(argv)
    settings = get_settings()
    _configure_logging(settings, args.log_level)
    try:
        return args.handler(args, settings)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except PowerControlError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
