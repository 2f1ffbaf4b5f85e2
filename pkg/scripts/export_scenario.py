"""Dump one generated scenario to CSV so it can be reloaded with ``--model``."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from app.config import get_settings
from app.services.experiments import SCENARIO_STREAM, load_experiment_config, point_scenario, sweep_points
from app.services.scenarios import generate
from app.utils.export import dump_model_csv
from app.utils.seeding import trial_seed

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)


def export_scenario(config_path: Path, out: Path, point_index: int = 0, trial: int = 0) -> Path:
    config = load_experiment_config(config_path).with_defaults(get_settings())
    point = sweep_points(config)[point_index]
    model = generate(point_scenario(config, point), trial_seed(config.master_seed, SCENARIO_STREAM, trial))
    path = dump_model_csv(model, out)
    logger.info("Model with K=%s, N=%s written to %s", model.num_users, model.num_blocks, path)
    return path


def _build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Export a generated scenario as a model CSV")
    parser.add_argument("config", help="Experiment config file")
    parser.add_argument("out", help="Destination CSV")
    parser.add_argument("--point", type=int, default=0)
    parser.add_argument("--trial", type=int, default=0)
    return parser


if __name__ == "__main__":
    args = _build_arg_parser().parse_args()
    export_scenario(Path(args.config), Path(args.out), args.point, args.trial)
