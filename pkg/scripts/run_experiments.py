"""Run the sweep of every shipped experiment config in turn."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from app.config import get_settings
from app.errors import ConfigError
from app.services.experiments import load_experiment_config, run_sweep

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def run_all(config_dir: Path, out_root: Path, trials: int | None = None) -> int:
    """Sweep each ``*.env`` config into ``out_root/<config name>``; returns the number of failed trials."""
    settings = get_settings()
    failures = 0
    for path in sorted(config_dir.glob("*.env")):
        config = load_experiment_config(path).with_defaults(settings)
        update = {"output_dir": out_root / config.name}
        if trials is not None:
            update["trials"] = trials
        result = run_sweep(config.copy(update=update), settings)
        logger.info("%s: %s solver failures, results in %s", path.name, result.failures, update["output_dir"])
        failures += result.failures
    return failures


def _build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Run every experiment config")
    parser.add_argument("--configs", default=str(CONFIG_DIR), help="Directory with *.env experiment configs")
    parser.add_argument("--out", default="results", help="Root output directory")
    parser.add_argument("--trials", type=int, help="Override the trials per grid point")
    return parser


if __name__ == "__main__":
    args = _build_arg_parser().parse_args()
    try:
        failed = run_all(Path(args.configs), Path(args.out), args.trials)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        sys.exit(2)
    sys.exit(1 if failed else 0)
