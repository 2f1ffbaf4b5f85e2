from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path

from pydantic import BaseSettings, Field, validator


class Settings(BaseSettings):
    log_level: str = Field("INFO", env="EEPC_LOG_LEVEL")
    output_dir: Path = Field(Path("results"), env="EEPC_OUTPUT_DIR")
    master_seed: int = Field(2016, env="EEPC_MASTER_SEED")
    trials: int = Field(200, env="EEPC_TRIALS")
    workers: int = Field(1, env="EEPC_WORKERS")
    feasibility_tol: float = Field(1e-9, env="EEPC_FEASIBILITY_TOL")

    class Config:
        env_file = ".env"
        case_sensitive = False

    @validator("log_level", pre=True)
    def _normalise_level(cls, value: object) -> str:
        level = str(value or "INFO").strip().upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"Unknown log level: {value}")
        return level

    @validator("trials", "workers")
    def _positive_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @validator("master_seed")
    def _non_negative_seed(cls, value: int) -> int:
        if value < 0:
            raise ValueError("seed must be non-negative")
        return value

    @validator("feasibility_tol")
    def _tolerance_range(cls, value: float) -> float:
        if not 0 <= value < 1:
            raise ValueError("tolerance must lie in [0, 1)")
        return value

    @property
    def parallel(self) -> bool:
        return self.workers > 1


@lru_cache()
def get_settings() -> Settings:
    return Settings()
