"""Configuration handling for the cpdtv project."""

from __future__ import annotations

import os
from enum import Enum
from functools import lru_cache
from typing import Any

from pydantic import BaseModel, ConfigDict, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class TvVariant(str, Enum):
    """How the TV term enters the factor gradients."""

    PAPER = "paper"
    SMOOTHED_L1 = "smoothed_l1"


class StepPolicy(str, Enum):
    FIXED = "fixed"
    BACKTRACKING = "backtracking"


class InitStrategy(str, Enum):
    SEEDED_RANDOM = "seeded_random"
    SVD_LEADING = "svd_leading"


class SolverConfig(BaseModel):
    """Parameters of one CPD-TV solve.

    ``epsilon=None`` derives the TV smoothing from the data as 1e-8 times the
    mean modulus of the input tensor. ``step_size`` is the fixed step for
    ``StepPolicy.FIXED`` and the initial step for backtracking.
    """

    model_config = ConfigDict(frozen=True)

    rank: int = Field(default=13, ge=1)
    lambda_e: float = Field(default=0.0, ge=0.0)
    lambda_t: float = Field(default=0.0, ge=0.0)
    tv_variant: TvVariant = TvVariant.SMOOTHED_L1
    epsilon: float | None = Field(default=None, gt=0.0)
    step_policy: StepPolicy = StepPolicy.BACKTRACKING
    step_size: float = Field(default=1.0, gt=0.0)
    shrink: float = Field(default=0.5, gt=0.0, lt=1.0)
    armijo_c: float = Field(default=1e-4, gt=0.0, lt=1.0)
    max_backtracks: int = Field(default=30, ge=0)
    max_outer_iters: int = Field(default=500, ge=1)
    rel_tol: float = Field(default=1e-6, gt=0.0)
    n_restarts: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, le=2**64 - 1)
    init: InitStrategy = InitStrategy.SEEDED_RANDOM
    threads: int = Field(default=1, ge=1, description="Worker threads for independent restarts.")


class Settings(BaseSettings):
    """Application configuration sourced from environment variables or .env file."""

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    log_level: str = Field(default="WARNING", validation_alias="CPDTV_LOG_LEVEL")
    threads: int | None = Field(
        default=None,
        validation_alias="CPDTV_THREADS",
        ge=1,
        description="Worker threads for restarts, sweep rows and FFTs; all cores when unset.",
    )

    # Solver defaults used when a CLI flag is omitted
    rank: int = Field(default=13, validation_alias="CPDTV_RANK", ge=1, le=512)
    lambda_e: float = Field(default=0.05, validation_alias="CPDTV_LAMBDA_E", ge=0.0)
    lambda_t: float = Field(default=0.05, validation_alias="CPDTV_LAMBDA_T", ge=0.0)
    tv_variant: TvVariant = Field(
        default=TvVariant.SMOOTHED_L1, validation_alias="CPDTV_TV_VARIANT"
    )
    max_outer_iters: int = Field(
        default=500, validation_alias="CPDTV_MAX_OUTER_ITERS", ge=1, le=100_000
    )
    rel_tol: float = Field(default=1e-6, validation_alias="CPDTV_REL_TOL", gt=0.0, le=1.0)
    n_restarts: int = Field(default=1, validation_alias="CPDTV_RESTARTS", ge=1, le=1000)
    seed: int = Field(default=0, validation_alias="CPDTV_SEED", ge=0, le=2**64 - 1)

    def worker_count(self) -> int:
        if self.threads is not None:
            return self.threads
        return os.cpu_count() or 1

    def solver_config(self, **overrides: Any) -> SolverConfig:
        values: dict[str, Any] = {
            "rank": self.rank,
            "lambda_e": self.lambda_e,
            "lambda_t": self.lambda_t,
            "tv_variant": self.tv_variant,
            "max_outer_iters": self.max_outer_iters,
            "rel_tol": self.rel_tol,
            "n_restarts": self.n_restarts,
            "seed": self.seed,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return SolverConfig(**values)


@lru_cache
def get_settings() -> Settings:
    return Settings()


__all__ = [
    "InitStrategy",
    "Settings",
    "SolverConfig",
    "StepPolicy",
    "TvVariant",
    "get_settings",
]
