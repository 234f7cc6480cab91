"""Pytest fixtures for the cpdtv project."""

from __future__ import annotations

from typing import Iterator

import numpy as np
import pytest

from cpdtv.config import get_settings
from cpdtv.tensor import FactorSet, random_factors


@pytest.fixture(autouse=True)
def configure_environment(tmp_path, monkeypatch) -> Iterator[None]:
    env_vars = {
        "CPDTV_LOG_LEVEL": "WARNING",
        "CPDTV_THREADS": "1",
        "CPDTV_MAX_OUTER_ITERS": "200",
        "CPDTV_SEED": "0",
    }
    for key, value in env_vars.items():
        monkeypatch.setenv(key, value)
    # keep a developer's .env out of the tests
    monkeypatch.chdir(tmp_path)

    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def small_factors(rng) -> FactorSet:
    return random_factors((4, 3, 2), 2, rng)
