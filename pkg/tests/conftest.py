"""Shared fixtures: seeded generators and small random problems."""

import numpy as np
import pytest

from mirrorcert.instances import random_eot_problem, random_latent_problem, random_simplex_point


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture
def simplex_point(rng):
    """Factory for Dirichlet points on the simplex."""

    def make(n: int, concentration: float = 1.0) -> np.ndarray:
        return random_simplex_point(rng, n, concentration)

    return make


@pytest.fixture
def eot_problem(rng):
    return random_eot_problem(rng, 6, 5, epsilon=1.0)


@pytest.fixture
def latent_problem(rng):
    return random_latent_problem(rng, 5, 7)


@pytest.fixture
def isolated(tmp_path, monkeypatch):
    """Empty home and working directory, no MIRRORCERT_* variables."""
    home = tmp_path / "home"
    work = tmp_path / "work"
    home.mkdir()
    work.mkdir()
    monkeypatch.setenv("HOME", str(home))
    monkeypatch.chdir(work)
    for name in ("MIRRORCERT_LOG_LEVEL", "MIRRORCERT_OUT_DIR", "MIRRORCERT_SEED"):
        monkeypatch.delenv(name, raising=False)
    return home, work
