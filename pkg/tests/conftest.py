"""Shared model fixtures."""

from __future__ import annotations

import pytest

from rwrelab.acceptance import BALANCED, DETERMINISTIC, LAZY_PERIOD2, PERIOD2, SRW1, SRW2
from rwrelab.env import EnvironmentSpec, spec_from_dict

DIRICHLET = {"dim": 1, "range": 1, "model": "iid-dirichlet", "model_params": {"concentration": [3.0, 1.0]}, "seed": 7}
DIRICHLET_2D = {"dim": 2, "range": 1, "model": "iid-dirichlet", "model_params": {"concentration": 1.0}, "seed": 11}


@pytest.fixture
def period2() -> EnvironmentSpec:
    return spec_from_dict(PERIOD2)


@pytest.fixture
def lazy_period2() -> EnvironmentSpec:
    return spec_from_dict(LAZY_PERIOD2)


@pytest.fixture
def deterministic() -> EnvironmentSpec:
    return spec_from_dict(DETERMINISTIC)


@pytest.fixture
def srw1() -> EnvironmentSpec:
    return spec_from_dict(SRW1)


@pytest.fixture
def srw2() -> EnvironmentSpec:
    return spec_from_dict(SRW2)


@pytest.fixture
def balanced() -> EnvironmentSpec:
    return spec_from_dict(BALANCED)


@pytest.fixture
def dirichlet() -> EnvironmentSpec:
    return spec_from_dict(DIRICHLET)


@pytest.fixture
def dirichlet2d() -> EnvironmentSpec:
    return spec_from_dict(DIRICHLET_2D)
