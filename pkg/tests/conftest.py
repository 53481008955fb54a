import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from cellwait.cli import load_config
from cellwait.model import AccessScenario, NetworkConfig

PROJECT_ROOT = Path(__file__).resolve().parents[1]
PROJECTS = PROJECT_ROOT / "projects"

settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=30, deadline=None)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))


@pytest.fixture
def reference():
    return NetworkConfig()


@pytest.fixture
def noiseless(reference):
    return reference.noiseless()


@pytest.fixture
def scenario():
    return AccessScenario(r_th=10.0, w=10.0)


@pytest.fixture
def coverage_study():
    return load_config(PROJECTS / "coverage" / "config.json")


@pytest.fixture
def rate_study():
    return load_config(PROJECTS / "rate" / "config.json")


@pytest.fixture
def ee_study():
    return load_config(PROJECTS / "efficiency" / "config.json")
