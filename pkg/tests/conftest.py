import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from meal.data import PatchGrid, SceneSpec, generate_synthetic

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_scene():
    return SceneSpec(height=16, width=16, n_classes=3, shape_density=2.0)


@pytest.fixture(scope="session")
def small_samples(small_scene):
    return generate_synthetic(11, 6, small_scene)


@pytest.fixture
def grid():
    return PatchGrid(4, 4)


def simplex(rng, shape, n_classes):
    """Random probability vectors along the last axis."""
    return rng.dirichlet(np.ones(n_classes), size=shape)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
