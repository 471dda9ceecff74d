import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from mgda import data, env  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (label, passed, detail); filled by the acceptance suite
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        label, ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k} {label}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def open5():
    return env.load_maze("open5", env.DISCRETE)


@pytest.fixture(scope="session")
def umaze():
    return env.load_maze("umaze")


@pytest.fixture(scope="session")
def small_umaze_ds(umaze):
    return data.collect(umaze, data.leg_controllers(umaze, reverse_prob=0.5), 40, 60, seed=3)


@pytest.fixture(scope="session")
def small_discrete_ds():
    spec = env.load_maze("umaze", env.DISCRETE)
    return data.collect(spec, data.leg_controllers(spec, reverse_prob=0.5), 40, 12, seed=5, noise=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
