import numpy as np
import pytest
from hypothesis import settings

from drivepred.sim import DriverProfile, TrackSpec, generate_track, simulate_session

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_track():
    return generate_track(TrackSpec(n_turns=6), seed=3)


@pytest.fixture(scope="session")
def short_session(small_track):
    return simulate_session(small_track, DriverProfile(seed=5), duration=60.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> PASS/FAIL line, filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
