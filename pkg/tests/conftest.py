import os

import pytest
from hypothesis import HealthCheck, settings

from cachelab import Hierarchy, load_profile

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

PROFILES = ("i7-4790", "i3-5010U", "i7-6700K", "i5-7600K", "i7-8650U")

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def i5():
    return load_profile("i5-7600K")


@pytest.fixture(scope="session")
def i7_4790():
    return load_profile("i7-4790")


@pytest.fixture
def h5(i5):
    return Hierarchy(i5, seed=1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
