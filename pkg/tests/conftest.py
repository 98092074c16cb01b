import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adagan import Rng

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        status, reason, info = RESULTS[number]
        details = ", ".join(f"{k}={v}" for k, v in info.items())
        terminalreporter.write_line(f"criterion {number}: {status} ({details}){' ' + reason if reason else ''}")
