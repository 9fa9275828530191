import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ORACLES = Path(__file__).parent / "oracles" / "frozen.json"


@pytest.fixture(scope="session")
def oracle():
    return json.loads(ORACLES.read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, p, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    w = np.exp(rng.uniform(0, np.log(cond), p))
    return (q * w) @ q.T


_CRITERIA = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one (number, passed, detail) line per acceptance criterion."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, passed, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
