import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} [{number:2d}] {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
