import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_reach():
    from reach_surrogate.hydro import SyntheticSpec, gen_synthetic_reach

    return gen_synthetic_reach(SyntheticSpec(seed=3, n_xs=8, length_m=8000.0, duration_hours=200))


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    def record(criterion: int, passed: bool, detail: str = "") -> bool:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}" + (f"  {detail}" if detail else "")
        ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
