import os

import pytest
from hypothesis import HealthCheck, settings

from acmtdc.netmodel import load_bundled_case
from acmtdc.opf import OpfProblem, solve_opf

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def case():
    return load_bundled_case()


@pytest.fixture(scope="session")
def snapshot_state(case):
    """OPF operating point with the Scenario 2/3 wind (150 / 120 MW)."""
    sol = solve_opf(OpfProblem(case, {"OWF1": 150.0, "OWF2": 120.0}))
    assert sol.status == "Optimal"
    return sol.steps[0]


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
