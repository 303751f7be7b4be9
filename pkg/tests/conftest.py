from datetime import date

import pytest

from cdxhedge.calendar import build_episode_grid
from cdxhedge.env import make_config


@pytest.fixture(scope="session")
def grid():
    return build_episode_grid(date(2021, 3, 22), 40, 17)


@pytest.fixture(scope="session")
def short_grid():
    return build_episode_grid(date(2021, 3, 22), 5, 17)


@pytest.fixture(scope="session")
def config(grid):
    return make_config(grid, ba_bp=0.0)


@pytest.fixture(scope="session")
def short_config(short_grid):
    return make_config(short_grid, ba_bp=1.0)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, with the measured values."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            if rep.when != "call" and rep.passed:
                continue
            name = nodeid.split("::")[-1]
            number = int(name.split("_")[2])
            verdict = "PASS" if rep.passed else "FAIL"
            detail = "; ".join(f"{k}: {v}" for k, v in rep.user_properties)
            lines[number] = f"criterion {number:2d} {verdict}  {name}" + (f"  [{detail}]" if detail else "")
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
