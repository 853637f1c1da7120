import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cmrac import config  # noqa: E402


@pytest.fixture(scope="session")
def sec5():
    return config.load_preset("paper_sec5")


@pytest.fixture(scope="session")
def warm_kernel(sec5):
    """Compile (or load from cache) the numba loop once per session."""
    from cmrac.sim import run_scenario

    run_scenario(sec5.sim_config("blf", t_end=0.01), engine="numba")
    return True


_CRITERIA = []


def pytest_runtest_logreport(report):
    label = dict(report.user_properties).get("criterion")
    if label is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA.append((label, "PASS" if report.outcome == "passed" else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, verdict in sorted(_CRITERIA, key=lambda c: int(c[0].split(".")[0])):
        terminalreporter.write_line(f"{verdict}  {label}")
