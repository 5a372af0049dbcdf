import os

import pytest

from cuspstats import tuning


@pytest.fixture(scope="session")
def cusp_profile():
    return tuning.tuned_profile("cusp")


@pytest.fixture(scope="session")
def cusp_E0():
    return tuning.tuned_E0("cusp")


def pytest_terminal_summary(terminalreporter):
    lines = getattr(terminalreporter.config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_sink(request):
    request.config._acceptance_lines = []
    return request.config._acceptance_lines


@pytest.fixture(scope="session")
def results_dir():
    here = os.path.dirname(os.path.abspath(__file__))
    return os.environ.get("CUSPSTATS_RESULTS", os.path.join(os.path.dirname(here), "results"))
