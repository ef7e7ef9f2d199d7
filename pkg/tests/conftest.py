"""Shared fixtures and the acceptance summary printed after the run."""

from collections import defaultdict

import pytest

from likratio import CosineBump, PeriodicGrid

_CRITERIA = defaultdict(list)
_TITLES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    _TITLES[number] = title
    if report.when == "call" or (report.when == "setup" and not report.passed):
        details = [v for k, v in item.user_properties if k == "detail"]
        _CRITERIA[number].append((item.name, report.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        runs = _CRITERIA[number]
        ok = all(outcome == "passed" for _, outcome, _ in runs)
        details = "; ".join(d for _, _, ds in runs for d in ds)
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {_TITLES[number]}"
        if details:
            line += f"  [{details}]"
        terminalreporter.write_line(line)


@pytest.fixture
def detail(record_property):
    """Attach a measured value to the acceptance summary line."""
    def add(text):
        record_property("detail", text)
    return add


@pytest.fixture
def standard_grid():
    return PeriodicGrid(10.0, 100)


@pytest.fixture
def bump():
    return CosineBump()
