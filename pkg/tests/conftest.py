import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    details = ", ".join(f"{k}={v}" for k, v in item.user_properties)
    _RESULTS[number] = (title, report.passed, report.duration, details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, secs, details = _RESULTS[number]
        line = f"[{'PASS' if passed else 'FAIL'}] {number}. {title} ({secs:.2f}s)"
        if details:
            line += f" {details}"
        terminalreporter.write_line(line)
