"""Collects outcomes of tests marked ``acceptance`` and prints one PASS/FAIL line each."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    if hasattr(item, "callspec"):
        label += f" [{item.callspec.id}]"
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else "FAIL"
        detail = ""
        if report.failed and call.excinfo is not None:
            detail = str(call.excinfo.value).strip().splitlines()[0][:160] if str(
                call.excinfo.value).strip() else call.excinfo.typename
        _RESULTS[item.nodeid] = (label, status, call.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, duration, detail in _RESULTS.values():
        line = f"{status}  {label}  ({duration:.1f}s)"
        if detail:
            line += f"  -- {detail}"
        terminalreporter.write_line(line)
