"""Shared pytest plumbing: one-line verdicts for the acceptance suite."""
import re

import pytest

_verdicts: dict[int, tuple[str, str]] = {}


def _label(item) -> str:
    doc = (item.function.__doc__ or "").strip()
    return doc.splitlines()[0] if doc else item.name


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    match = re.match(r"test_criterion_(\d+)", item.name)
    if not match:
        return
    number = int(match.group(1))
    if report.when == "call":
        _verdicts[number] = ("PASS" if report.passed else "FAIL", _label(item))
    elif report.when == "setup" and not report.passed:
        _verdicts[number] = ("SKIP" if report.skipped else "FAIL", _label(item))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        status, label = _verdicts[number]
        terminalreporter.write_line(f"CRITERION {number:02d} {status}: {label}")
