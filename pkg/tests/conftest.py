"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

from __future__ import annotations

from collections import OrderedDict

import pytest

_OUTCOMES: "OrderedDict[str, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    entry = _OUTCOMES.setdefault(str(num), {"title": title, "tests": OrderedDict()})
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["tests"][item.name] = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_OUTCOMES, key=int):
        entry = _OUTCOMES[num]
        states = list(entry["tests"].values())
        verdict = "PASS" if states and all(s == "PASS" for s in states) else "FAIL"
        failed = [n for n, s in entry["tests"].items() if s != "PASS"]
        detail = f" (failing: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {num}: {verdict}  {entry['title']}{detail}")
