"""Acceptance reporting: one PASS/FAIL line per criterion after the run.

Tests tagged ``@pytest.mark.criterion(n, "title")`` are grouped by ``n``; a
criterion passes only when every test tagged with it passes.  Measured values
recorded through ``record_property`` are echoed next to each test.
"""

from collections import OrderedDict

import pytest

_CRITERIA = OrderedDict()
_NODES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(session, config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is None:
            continue
        n, title = mark.args
        _CRITERIA.setdefault(n, {"title": title, "tests": OrderedDict()})
        _CRITERIA[n]["tests"][item.nodeid] = None
        _NODES[item.nodeid] = n


def pytest_runtest_logreport(report):
    n = _NODES.get(report.nodeid)
    if n is None:
        return
    tests = _CRITERIA[n]["tests"]
    failed = report.outcome == "failed" or (report.when == "setup" and report.outcome == "skipped")
    if report.when == "call" or failed:
        prev = tests[report.nodeid]
        status = "FAIL" if failed or (prev and prev[0] == "FAIL") else "PASS"
        tests[report.nodeid] = (status, dict(report.user_properties))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        crit = _CRITERIA[n]
        results = list(crit["tests"].items())
        ran = [r for _, r in results if r is not None]
        if not ran:
            continue
        if any(r[0] == "FAIL" for r in ran):
            status = "FAIL"
        else:
            status = "PASS" if len(ran) == len(results) else "INCOMPLETE"
        tr.write_line(f"criterion {n:>2}: {status}  {crit['title']}")
        for nodeid, r in results:
            name = nodeid.split("::")[-1]
            if r is None:
                tr.write_line(f"    [not run] {name}")
                continue
            detail = ", ".join(f"{k}={_fmt(v)}" for k, v in r[1].items())
            tr.write_line(f"    [{r[0]}] {name}" + (f"  ({detail})" if detail else ""))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
