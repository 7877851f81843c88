"""Collects acceptance-criterion outcomes and prints one line per criterion."""
from __future__ import annotations

_OUTCOMES: dict[str, dict] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    label = props.get("criterion")
    if label is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        _OUTCOMES[label] = {"passed": report.passed, "seconds": report.duration,
                            "detail": props.get("detail", "")}


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label in sorted(_OUTCOMES, key=lambda s: int(s.split()[0][2:])):
        o = _OUTCOMES[label]
        tr.write_line(f"{'PASS' if o['passed'] else 'FAIL'}  {label}  ({o['seconds']:.1f} s)")
        for line in o["detail"].splitlines():
            tr.write_line(f"      {line}")
