"""Shared pytest configuration.

Acceptance tests carry an ``acceptance(num, label)`` marker; the terminal
summary ends with one PASS/FAIL line per criterion so the gate can be read
at a glance.
"""

import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, label): acceptance criterion number and short label",
    )


def pytest_collection_modifyitems(config, items):
    labels = {}
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            num = marker.kwargs.get("num", marker.args[0] if marker.args else 0)
            label = marker.kwargs.get("label", "")
            labels[item.nodeid] = (int(num), str(label))
    config._acceptance_labels = labels


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    labels = getattr(config, "_acceptance_labels", {})
    if not labels:
        return
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", None)
            if nodeid in labels and getattr(report, "when", "call") == "call":
                outcomes[nodeid] = status
    for report in terminalreporter.stats.get("skipped", []):
        nodeid = getattr(report, "nodeid", None)
        if nodeid in labels:
            outcomes.setdefault(nodeid, "skipped")
    if not outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    rows = sorted((labels[nid], status) for nid, status in outcomes.items())
    for (num, label), status in rows:
        word = {"passed": "PASS", "skipped": "SKIP"}.get(status, "FAIL")
        terminalreporter.write_line(f"criterion {num}: {word}  {label}")
