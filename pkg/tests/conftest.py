import numpy as np
import pytest
import torch

torch.set_num_threads(1)

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False, "notes": []})


def pytest_runtest_logreport(report):
    if report.when not in ("setup", "call") or report.passed and report.when == "setup":
        return
    for key, value in report.user_properties:
        if key == "criterion":
            entry = _CRITERIA[value]
            entry["ran"] = entry["ran"] or report.when == "call"
            if report.failed or report.skipped:
                entry["ok"] = False
        elif key == "criterion_note":
            number, note = value
            if note not in _CRITERIA[number]["notes"]:
                _CRITERIA[number]["notes"].append(note)


@pytest.fixture(autouse=True)
def _tag_criterion(request):
    mark = request.node.get_closest_marker("criterion")
    if mark is not None:
        request.node.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        tr.write_line(f"criterion {number:2d}: {status}  {entry['title']}")
        for note in entry["notes"]:
            tr.write_line(f"    {note}")
