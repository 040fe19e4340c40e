import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def detail(request):
    """Free-text notes shown next to an acceptance criterion's verdict."""
    notes: list[str] = []
    request.node.acceptance_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "notes": []})
    entry["passed"] = entry["passed"] and report.passed
    entry["notes"] += getattr(item, "acceptance_notes", [])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["passed"] else "FAIL"
        line = f"criterion {number:>2} {verdict}: {entry['title']}"
        if entry["notes"]:
            line += " [" + "; ".join(entry["notes"]) + "]"
        terminalreporter.write_line(line)
