import pytest

# one line per acceptance criterion, filled by tests/test_acceptance.py
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERIA:
        terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record ``PASS``/``FAIL`` for the criterion named by the test's marker."""
    mark = request.node.get_closest_marker("criterion")
    label = f"criterion {mark.args[0]}: {mark.args[1]}"
    details = []
    yield details
    rep = getattr(request.node, "rep_call", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    suffix = f" ({'; '.join(details)})" if details else ""
    line = f"[{status}] {label}{suffix}"
    CRITERIA.append(line)
    print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
