"""Collect one PASS/FAIL line per acceptance criterion and print them at the end."""
import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = mark.args
        measured = [f"{k}={v}" for k, v in item.user_properties]
        _RESULTS[number] = (title, rep.passed, measured)


@pytest.fixture
def measure(request):
    """Record a measured quantity for the acceptance summary."""
    def record(name, value):
        if isinstance(value, float):
            value = f"{value:.4g}"
        request.node.user_properties.append((name, value))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, measured = _RESULTS[number]
        tr.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
                      + (f"  [{', '.join(measured)}]" if measured else ""))
