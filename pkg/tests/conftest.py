import pytest


def pytest_configure(config):
    config._criteria = []


@pytest.fixture
def report(request):
    """Record one pass/fail line per acceptance criterion, then assert it."""
    lines = request.config._criteria

    def _report(label, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        assert ok, f"{label}: {detail}"

    return _report


def pytest_terminal_summary(terminalreporter, config):
    if config._criteria:
        terminalreporter.section("acceptance criteria")
        for line in config._criteria:
            terminalreporter.write_line(line)
