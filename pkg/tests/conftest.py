import pytest


def pytest_configure(config):
    config._criterion_lines = []


@pytest.fixture
def report(request):
    """Record one ``CRITERION n: PASS|FAIL`` line for the terminal summary."""
    lines = request.config._criterion_lines

    def _report(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        lines.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
