import pytest

_lines_key = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_lines_key] = []


@pytest.fixture
def report_criterion(request):
    """Record one PASS/FAIL line for the terminal summary, then fail the test if the criterion failed."""
    def report(number, name, passed, detail=""):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'} {name}: {detail}"
        request.config.stash[_lines_key].append(line)
        assert passed, line
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_lines_key, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
