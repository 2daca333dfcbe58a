import pytest

# filled by the acceptance test; echoed after the run so the criterion
# line is visible even with output capture on
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("extraction acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_log():
    def log(name, ok):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}")
    return log
