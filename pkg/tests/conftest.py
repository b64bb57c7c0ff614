import pytest

# Lines registered by the acceptance suite; echoed in the terminal summary
# so the one-line-per-criterion report survives output capture.
ACCEPTANCE_LINES = []


def record_criterion(number: int, name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"CRITERION {number:2d} {name}: {status}  {detail}".rstrip())


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end tests")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
