import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# one-line verdicts registered by the acceptance tests; echoed after the run
# so they survive pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
