import sys


def pytest_terminal_summary(terminalreporter):
    """Print the one-line-per-guarantee acceptance report at the end of a run."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None) if module else None
    if lines:
        terminalreporter.section("acceptance summary")
        for line in lines:
            terminalreporter.write_line(line)
