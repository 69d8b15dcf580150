import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in __import__("sys").modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
