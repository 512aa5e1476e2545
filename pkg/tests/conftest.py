import time
from contextlib import contextmanager

import pytest

_VERDICTS: dict = {}


class Criterion:
    """Collects named checks for one acceptance criterion and records the verdict."""

    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.details = []

    def check(self, label, value, ok):
        self.details.append(f"{label}={value:.3g}" if isinstance(value, float) else f"{label}={value}")
        assert ok, f"criterion {self.number}: {label} = {value}"


@pytest.fixture
def criterion():
    @contextmanager
    def _open(number, title, budget):
        crit = Criterion(number, title, budget)
        start = time.perf_counter()
        verdict = "FAIL"
        try:
            yield crit
            elapsed = time.perf_counter() - start
            crit.check("runtime_s", elapsed, elapsed < budget)
            verdict = "PASS"
        finally:
            _VERDICTS[number] = f"{verdict} criterion {number}: {title} ({', '.join(crit.details)})"
            print(_VERDICTS[number])

    return _open


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
