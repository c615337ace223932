import time
from contextlib import contextmanager

import pytest

_RESULTS: list[str] = []


class _Criterion:
    def __init__(self, number: int, title: str, budget_s: float):
        self.number, self.title, self.budget_s = number, title, budget_s
        self.details: list[str] = []

    def note(self, text: str):
        self.details.append(text)


@pytest.fixture
def criterion():
    """Time one acceptance criterion and record a PASS/FAIL line for the summary."""

    @contextmanager
    def run(number: int, title: str, budget_s: float):
        c = _Criterion(number, title, budget_s)
        t0 = time.perf_counter()
        ok = False
        try:
            yield c
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            within = elapsed < budget_s
            status = "PASS" if ok and within else "FAIL"
            detail = "; ".join(c.details)
            line = f"[{status}] criterion {number:2d} {title}: {detail} ({elapsed:.1f} s, budget {budget_s:.0f} s)"
            _RESULTS.append(line)
            print(line)
        assert elapsed < budget_s, f"criterion {number} took {elapsed:.1f} s (budget {budget_s} s)"

    return run


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
