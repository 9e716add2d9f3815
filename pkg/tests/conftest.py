import numpy as np
import pytest

from sorl.market import Market, MarketConfig


@pytest.fixture(scope="session")
def small_market():
    """Cheap market for unit tests: few impressions per step."""
    return Market(MarketConfig.desk(n_min=20, n_max=40))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance_record():
    """Store ``(passed, detail)`` per criterion number; printed in the terminal summary."""
    def record(number: int, name: str, passed: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (name, bool(passed), detail)
        print(f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
