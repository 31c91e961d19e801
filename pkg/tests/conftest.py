import numpy as np
import pytest

_ACCEPTANCE: dict[int, str] = {}


class AcceptanceLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    def note(self, number: int, detail: str) -> None:
        line = f"criterion {number}: N/A - {detail}"
        _ACCEPTANCE[number] = line
        print(line)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
