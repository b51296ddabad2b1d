import numpy as np
import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; the terminal summary prints them all."""

    def _report(label, passed, detail=""):
        _LINES.append((label, bool(passed), detail))
        return passed

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in _LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}")
    n_ok = sum(p for _, p, _ in _LINES)
    terminalreporter.write_line(f"{n_ok}/{len(_LINES)} criteria passed")
