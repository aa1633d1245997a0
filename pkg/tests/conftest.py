import numpy as np
import pytest


_ACCEPTANCE: list = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(name: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE.append((name, bool(passed), detail))
        return passed
    return record


def as_f64(module):
    return module.astype(np.float64)


def randomize(module, rng, scale=0.5):
    """Redraw parameters so zero biases and tiny init don't hide mistakes."""
    for _, t in module.named_parameters():
        t.data = scale * rng.standard_normal(t.shape)
    return module


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
