import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from speechfix import synth

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def speech():
    """Three seconds of synthetic speech at 44.1 kHz."""
    return synth.synth_utterance(3.0, seed=11)


@pytest.fixture(scope="session")
def short_speech():
    return synth.synth_utterance(1.0, seed=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion and assert it."""

    def record(number: int, title: str, passed: bool, detail: str):
        line = f"CRITERION {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
