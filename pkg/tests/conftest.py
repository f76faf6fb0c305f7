import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def binomial_ok(hits: int, trials: int, p: float, sigmas: float = 3.0) -> bool:
    """Whether ``hits`` lies within ``sigmas`` standard deviations of ``trials * p``."""
    mean = trials * p
    sd = (trials * p * (1 - p)) ** 0.5
    return abs(hits - mean) <= sigmas * sd


@pytest.fixture
def tmp_files(tmp_path):
    def write(name: str, text: str) -> str:
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return write


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, when that module ran."""
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "VERDICTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
