import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture
def report(request):
    """Record one acceptance line; it is printed immediately and again in the run summary."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def _report(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} [{name}]: {'PASS' if ok else 'FAIL'} ({detail})"
        _CRITERIA.append(line)
        with capman.global_and_fixture_disabled():
            print(f"\n{line}", flush=True)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
