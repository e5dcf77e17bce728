import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from sasolver.schedules import NoiseSchedule  # noqa: E402

ALL_SCHEDULES = {
    "vp-linear": NoiseSchedule.vp_linear(),
    "vp-cosine": NoiseSchedule.vp_cosine(),
    "ve": NoiseSchedule.ve(),
    "edm": NoiseSchedule.edm(),
}

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(params=list(ALL_SCHEDULES), ids=list(ALL_SCHEDULES))
def any_schedule(request):
    return ALL_SCHEDULES[request.param]


@pytest.fixture(autouse=True)
def _outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("SASOLVER_OUTDIR", str(tmp_path / "runs"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
