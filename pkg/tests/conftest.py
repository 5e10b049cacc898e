import os
from datetime import datetime, timedelta

import pytest

from harupdate.events import parse_casas
from harupdate.synth import ActivitySpec, SynthConfig

ACCEPTANCE_LINES: list[str] = []


def casas_lines(rows, start="2010-11-04 00:00:00.000001", step_s=30):
    """Build CASAS text lines from (sensor, state[, activity, marker]) tuples."""
    t = datetime.fromisoformat(start)
    out = []
    for row in rows:
        out.append(" ".join([t.strftime("%Y-%m-%d"), t.strftime("%H:%M:%S.%f"), *row]))
        t += timedelta(seconds=step_s)
    return out


@pytest.fixture
def tiny_stream():
    rows = [("M001", "ON", "Sleep", "begin"), ("M001", "OFF"), ("D001", "OPEN"), ("T001", "21.5"),
            ("M002", "ON", "Sleep", "end"), ("M003", "ON"), ("M004", "ON", "Eat", "begin"),
            ("M004", "OFF", "Eat", "end")]
    return parse_casas(casas_lines(rows))


def small_home(days=14, noise_rate=0.0, jitter=0):
    acts = [ActivitySpec("Sleep", ["M001=ON", "M002=ON", "M001=OFF", "M002=OFF"], 1, [12, 12]),
            ActivitySpec("Eat", ["M003=ON", "D001=OPEN", "D001=CLOSE", "M003=OFF"], 8, [12, 12]),
            ActivitySpec("Work", ["M004=ON", "M005=ON", "M005=OFF", "M004=OFF"], 12, [12, 12])]
    return SynthConfig(acts, days=days, jitter_minutes=jitter, noise_rate=noise_rate,
                       noise_sensors=["M010", "M011", "D010"])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def casas_data_dir():
    return os.environ.get("CASAS_DATA_DIR", os.path.normpath(os.path.join(os.path.dirname(__file__), "..", "data", "casas")))
