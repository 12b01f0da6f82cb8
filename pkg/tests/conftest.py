import numpy as np
import pytest
from hypothesis import settings

from chargejumps import presets
from chargejumps.model import CurveModel, ScanSchedule
from chargejumps.template import Template

settings.register_profile("default", deadline=None)
settings.load_profile("default")

ACCEPTANCE = {}


def record(number, name, ok, detail=""):
    ACCEPTANCE[number] = (name, bool(ok), detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {name}" + (f"  ({detail})" if detail else ""))


@pytest.fixture(scope="session")
def schedule():
    return presets.schedule()


@pytest.fixture(scope="session")
def model():
    return CurveModel(contrast=0.45, offset=0.5, depth=0.25)


@pytest.fixture(scope="session")
def analytic_template(model):
    """37-point template sampled from the analytic curve, sigma 0.02."""
    phase = np.arange(37) / 37
    return Template(1, phase, model(phase), np.full(37, 0.02), n_source_scans=20)


@pytest.fixture(scope="session")
def small_schedule():
    return ScanSchedule(averages={1: 200, 2: 200}, qubit_order=(1, 2))
