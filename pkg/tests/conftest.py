import numpy as np
import pytest

from mmcoupler.calibrate import idle_spectrum
from mmcoupler.model import unit_cell_model
from mmcoupler.pulses import CZParams

# CZ optimum: q1, q2, c at 4 levels, cap 5, dt 0.05, average objective (rad/ns, ns)
OPTIMUM = CZParams(
    0.14698064142826037,
    -0.7568163771001466,
    6.1549858712212195,
    5.867103799861523,
    3.330535485764493,
)
CZ_LEVELS = {"q1": 4, "q2": 4, "c": 4}


@pytest.fixture(scope="session")
def model2():
    return unit_cell_model(2)


@pytest.fixture(scope="session")
def labeled2(model2):
    return idle_spectrum(model2)


@pytest.fixture(scope="session")
def model2_cap4():
    return unit_cell_model(2, max_excitations=4)


@pytest.fixture(scope="session")
def labeled2_cap4(model2_cap4):
    return idle_spectrum(model2_cap4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
