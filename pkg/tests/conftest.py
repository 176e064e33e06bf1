import numpy as np
import pytest

from specklepose.config import desk_profile
from specklepose.optics import generate_surface

ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk():
    return desk_profile()


@pytest.fixture(scope="session")
def desk_surface(desk):
    return generate_surface(11, desk.optics, desk.roughness_rms_m, desk.aperture)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
