import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from aims.geometry import build_rwg, make_sphere_mesh  # noqa: E402
from aims.scenario import plate_for_mean_edge  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

K0 = 2 * np.pi  # wavenumber for a unit wavelength


@pytest.fixture(scope="session")
def plate1():
    """Unit-wavelength plate at the benchmark density (N = 280)."""
    return build_rwg(plate_for_mean_edge(1.0, 1 / 9))


@pytest.fixture(scope="session")
def small_plate():
    """0.4-wavelength plate, small enough for dense checks."""
    return build_rwg(plate_for_mean_edge(0.4, 1 / 9))


@pytest.fixture(scope="session")
def small_sphere():
    """Closed sphere of radius 0.3 wavelengths."""
    return build_rwg(make_sphere_mesh(0.3, 0.12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# lines reported by the acceptance suite, printed after the test summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_order):
            terminalreporter.write_line(line)


def _criterion_order(line):
    key = line.split()[1]
    digits = "".join(ch for ch in key if ch.isdigit())
    return int(digits), key
