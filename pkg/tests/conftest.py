from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from divasim.device import DeviceGeometry
from divasim.harness import Device

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def small_geometry():
    return DeviceGeometry(subarrays_per_bank=2)


@pytest.fixture(scope="session")
def small_device(small_geometry):
    return Device.generate(0, geometry=small_geometry)


@pytest.fixture(scope="session")
def default_device():
    return Device.generate(0)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
