import numpy as np
import pytest

from coilnav.dynamics import RobotParams
from coilnav.system import build_system


@pytest.fixture(scope="session")
def system():
    return build_system()


@pytest.fixture(scope="session")
def packed(system):
    return system.packed()


@pytest.fixture(scope="session")
def magnet_params():
    return RobotParams.magnet_robot()


class ZeroField:
    """Field model stub: no field anywhere (drag-only dynamics)."""

    n_coils = 8

    def eval_field(self, point_mm, currents):
        return np.zeros(2)

    def eval_gradient(self, point_mm, currents):
        return np.zeros((2, 2))


@pytest.fixture
def zero_field():
    return ZeroField()
