import numpy as np
import pytest

from gldp.coeffs import CoefficientSet, get_preset
from gldp.gcore import VolBounds
from gldp.paths import make_time_grid


@pytest.fixture
def bounds14():
    return VolBounds(1.0, 4.0)


@pytest.fixture
def tanh():
    return get_preset("tanh-drift")


@pytest.fixture
def flat():
    return get_preset("flat")


@pytest.fixture
def unit_grid():
    return make_time_grid(0.0, 1.0, 200)


@pytest.fixture
def decay():
    """b = h = 0, sigma = 1, Phi = id, f = -y, g = 0; then u0(t, x) = x e^{-(T - t)}."""
    return CoefficientSet(f=lambda t, x, y, z: -np.asarray(y, dtype=float) + 0.0 * np.asarray(x),
                          name="decay")
