import numpy as np
import pytest

from p2psim.profiles import (ProsumerKind, ProsumerSpec, default_community,
                             generate_synthetic_profiles)
from p2psim.rewards import TariffCalendar


@pytest.fixture(scope="session")
def community():
    return default_community()


@pytest.fixture(scope="session")
def two_specs():
    return [
        ProsumerSpec("farm1", ProsumerKind.DAIRY_FARM, annual_load=60000.0,
                     battery_capacity=30.0),
        ProsumerSpec("house1", ProsumerKind.HOUSEHOLD, annual_load=8000.0,
                     battery_capacity=10.0),
    ]


@pytest.fixture(scope="session")
def two_profiles(two_specs):
    return generate_synthetic_profiles(two_specs, seed=7)


@pytest.fixture(scope="session")
def calendar():
    return TariffCalendar()


@pytest.fixture
def rng():
    return np.random.default_rng(42)
