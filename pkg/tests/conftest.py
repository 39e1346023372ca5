import numpy as np
import pytest

from pvbess import fixtures


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def tiny():
    """4 hours, 1 year, 2 scenarios, 1 tech, budget 1."""
    return fixtures.tiny_instance()


@pytest.fixture
def tiny2():
    """5 hours, 2 years, 2 scenarios, 2 techs, budget 2."""
    return fixtures.tiny_instance(hours=5, years=2, scenarios=2, techs=2, budget=2.0)


@pytest.fixture(scope="session")
def desk():
    return fixtures.desk_instance()
