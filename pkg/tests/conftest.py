import pytest

from volcontract import ControlGrid, build_model


@pytest.fixture(scope="session")
def quartic():
    return build_model({"example": "quartic", "T": 1.0, "x0": 0.0})


@pytest.fixture(scope="session")
def scalar_vol():
    return build_model({"example": "scalar-vol", "gamma_a": 1, "gamma_p": 1, "h": 1, "T": 1})


@pytest.fixture(scope="session")
def demand():
    return build_model({"example": "demand-response", "sigmas": [1, 1], "lambdas": [1, 4], "mus": [1, 1]})


@pytest.fixture(scope="session")
def quartic_grid(quartic):
    return ControlGrid.from_counts(quartic, (2001,))


@pytest.fixture(scope="session")
def scalar_grid(scalar_vol):
    return ControlGrid.from_counts(scalar_vol)


@pytest.fixture(scope="session")
def demand_grid(demand):
    return ControlGrid.from_counts(demand)
