import pytest

from darma import model

from helpers import simulate_panel


@pytest.fixture(scope="session")
def centered_spec():
    return model.DarmaSpec(P=1, Q=1, J=4, ref_index=2, variant="centered")


@pytest.fixture(scope="session")
def raw_spec():
    return model.DarmaSpec(P=1, Q=1, J=4, ref_index=2, variant="raw")


@pytest.fixture(scope="session")
def small_panel(centered_spec):
    panel, params = simulate_panel(centered_spec, T=120, seed=7)
    return panel, params
