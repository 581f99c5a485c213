import os

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def cells():
    from battmdp.battery import load_cells

    return load_cells()


@pytest.fixture(scope="session")
def sim():
    from battmdp.montecarlo import Simulator

    return Simulator()
