import os

import pytest
import torch

from roomnav.floorplan import FULL_HOUSE, MINI_HOUSE, enumerate_floorplans

torch.set_num_threads(int(os.environ.get("ROOMNAV_THREADS", "1")))


@pytest.fixture(scope="session")
def plans():
    return enumerate_floorplans(FULL_HOUSE)


@pytest.fixture(scope="session")
def mini_plans():
    return enumerate_floorplans(MINI_HOUSE)


@pytest.fixture(scope="session")
def plan0(plans):
    return plans[0]
