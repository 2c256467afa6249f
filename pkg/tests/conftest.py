import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

DATA_DIR = os.environ.get("AUTOCO_DATA_DIR", "/root/data")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def data_file(name):
    path = os.path.join(DATA_DIR, name)
    if not os.path.exists(path):
        pytest.skip(f"{path} not available")
    return path
