import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("kaclab", max_examples=60, deadline=None, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "kaclab"))


@pytest.fixture
def rng():
    from kaclab.rng import make_rng

    return make_rng(20240601)


def rand_coords(rng, N, norm):
    v = rng.standard_normal(N)
    return v * (norm / np.linalg.norm(v))
