import numpy as np
import pytest

from nip.orbit_store import OrbitTensor


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_orbits(rng, n, shape=(3, 2, 4, 3, 3), prefix="img"):
    return [OrbitTensor(f"{prefix}{k:03d}", rng.gamma(2.0, 1.0, size=shape)) for k in range(n)]


@pytest.fixture
def orbits(rng):
    return random_orbits(rng, 5)
