import numpy as np
import pytest

from trimix import SpdMatrix


def rand_spd(dim, rng, jitter=0.3):
    """Random well-conditioned SPD matrix."""
    a = rng.standard_normal((dim, dim + 2))
    return SpdMatrix(a @ a.T / (dim + 2) + jitter * np.eye(dim))


@pytest.fixture
def rng():
    return np.random.default_rng(20250809)
