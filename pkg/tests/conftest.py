import numpy as np
import pytest

from cappool.pmf import N_BINS


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def point_mass(bin_idx: int) -> np.ndarray:
    pmf = np.zeros(N_BINS)
    pmf[bin_idx] = 1.0
    return pmf


def random_pmf(rng) -> np.ndarray:
    raw = rng.dirichlet(np.full(N_BINS, 0.3))
    return raw / raw.sum()
