import numpy as np
import pytest

from survcare import DgpConfig, Sobolev1Kernel, simulate_dataset, split_train_validation


@pytest.fixture(scope="session")
def uni_dgp():
    return DgpConfig("univariate")


@pytest.fixture(scope="session")
def small_dataset(uni_dgp):
    """Univariate sample of size 40 shared by fitting tests."""
    data, _ = simulate_dataset(uni_dgp, 40, 2026)
    return data


@pytest.fixture(scope="session")
def small_truth(uni_dgp):
    _, truth = simulate_dataset(uni_dgp, 40, 2026)
    return truth


@pytest.fixture(scope="session")
def train_valid_pair(uni_dgp):
    data, _ = simulate_dataset(uni_dgp, 200, 515)
    return split_train_validation(data, 7)


@pytest.fixture(scope="session")
def sob1():
    return Sobolev1Kernel(shift=1.0)


def all_censored_dataset(n=12, seed=3):
    from survcare import SurvivalDataset

    rng = np.random.default_rng(seed)
    return SurvivalDataset(
        rng.uniform(0, 1, (n, 1)),
        rng.uniform(0.1, 1.0, n),
        np.ones(n, dtype=bool),
    )
