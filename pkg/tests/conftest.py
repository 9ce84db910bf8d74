import numpy as np
import pytest

from guided_inpaint.mixture import GaussianMixtureModel
from guided_inpaint.schedule import build_linear_schedule


@pytest.fixture(scope="session")
def sched250():
    return build_linear_schedule(250)


@pytest.fixture(scope="session")
def gmm_1d():
    """Symmetric two-component mixture on the line."""
    return GaussianMixtureModel(
        weights=np.array([0.5, 0.5]),
        means=np.array([[-1.0], [1.0]]),
        sigmas=np.array([0.1, 0.1]),
    )


@pytest.fixture(scope="session")
def gmm_2d():
    return GaussianMixtureModel(
        weights=np.array([0.5, 0.5]),
        means=np.array([[-1.0, -1.0], [1.0, 1.0]]),
        sigmas=np.array([0.1, 0.1]),
    )


@pytest.fixture(scope="session")
def gmm_3c():
    """Asymmetric three-component mixture for less symmetric checks."""
    return GaussianMixtureModel(
        weights=np.array([0.5, 0.3, 0.2]),
        means=np.array([[-1.2, 0.3], [0.8, -0.5], [0.1, 1.1]]),
        sigmas=np.array([0.15, 0.25, 0.2]),
    )
