import numpy as np
import pytest

from gibbslab.systems import (make_anosov_T4, make_bonatti_viana, make_cat_map,
                              make_lorenz)

# log of the cat map's expanding eigenvalue (3 + sqrt 5) / 2
LOG_LAM = float(np.log((3.0 + np.sqrt(5.0)) / 2.0))


@pytest.fixture(scope="session")
def cat_system():
    return make_cat_map()


@pytest.fixture(scope="session")
def t4_system():
    return make_anosov_T4()


@pytest.fixture(scope="session")
def bv_system():
    return make_bonatti_viana()


@pytest.fixture(scope="session")
def lorenz_system():
    # trapping validation is covered by its own test; skip it here
    return make_lorenz(validate=False)


def unstable_frame(system, dim):
    """Unit eigenvector columns for the `dim` largest |eigenvalues|."""
    data = system.spec.eigen_data
    return np.asarray(data["vectors"][:, -dim:], dtype=float)


def stable_frame(system, dim):
    data = system.spec.eigen_data
    return np.asarray(data["vectors"][:, :dim], dtype=float)
