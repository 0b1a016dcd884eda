import numpy as np
import pytest

from dkunfold.response import (DetectorModel, EnergyGrid, MediumModel, detector_response_matrix,
                               medium_kernel, modified_response)


@pytest.fixture(scope="session")
def small_grid():
    return EnergyGrid(0.0, 1024.0, 1025)


@pytest.fixture(scope="session")
def photopeak_rhat(small_grid):
    """Pure photopeak detector in vacuum."""
    return detector_response_matrix(DetectorModel(fwhm_a=2.0), small_grid)


@pytest.fixture(scope="session")
def full_rhat(small_grid):
    """Photopeak + Compton shelf detector behind a scattering medium."""
    R = detector_response_matrix(
        DetectorModel(fwhm_a=2.0, photofraction=0.5, compton_fraction=0.35), small_grid)
    P = medium_kernel(MediumModel(0.9, 0.3), small_grid)
    return modified_response(R, P)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
