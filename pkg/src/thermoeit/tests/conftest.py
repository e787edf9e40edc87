import numpy as np
import pytest

from src.thermoeit.discretization import ScalarField, TensorField, build_box_mesh, build_disk_mesh


@pytest.fixture(scope="session")
def unit_square_mesh():
    return build_box_mesh(2, [1.0, 1.0], [32, 32])


@pytest.fixture(scope="session")
def fine_square_mesh():
    return build_box_mesh(2, [1.0, 1.0], [64, 64])


@pytest.fixture(scope="session")
def coarse_square_mesh():
    return build_box_mesh(2, [1.0, 1.0], [12, 12])


@pytest.fixture(scope="session")
def unit_disk_mesh():
    return build_disk_mesh(1.0, 40)


@pytest.fixture
def unit_coefficients(unit_square_mesh):
    kappa = ScalarField.constant(unit_square_mesh, 1.0, lower_bound=1.0, name="kappa")
    return kappa, TensorField.identity(unit_square_mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
