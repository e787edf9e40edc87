from src.thermoeit.discretization.assembly import (
    boundary_integral,
    integrate,
    lumped_projection,
    mass_matrix,
    stiffness_matrix,
    variational_flux,
)
from src.thermoeit.discretization.fields import BoundaryTrace, ScalarField, TensorField
from src.thermoeit.discretization.mesh import Mesh, build_box_mesh, build_disk_mesh

__all__ = [
    "Mesh", "build_box_mesh", "build_disk_mesh",
    "ScalarField", "TensorField", "BoundaryTrace",
    "integrate", "boundary_integral", "stiffness_matrix", "mass_matrix",
    "lumped_projection", "variational_flux",
]
