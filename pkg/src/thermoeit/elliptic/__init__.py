from src.thermoeit.elliptic.conductivity import (
    ConductivitySolver,
    DtNMap,
    dtn_map,
    solve_conductivity,
)
from src.thermoeit.elliptic.operator import WeightedOperator, assemble_P, neumann_flux, solve_P_inverse
from src.thermoeit.elliptic.spectrum import SpectralData, cluster_indices, dirichlet_spectrum

__all__ = [
    "ConductivitySolver", "DtNMap", "dtn_map", "solve_conductivity",
    "WeightedOperator", "assemble_P", "neumann_flux", "solve_P_inverse",
    "SpectralData", "cluster_indices", "dirichlet_spectrum",
]
