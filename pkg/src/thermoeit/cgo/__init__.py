from src.thermoeit.cgo.density import (
    DensityReport,
    cosine_basis,
    default_test_functions,
    density_gram_test,
    harmonic_exponential_probes,
    product_identity_check,
)
from src.thermoeit.cgo.phases import CgoPhasePair, lattice_symbol, make_phase_pair
from src.thermoeit.cgo.remainder import (
    CgoSolution,
    ExtendedCoefficient,
    PeriodicBox,
    extend_gamma,
    potential,
    shifted_wavevectors,
    solve_remainder,
)

__all__ = [
    "DensityReport", "cosine_basis", "default_test_functions", "density_gram_test",
    "harmonic_exponential_probes", "product_identity_check",
    "CgoPhasePair", "lattice_symbol", "make_phase_pair",
    "CgoSolution", "ExtendedCoefficient", "PeriodicBox", "extend_gamma", "potential",
    "shifted_wavevectors", "solve_remainder",
]
