from src.thermoeit.heat_measurement.envelopes import EnvelopeKind, SourceEnvelope, pulse_moment, pulse_profile
from src.thermoeit.heat_measurement.evolution import HeatHistory, HeatSource, evolve_heat
from src.thermoeit.heat_measurement.maps import (
    FluxTrace,
    HeatFlowDevice,
    duhamel_solution,
    impulse_response,
    joule_source,
    parseval_tail,
    sigma_map,
    spectral_flux,
    xi_map,
)

__all__ = [
    "EnvelopeKind", "SourceEnvelope", "pulse_moment", "pulse_profile",
    "HeatHistory", "HeatSource", "evolve_heat",
    "FluxTrace", "HeatFlowDevice", "duhamel_solution", "impulse_response", "joule_source",
    "parseval_tail", "sigma_map", "spectral_flux", "xi_map",
]
