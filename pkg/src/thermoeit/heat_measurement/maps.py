"""Measurement maps Σ (voltage to heat flow) and Ξ (source to heat flow)."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from src.thermoeit.discretization import BoundaryTrace, Mesh, ScalarField, TensorField, lumped_projection
from src.thermoeit.elliptic import ConductivitySolver, SpectralData, WeightedOperator, assemble_P, dirichlet_spectrum
from src.thermoeit.errors import ConfigError, InsufficientModesError
from src.thermoeit.heat_measurement.envelopes import SourceEnvelope
from src.thermoeit.heat_measurement.evolution import HeatSource, evolve_heat

DEFAULT_IMPULSE_MODES = 80


@dataclass(frozen=True, eq=False)
class FluxTrace:
    """Boundary heat flux ν·A∇ψ sampled at ``times``; ``values`` has shape (T, B)."""

    mesh: Mesh
    times: NDArray[np.float64]
    values: NDArray[np.float64]
    source: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ConfigError("flux trace times must be strictly increasing")
        if self.values.shape != (times.size, self.mesh.boundary_nodes.size):
            raise ConfigError(f"flux values have shape {self.values.shape}, expected "
                              f"{(times.size, self.mesh.boundary_nodes.size)}")
        object.__setattr__(self, "times", times)

    def total(self) -> NDArray[np.float64]:
        """∫∂Ω flux dS at every sample."""
        return self.values @ self.mesh.boundary_mass

    def snapshot(self, index: int) -> BoundaryTrace:
        return BoundaryTrace(self.mesh, self.values[index])

    def window(self, t_min: float, t_max: float) -> "FluxTrace":
        keep = (self.times >= t_min - 1e-12) & (self.times <= t_max + 1e-12)
        return FluxTrace(self.mesh, self.times[keep], self.values[keep], dict(self.source))

    def scaled(self, factor: float) -> "FluxTrace":
        return FluxTrace(self.mesh, self.times, factor * self.values, dict(self.source))

    @classmethod
    def polarize(cls, plus: "FluxTrace", minus: "FluxTrace") -> "FluxTrace":
        """¼[Σ(h + h̃) − Σ(h − h̃)], the trace of the bilinear source γ∇w^h·∇w^{h̃}."""
        if not np.array_equal(plus.times, minus.times):
            raise ConfigError("polarization needs traces on the same time grid")
        return cls(plus.mesh, plus.times, 0.25 * (plus.values - minus.values),
                   {"polarized": [plus.source, minus.source]})

    def to_rows(self) -> List[tuple]:
        """(t, node_id, flux) triples in time-major order."""
        nodes = self.mesh.boundary_nodes
        return [(float(t), int(node), float(value))
                for t, row in zip(self.times, self.values) for node, value in zip(nodes, row)]

    def summary(self) -> Dict[str, Any]:
        return {"times": self.times.tolist(), "total_flux": self.total().tolist(), "source": self.source}


@dataclass(frozen=True)
class SpectralEvaluation:
    state: ScalarField
    tail: float


def joule_source(gamma: ScalarField, u, v=None) -> ScalarField:
    """Power density γ∇u·∇v (v = u by default) projected to nodes with its integral preserved."""
    mesh = gamma.mesh
    u = u.values if isinstance(u, ScalarField) else np.asarray(u)
    v = u if v is None else (v.values if isinstance(v, ScalarField) else np.asarray(v))
    grad_u = np.einsum("ei,eid->ed", u[mesh.elements], mesh.element_gradients)
    grad_v = np.einsum("ei,eid->ed", v[mesh.elements], mesh.element_gradients)
    density = gamma.element_means() * np.einsum("ed,ed->e", grad_u, grad_v)
    return ScalarField(mesh, lumped_projection(mesh, np.real_if_close(density)), name="power_density")


def parseval_tail(spectral: SpectralData, source: NDArray) -> float:
    """Relative weighted energy of ``source`` outside the computed modes."""
    operator = spectral.operator
    total = float(source @ (operator.mass @ source))
    if total <= 0:
        return 0.0
    coefficients = spectral.coefficients(source)
    return max(0.0, total - float(coefficients @ coefficients)) / total


def _check_tail(tail: float, tolerance: Optional[float], what: str):
    if tolerance is not None and tail > tolerance:
        logger.error("Spectral truncation too coarse", what=what, tail=tail, tolerance=tolerance)
        raise InsufficientModesError(f"{what}: truncation tail {tail:.3e} above {tolerance:.3e}", tail=tail)
    if tail > 1e-3:
        logger.warning("Spectral truncation tail is large", what=what, tail=tail)


def duhamel_solution(spectral: SpectralData, source: HeatSource, t: float,
                     tail_tolerance: Optional[float] = None) -> SpectralEvaluation:
    """ψ(t) = Σ_k φ_k d_k ∫₀^t e^{−λ_k(t−s)} α²(s) ds with d_k = (κF, φ_k)_{L²_κ}."""
    kappa = spectral.operator.kappa.values
    load = kappa * source.spatial
    tail = parseval_tail(spectral, load)
    _check_tail(tail, tail_tolerance, "duhamel_solution")
    d = spectral.coefficients(load)
    weights = np.array([source.envelope.decay_integral(rate, t) for rate in spectral.eigenvalues])
    return SpectralEvaluation(ScalarField(spectral.mesh, spectral.eigenvectors @ (d * weights), name="psi"), tail)


def impulse_response(spectral: SpectralData, G, times, tail_tolerance: Optional[float] = None) -> FluxTrace:
    """Flux Σ_k e^{−λ_k t} d_k ν·A∇φ_k for the unit impulse of the P-space source G = κF."""
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ConfigError("impulse response times must be positive")
    G = G.values if isinstance(G, ScalarField) else np.asarray(G, dtype=float)
    tail = parseval_tail(spectral, G)
    _check_tail(tail, tail_tolerance, "impulse_response")
    d = spectral.coefficients(G)
    decay = np.exp(-np.outer(times, spectral.eigenvalues))
    values = (decay * d) @ spectral.flux_traces.T
    return FluxTrace(spectral.mesh, times, values, {"envelope": "impulse", "modes": spectral.count, "tail": tail})


def spectral_flux(spectral: SpectralData, source: HeatSource, times) -> FluxTrace:
    """Flux of the truncated modal model for a separable source (exact in time)."""
    operator = spectral.operator
    times = np.asarray(times, dtype=float)
    load = operator.kappa.values * source.spatial
    d = spectral.coefficients(load)
    weights = np.stack([source.envelope.decay_integrals(rate, times) for rate in spectral.eigenvalues], axis=1)
    values = (weights * d) @ spectral.flux_traces.T
    if not source.envelope.is_impulse:
        # the part of the source outside the modal span enters the flux while the source is on
        projected = spectral.eigenvectors @ d
        residual = operator.flux(np.zeros(spectral.mesh.node_count), load - projected)
        values = values + np.outer(source.envelope.squared(times), residual)
    return FluxTrace(spectral.mesh, times, values,
                     {"envelope": source.envelope.describe(), "modes": spectral.count, "method": "spectral"})


def _output_times(envelope: SourceEnvelope, t_end: float, dt: float) -> NDArray[np.float64]:
    steps = int(round(t_end / dt))
    times = np.linspace(0.0, steps * dt, steps + 1)
    return times[1:] if envelope.is_impulse else times


def xi_map(kappa: ScalarField, tensor: TensorField, F_space, envelope: SourceEnvelope, t_end: float, dt: float,
           spectral: Optional[SpectralData] = None, method: str = "auto",
           operator: Optional[WeightedOperator] = None) -> FluxTrace:
    """Ξ_{κ,A}: flux of the source α(t)² F_space.

    ``method`` is ``"stepping"`` (Crank–Nicolson), ``"spectral"`` (modal model,
    needs ``spectral``) or ``"auto"``, which steps unless the envelope is an impulse.
    """
    operator = operator or assemble_P(kappa, tensor)
    source = HeatSource.of(F_space, envelope)
    times = _output_times(envelope, t_end, dt)
    if not np.any(source.spatial):
        return FluxTrace(operator.mesh, times, np.zeros((times.size, operator.mesh.boundary_nodes.size)),
                         {"envelope": envelope.describe(), "zero_source": True})
    if envelope.is_impulse or method == "spectral":
        if spectral is None:
            spectral = dirichlet_spectrum(operator, DEFAULT_IMPULSE_MODES)
        if envelope.is_impulse:
            return impulse_response(spectral, operator.kappa.values * source.spatial, times)
        return spectral_flux(spectral, source, times)
    history = evolve_heat(operator, source, t_end, dt)
    return FluxTrace(operator.mesh, history.times, history.fluxes,
                     {"envelope": envelope.describe(), "dt": dt, "method": "stepping"})


def sigma_map(gamma: ScalarField, kappa: ScalarField, tensor: TensorField, h, envelope: SourceEnvelope,
              t_end: float, dt: float, h_tilde=None, spectral: Optional[SpectralData] = None,
              method: str = "auto", operator: Optional[WeightedOperator] = None,
              conductivity: Optional[ConductivitySolver] = None) -> FluxTrace:
    """Σ_{γ,κ,A}(α h): flux caused by Joule heating of the voltage α(t) h.

    With ``h_tilde`` the source is the bilinear density γ∇w^h·∇w^{h̃}, which equals
    the polarization ¼[Σ(α(h+h̃)) − Σ(α(h−h̃))].
    """
    conductivity = conductivity or ConductivitySolver(gamma)
    w = conductivity.solve(h)
    w_tilde = None if h_tilde is None else conductivity.solve(h_tilde)
    density = joule_source(gamma, w, w_tilde)
    trace = xi_map(kappa, tensor, density, envelope, t_end, dt, spectral, method, operator)
    return FluxTrace(trace.mesh, trace.times, trace.values, {**trace.source, "polarized": h_tilde is not None})


class HeatFlowDevice:
    """Black box holding the true coefficients; only boundary fluxes leave it."""

    def __init__(self, gamma: ScalarField, kappa: ScalarField, tensor: TensorField,
                 impulse_modes: int = DEFAULT_IMPULSE_MODES):
        self.mesh = gamma.mesh
        self._gamma = gamma
        self._operator = assemble_P(kappa, tensor)
        self._conductivity = ConductivitySolver(gamma)
        self._impulse_modes = impulse_modes
        self._spectral: Optional[SpectralData] = None
        self._lock = threading.Lock()

    def _spectrum(self) -> SpectralData:
        with self._lock:
            if self._spectral is None:
                self._spectral = dirichlet_spectrum(self._operator, self._impulse_modes)
            return self._spectral

    def sigma(self, h: Union[BoundaryTrace, NDArray], envelope: SourceEnvelope, t_end: float, dt: float,
              method: str = "auto") -> FluxTrace:
        spectral = self._spectrum() if envelope.is_impulse or method == "spectral" else None
        return sigma_map(self._gamma, self._operator.kappa, self._operator.tensor, h, envelope, t_end, dt,
                         spectral=spectral, method=method, operator=self._operator,
                         conductivity=self._conductivity)

    def xi(self, F_space: Union[ScalarField, NDArray], envelope: SourceEnvelope, t_end: float, dt: float,
           method: str = "auto") -> FluxTrace:
        spectral = self._spectrum() if envelope.is_impulse or method == "spectral" else None
        return xi_map(self._operator.kappa, self._operator.tensor, F_space, envelope, t_end, dt,
                      spectral=spectral, method=method, operator=self._operator)
