"""Time evolution of κ⁻¹ψ_t − ∇·(A∇ψ) = F with ψ(0) = 0 and ψ|∂Ω = 0.

Discretely ``M ψ' + K ψ = M(κF)`` with M the κ⁻¹-weighted mass. Crank–Nicolson
is used throughout, with Rannacher restarts (four backward Euler half steps) at
t = 0 and after each envelope breakpoint.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Union

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from src.thermoeit.discretization import Mesh, ScalarField
from src.thermoeit.elliptic import WeightedOperator
from src.thermoeit.elliptic.operator import factorize, lu_solve
from src.thermoeit.errors import ConfigError
from src.thermoeit.heat_measurement.envelopes import SourceEnvelope

RESTART_STEPS = 2
PULSE_SUBSTEPS = 32


@dataclass(frozen=True, eq=False)
class HeatSource:
    """Separable power density F(t, x) = α(t)² F_space(x)."""

    spatial: NDArray[np.float64]
    envelope: SourceEnvelope

    @classmethod
    def of(cls, field: Union[ScalarField, NDArray], envelope: SourceEnvelope) -> "HeatSource":
        values = field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=float)
        return cls(values, envelope)

    def at(self, t: float) -> NDArray[np.float64]:
        return float(self.envelope.squared(t)) * self.spatial

    @property
    def breakpoints(self):
        return self.envelope.breakpoints


@dataclass(frozen=True, eq=False)
class HeatHistory:
    """Samples of ψ, ψ' and the boundary flux ν·A∇ψ on the output grid."""

    mesh: Mesh
    times: NDArray[np.float64]
    states: NDArray[np.float64]
    rates: NDArray[np.float64]
    fluxes: NDArray[np.float64]

    def state(self, index: int) -> ScalarField:
        return ScalarField(self.mesh, self.states[index], name="psi")


def _internal_grid(t_end: float, dt: float, source) -> NDArray[np.float64]:
    steps = int(round(t_end / dt))
    grid = [np.linspace(0.0, steps * dt, steps + 1)]
    grid.append(np.array([b for b in getattr(source, "breakpoints", ()) if 0 < b < t_end]))
    envelope = getattr(source, "envelope", None)
    interval = envelope.resolved_interval if envelope is not None else None
    if interval is not None and interval[1] < dt * PULSE_SUBSTEPS:
        grid.append(np.linspace(interval[0], min(interval[1], t_end), PULSE_SUBSTEPS + 1))
    return np.unique(np.round(np.concatenate(grid), 14))


def evolve_heat(operator: WeightedOperator, source: Union[HeatSource, Callable[[float], NDArray]],
                t_end: float, dt: float) -> HeatHistory:
    """ψ at the uniform samples 0, dt, …, t_end together with ψ' and the boundary flux.

    ``source`` gives the power density F at time t, either separable or as a
    callable returning nodal values.
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if t_end < dt:
        raise ConfigError(f"t_end must be at least dt, got t_end={t_end}, dt={dt}")

    mesh = operator.mesh
    idx = mesh.interior_nodes
    kappa = operator.kappa.values
    k_ii, m_ii = operator.interior_stiffness, operator.interior_mass

    if isinstance(source, HeatSource):
        spatial_load = np.asarray(operator.mass @ (kappa * source.spatial))
        squared = source.envelope.squared
        load = lambda t: float(squared(t)) * spatial_load
        density = source.at
        restarts = [0.0] + list(source.breakpoints)
    else:
        load = lambda t: np.asarray(operator.mass @ (kappa * source(t)))
        density = source
        restarts = [0.0]

    grid = _internal_grid(t_end, dt, source)
    outputs = np.round(np.linspace(0.0, int(round(t_end / dt)) * dt, int(round(t_end / dt)) + 1), 14)
    output_index = {t: i for i, t in enumerate(outputs)}
    factors: Dict[float, object] = {}

    def implicit(step: float):
        key = round(step, 15)
        if key not in factors:
            factors[key] = factorize(m_ii + step * k_ii)
        return factors[key]

    psi = np.zeros(mesh.interior_node_count)
    states = np.zeros((outputs.size, mesh.node_count))
    rates = np.zeros_like(states)
    fluxes = np.zeros((outputs.size, mesh.boundary_nodes.size))

    def record(i: int, t: float):
        full_load = load(t)
        rate = operator.solve_mass(full_load[idx] - k_ii @ psi)
        states[i, idx], rates[i, idx] = psi, rate
        fluxes[i] = operator.flux(states[i], kappa * density(t) - rates[i])

    record(0, 0.0)
    restart_left = RESTART_STEPS
    pending = sorted(b for b in restarts if b > 0)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        step = t1 - t0
        if pending and t0 >= pending[0] - 1e-14:
            pending.pop(0)
            restart_left = RESTART_STEPS
        if restart_left > 0:
            half = 0.5 * step
            for t_half in (t0 + half, t1):
                psi = lu_solve(implicit(half), m_ii @ psi + half * load(t_half)[idx])
            restart_left -= 1
        else:
            rhs = m_ii @ psi - 0.5 * step * (k_ii @ psi) + 0.5 * step * (load(t0) + load(t1))[idx]
            psi = lu_solve(implicit(0.5 * step), rhs)
        i = output_index.get(round(t1, 14))
        if i is not None:
            record(i, t1)

    logger.debug("Evolved heat equation", steps=grid.size - 1, t_end=float(outputs[-1]), dt=dt,
                 factorizations=len(factors))
    return HeatHistory(mesh, outputs, states, rates, fluxes)
