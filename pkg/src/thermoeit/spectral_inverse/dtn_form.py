"""Dirichlet-to-Neumann quadratic form from equilibrium heat flux, and a low-dimensional γ fit."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import linalg

from src.thermoeit.discretization import BoundaryTrace, Mesh, ScalarField, stiffness_matrix
from src.thermoeit.elliptic import ConductivitySolver
from src.thermoeit.errors import ConfigError, EquilibriumNotReachedError, FitNotConvergedError
from src.thermoeit.heat_measurement import FluxTrace

EQUILIBRIUM_RTOL = 1e-6
TAIL_SAMPLES = 5

Measurement = Callable[[NDArray], FluxTrace]


def _trace_values(h) -> NDArray:
    return h.values if isinstance(h, BoundaryTrace) else np.asarray(h, dtype=float)


def equilibrium_total(trace: FluxTrace, rtol: float = EQUILIBRIUM_RTOL) -> float:
    """Limit of ∫∂Ω flux dS after the ramp, with a geometric tail correction.

    The late total flux approaches its limit like e^{−λ₁t}; the ratio of successive
    differences gives that rate and the remaining tail.
    """
    totals = trace.total()
    settled = trace.times >= 1.0
    if np.count_nonzero(settled) < TAIL_SAMPLES + 1:
        raise EquilibriumNotReachedError("too few samples after the ramp completes", decay_rate=float("nan"))
    tail = totals[settled][-(TAIL_SAMPLES + 1):]
    steps = np.diff(tail)
    scale = max(abs(tail[-1]), np.abs(totals).max(), 1e-300)
    if np.all(np.abs(steps) <= rtol * scale * 1e-3):
        return float(tail[-1])
    ratios = steps[1:] / np.where(steps[:-1] == 0, np.nan, steps[:-1])
    ratio = float(np.nanmedian(ratios)) if np.any(np.isfinite(ratios)) else 1.0
    dt = float(trace.times[-1] - trace.times[-2])
    decay_rate = -np.log(ratio) / dt if 0 < ratio < 1 else 0.0
    if not 0 < ratio < 1:
        logger.error("Total flux is not settling", ratio=ratio)
        raise EquilibriumNotReachedError(f"total flux does not decay geometrically (ratio {ratio:.4g})",
                                         decay_rate=decay_rate)
    remainder = steps[-1] * ratio / (1.0 - ratio)
    if abs(remainder) > rtol * scale:
        logger.error("Equilibrium not reached", remainder=remainder, decay_rate=decay_rate, t_end=trace.times[-1])
        raise EquilibriumNotReachedError(
            f"flux still changing by {abs(remainder):.3e} at t={trace.times[-1]:.4g}; extend t_end",
            decay_rate=decay_rate)
    return float(tail[-1] + remainder)


def quadratic_form(measure: Measurement, h, rtol: float = EQUILIBRIUM_RTOL) -> float:
    """q(h) = −lim ∫∂Ω Σ(αh) dS for a ramp measurement."""
    return -equilibrium_total(measure(_trace_values(h)), rtol)


@dataclass(frozen=True, eq=False)
class DtnFormTable:
    """Gram table ⟨Λ_γ h_i, h_j⟩ over boundary probes (columns of ``probes``)."""

    mesh: Mesh
    probes: NDArray[np.float64]
    gram: NDArray[np.float64]
    values: Dict[str, float] = field(default_factory=dict)

    @property
    def probe_count(self) -> int:
        return self.probes.shape[1]

    def upper(self) -> NDArray[np.float64]:
        return self.gram[np.triu_indices(self.probe_count)]

    def to_json(self) -> dict:
        return {"gram": self.gram.tolist(), "probe_count": self.probe_count, "values": self.values}


def polarized_form(measure: Measurement, h, h_tilde, rtol: float = EQUILIBRIUM_RTOL) -> float:
    """q(h, h̃) = ¼[q(h + h̃) − q(h − h̃)]."""
    h, h_tilde = _trace_values(h), _trace_values(h_tilde)
    return 0.25 * (quadratic_form(measure, h + h_tilde, rtol) - quadratic_form(measure, h - h_tilde, rtol))


def extract_dtn_form(measure: Measurement, probes: Sequence, threads: int = 1,
                     rtol: float = EQUILIBRIUM_RTOL, mesh: Optional[Mesh] = None) -> DtnFormTable:
    """Polarized equilibrium measurements over all probe pairs."""
    if not probes:
        raise ConfigError("extract_dtn_form needs at least one probe")
    columns = np.stack([_trace_values(h) for h in probes], axis=1)
    if mesh is None and isinstance(probes[0], BoundaryTrace):
        mesh = probes[0].mesh
    count = columns.shape[1]
    requests = [("diag", i, i, columns[:, i]) for i in range(count)]
    for i in range(count):
        for j in range(i + 1, count):
            requests.append(("plus", i, j, columns[:, i] + columns[:, j]))
            requests.append(("minus", i, j, columns[:, i] - columns[:, j]))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(lambda request: quadratic_form(measure, request[3], rtol), requests))

    gram = np.zeros((count, count))
    values = {}
    for (kind, i, j, _), value in zip(requests, results):
        values[f"{kind}:{i}:{j}"] = value
        if kind == "diag":
            gram[i, i] = value
        elif kind == "plus":
            gram[i, j] += 0.25 * value
        else:
            gram[i, j] -= 0.25 * value
    gram = np.triu(gram) + np.triu(gram, 1).T
    logger.info("Extracted DtN form", probes=count, measurements=len(requests))
    return DtnFormTable(mesh, columns, gram, values)


def harmonic_polynomial_probes(mesh: Mesh, count: int) -> List[BoundaryTrace]:
    """Traces of low-order harmonic polynomials centred on the domain (2D: Re/Im of zᵏ)."""
    center = 0.5 * (mesh.bounds[0] + mesh.bounds[1])
    x = mesh.boundary_coordinates - center
    probes = []
    if mesh.dimension == 2:
        z = x[:, 0] + 1j * x[:, 1]
        degree = 1
        while len(probes) < count:
            power = z ** degree
            probes.append(BoundaryTrace(mesh, power.real))
            if len(probes) < count:
                probes.append(BoundaryTrace(mesh, power.imag))
            degree += 1
        return probes
    candidates = [x[:, 0], x[:, 1], x[:, 2], x[:, 0] * x[:, 1], x[:, 1] * x[:, 2], x[:, 0] * x[:, 2],
                  x[:, 0] ** 2 - x[:, 1] ** 2, x[:, 1] ** 2 - x[:, 2] ** 2]
    if count > len(candidates):
        raise ConfigError(f"at most {len(candidates)} harmonic probes are available in 3D")
    return [BoundaryTrace(mesh, values) for values in candidates[:count]]


def default_gamma_basis(mesh: Mesh) -> List[NDArray[np.float64]]:
    """[1, bump, x₁ − c₁, …] with the bump Π sin(π x̂_d) on the bounding box."""
    lower, upper = mesh.bounds
    scaled = (mesh.nodes - lower) / (upper - lower)
    basis = [np.ones(mesh.node_count), np.prod(np.sin(np.pi * scaled), axis=1)]
    basis.extend(scaled[:, d] - 0.5 for d in range(mesh.dimension))
    return basis


@dataclass(frozen=True, eq=False)
class GammaFit:
    gamma: ScalarField
    parameters: NDArray[np.float64]
    misfit: float
    iterations: int
    history: List[dict]

    def to_json(self) -> dict:
        return {"parameters": self.parameters.tolist(), "misfit": self.misfit, "iterations": self.iterations,
                "history": self.history}


def _model(mesh: Mesh, basis: NDArray, theta: NDArray, probes: NDArray):
    gamma = ScalarField(mesh, basis.T @ theta, name="gamma")
    w = ConductivitySolver(gamma).solve(probes)
    gram = w.T @ (stiffness_matrix(mesh, gamma.values) @ w)
    jacobian = np.stack([w.T @ (stiffness_matrix(mesh, b) @ w) for b in basis], axis=-1)
    return gram, jacobian


def fit_gamma_from_dtn(table: DtnFormTable, basis: Optional[Sequence[NDArray]] = None,
                       initial: Optional[Sequence[float]] = None, regularization: float = 1e-8,
                       max_iterations: int = 30, tolerance: float = 1e-8, mesh: Optional[Mesh] = None) -> GammaFit:
    """Gauss–Newton fit of γ = Σ θ_j b_j to the measured form with Tikhonov damping toward ``initial``.

    The Jacobian is exact: ∂/∂θ_j ⟨Λ h, h̃⟩ = ∫ b_j ∇w^h·∇w^{h̃}.
    """
    mesh = mesh or table.mesh
    if mesh is None:
        raise ConfigError("fit_gamma_from_dtn needs the mesh the probes live on")
    basis = np.stack(list(default_gamma_basis(mesh) if basis is None else basis))
    count = table.probe_count
    pairs = count * (count + 1) // 2
    if basis.shape[0] > pairs:
        raise ConfigError(f"{basis.shape[0]} parameters need at least as many probe pairs, have {pairs}")
    theta = np.zeros(basis.shape[0])
    if initial is None:
        theta[0] = 1.0
    else:
        theta = np.asarray(initial, dtype=float).copy()
    prior = theta.copy()
    upper = np.triu_indices(count)
    measured = table.gram[upper]
    scale = max(np.linalg.norm(measured), 1e-300)

    history = []
    for iteration in range(max_iterations + 1):
        model, jacobian = _model(mesh, basis, theta, table.probes)
        residual = model[upper] - measured
        misfit = float(np.linalg.norm(residual) / scale)
        history.append({"iteration": iteration, "misfit": misfit, "parameters": theta.tolist()})
        J = jacobian[upper]
        alpha = regularization * float(np.sum(J ** 2))
        lhs = J.T @ J + alpha * np.eye(theta.size)
        rhs = -(J.T @ residual + alpha * (theta - prior))
        step = linalg.solve(lhs, rhs, assume_a="pos")
        if misfit <= tolerance or np.linalg.norm(step) <= tolerance * (1.0 + np.linalg.norm(theta)):
            logger.info("Fitted gamma from DtN form", iterations=iteration, misfit=misfit,
                        parameters=theta.tolist())
            return GammaFit(ScalarField(mesh, basis.T @ theta, name="gamma_hat"), theta, misfit, iteration, history)
        length = 1.0
        while np.min(basis.T @ (theta + length * step)) <= 0:
            length *= 0.5
            if length < 1e-6:
                raise FitNotConvergedError("Gauss-Newton step cannot keep gamma positive", history)
        theta = theta + length * step

    logger.error("Gamma fit did not converge", iterations=max_iterations, misfit=history[-1]["misfit"])
    raise FitNotConvergedError(f"no convergence in {max_iterations} Gauss-Newton iterations", history)
