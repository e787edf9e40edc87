"""Recovery of κ from Dirichlet eigenpairs of P = κ∇·A∇."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import linalg
from scipy.spatial import cKDTree

from src.thermoeit.discretization import Mesh, ScalarField, TensorField, mass_matrix, stiffness_matrix
from src.thermoeit.elliptic import SpectralData
from src.thermoeit.errors import ConfigError, IdentificationError

PARSEVAL_TOLERANCE = 1e-3
DENOMINATOR_FLOOR = 0.1


@dataclass(frozen=True, eq=False)
class KappaEstimate:
    field: ScalarField
    count: int
    estimator: str
    tail: float
    suggested_count: Optional[int] = None
    iterations: int = 0

    def to_json(self) -> dict:
        return {"count": self.count, "estimator": self.estimator, "tail": self.tail,
                "suggested_count": self.suggested_count, "iterations": self.iterations,
                "min": float(self.field.values.min()), "max": float(self.field.values.max())}


def series_coefficients(spectral: SpectralData) -> NDArray[np.float64]:
    """c_k = ∫Ω φ_k dx."""
    return spectral.eigenvectors.T @ spectral.mesh.lumped_mass


def flux_coefficients(spectral: SpectralData) -> NDArray[np.float64]:
    """b_k = (1, φ_k)_{L²_κ} = −λ_k⁻¹ ∫∂Ω ν·A∇φ_k dS."""
    return -(spectral.flux_traces.T @ spectral.mesh.boundary_mass) / spectral.eigenvalues


def fill_from_bulk(mesh: Mesh, values: NDArray, reliable: NDArray[np.bool_]) -> NDArray:
    """Replace unreliable nodal values with the value at the nearest reliable node."""
    if np.all(reliable):
        return values
    if not np.any(reliable):
        raise ConfigError("no reliable nodes to fill from")
    tree = cKDTree(mesh.nodes[reliable])
    _, nearest = tree.query(mesh.nodes[~reliable])
    filled = values.copy()
    filled[~reliable] = values[reliable][nearest]
    return filled


def ratio_field(mesh: Mesh, numerator: NDArray, denominator: NDArray,
                floor: float = DENOMINATOR_FLOOR) -> NDArray:
    """numerator / denominator where |denominator| ≥ floor·max, nearest-node filled elsewhere."""
    reliable = np.abs(denominator) >= floor * np.abs(denominator).max()
    values = np.zeros(mesh.node_count)
    values[reliable] = numerator[reliable] / denominator[reliable]
    return fill_from_bulk(mesh, values, reliable)


def _suggested_count(count: int, tail: float, tolerance: float) -> int:
    # the tail of a boundary-layer series decays roughly like 1/K
    return int(math.ceil(count * tail / tolerance))


def recover_kappa(spectral: SpectralData, count: Optional[int] = None, estimator: str = "series",
                  tail_tolerance: float = PARSEVAL_TOLERANCE) -> KappaEstimate:
    """κ̂ = Σ_{k≤K} c_k φ_k, or the ratio Σ c_k φ_k / Σ b_k φ_k.

    The tail Σ_{k>K} c_k² is the Parseval defect against ∫κ; a tail above
    ``tail_tolerance`` is logged with a suggested K.
    """
    count = spectral.count if count is None else count
    if not 1 <= count <= spectral.count:
        raise ConfigError(f"count must be in [1, {spectral.count}], got {count}")
    spectral = spectral.truncated(count)
    mesh = spectral.mesh
    c = series_coefficients(spectral)
    series = spectral.eigenvectors @ c
    total = float(spectral.operator.kappa.values @ mesh.lumped_mass) if spectral.operator is not None else None
    tail = max(0.0, (total - float(c @ c)) / total) if total else float("nan")

    if estimator == "series":
        values = series
    elif estimator == "ratio":
        values = ratio_field(mesh, series, spectral.eigenvectors @ flux_coefficients(spectral))
    else:
        raise ConfigError(f"unknown kappa estimator {estimator!r}")

    suggested = None
    if np.isfinite(tail) and tail > tail_tolerance:
        suggested = _suggested_count(count, tail, tail_tolerance)
        logger.warning("Kappa series truncated early", count=count, tail=tail, suggested_count=suggested)
    logger.debug("Recovered kappa", estimator=estimator, count=count, tail=tail)
    return KappaEstimate(ScalarField(mesh, values, name="kappa_hat"), count, estimator, tail, suggested)


def bulk_error(estimate: ScalarField, truth: ScalarField, margin: float = 0.2) -> float:
    """Relative L² error over nodes at least ``margin`` (domain-size fraction) inside the boundary."""
    mesh = estimate.mesh
    lower, upper = mesh.bounds
    inset = margin * (upper - lower)
    if mesh.shape == "disk":
        center = 0.5 * (lower + upper)
        inside = np.linalg.norm(mesh.nodes - center, axis=1) <= mesh.radius * (1.0 - 2.0 * margin)
    else:
        inside = np.all((mesh.nodes >= lower + inset) & (mesh.nodes <= upper - inset), axis=1)
    weights = mesh.lumped_mass[inside]
    difference = estimate.values[inside] - truth.values[inside]
    return float(np.sqrt(np.sum(weights * difference ** 2) / np.sum(weights * truth.values[inside] ** 2)))


@dataclass(frozen=True)
class ScaledCluster:
    """One recovered cluster: rate λ, scaled eigenfunctions Ψ̃ (N, m) and flux traces V (m, B).

    The true eigenfunctions are Φ = Ψ̃R for an unknown invertible R, with flux traces R⁻¹V.
    """

    rate: float
    functions: NDArray[np.float64]
    traces: NDArray[np.float64]


def _cluster_gram(mesh: Mesh, cluster: ScaledCluster, stiffness, mass) -> NDArray[np.float64]:
    """(RRᵀ)⁻¹ from flux(Ψ̃) = Vᵀ(RRᵀ)⁻¹, with flux(Ψ̃) taken from the conormal derivative."""
    psi, boundary = cluster.functions, mesh.boundary_nodes
    flux = (stiffness @ psi - cluster.rate * (mass @ psi))[boundary] / mesh.boundary_mass[:, None]
    weighted = cluster.traces * mesh.boundary_mass
    gram = linalg.solve(weighted @ cluster.traces.T, weighted @ flux, assume_a="pos")
    return 0.5 * (gram + gram.T)


def kappa_from_scaled_modes(mesh: Mesh, clusters: Sequence[ScaledCluster],
                            boundary_tensor: Optional[TensorField] = None, kappa_mean: Optional[float] = None,
                            iterations: int = 20, tolerance: float = 1e-10,
                            floor: float = DENOMINATOR_FLOOR) -> KappaEstimate:
    """Ratio estimate of κ from eigenfunctions known up to an invertible map per cluster.

    Per cluster Σ b_l φ_l = −λ⁻¹ Ψ̃ (∫∂Ω V)ᵀ does not depend on R. The numerator
    Σ c_l φ_l = Ψ̃ RRᵀ (∫Ψ̃)ᵀ needs RRᵀ, which follows from comparing V with the
    conormal flux of Ψ̃ under the boundary tensor. That flux carries a small κ-dependent
    mass term on boundary rows, so the estimate is iterated from a constant start.
    With ``kappa_mean`` the converged field is rescaled to that mean, which amounts to
    trusting the shape of the boundary tensor but not its scale.
    """
    if not clusters:
        raise IdentificationError("no recovered eigenfunction clusters to build kappa from")
    tensor = boundary_tensor or TensorField.identity(mesh)
    stiffness = stiffness_matrix(mesh, tensor)
    denominator = np.zeros(mesh.node_count)
    for cluster in clusters:
        denominator -= cluster.functions @ (cluster.traces @ mesh.boundary_mass) / cluster.rate

    kappa = np.ones(mesh.node_count)
    change, iteration = np.inf, 0
    for iteration in range(1, iterations + 1):
        mass = mass_matrix(mesh, 1.0 / kappa)
        numerator = np.zeros(mesh.node_count)
        for cluster in clusters:
            psi = cluster.functions
            gram = _cluster_gram(mesh, cluster, stiffness, mass)
            numerator += psi @ linalg.solve(gram, psi.T @ mesh.lumped_mass)
        updated = ratio_field(mesh, numerator, denominator, floor)
        if np.min(updated) <= 0:
            logger.warning("Kappa iterate lost positivity; clipping", min=float(updated.min()))
            updated = np.maximum(updated, 1e-3 * np.abs(updated).max())
        change = float(np.max(np.abs(updated - kappa)) / np.max(np.abs(updated)))
        kappa = updated
        if change <= tolerance:
            break
    else:
        logger.warning("Kappa iteration stopped before converging", change=change)
    if kappa_mean is not None:
        kappa = kappa * (kappa_mean * mesh.volume / float(kappa @ mesh.lumped_mass))
    logger.info("Recovered kappa from scaled modes", clusters=len(clusters), iterations=iteration, change=change)
    return KappaEstimate(ScalarField(mesh, kappa, name="kappa_hat"), sum(c.functions.shape[1] for c in clusters),
                         "ratio", float("nan"), iterations=iteration)
