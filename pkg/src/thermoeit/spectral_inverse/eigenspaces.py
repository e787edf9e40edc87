"""Eigenspace matching from sampled kernels and related identifiability checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import linalg

from src.thermoeit.cgo.density import default_test_functions
from src.thermoeit.discretization import Mesh
from src.thermoeit.elliptic import SpectralData, WeightedOperator
from src.thermoeit.errors import ConfigError, RankDeficiencyError

SAMPLE_RANK_RTOL = 1e-10


def trace_independence(mesh: Mesh, traces: NDArray) -> float:
    """Smallest singular value of the rows of ``traces`` after normalizing each in the boundary norm."""
    traces = np.atleast_2d(np.asarray(traces, dtype=float))
    weighted = traces * np.sqrt(mesh.boundary_mass)
    norms = np.linalg.norm(weighted, axis=1)
    if np.any(norms == 0):
        return 0.0
    return float(linalg.svd(weighted / norms[:, None], compute_uv=False)[-1])


def flux_independence_check(spectral: SpectralData, cluster: int) -> float:
    """Normalized σ_min of the flux traces ν·A∇φ_k over one eigenvalue cluster."""
    clusters = spectral.clusters
    if not 0 <= cluster < len(clusters):
        raise ConfigError(f"cluster index {cluster} outside [0, {len(clusters)})")
    members = clusters[cluster]
    sigma = trace_independence(spectral.mesh, spectral.flux_traces[:, members].T)
    logger.debug("Flux independence", cluster=cluster, multiplicity=members.size, sigma_min=sigma)
    return sigma


@dataclass(frozen=True)
class EigenspaceMatch:
    """F = T G on interior samples, with the boundary points used to build T."""

    transform: NDArray[np.float64]
    boundary_points: NDArray[np.int64]
    interior_defect: float
    boundary_defect: float
    orthogonality_defect: float
    condition_number: float

    def to_json(self) -> dict:
        return {
            "transform": self.transform.tolist(),
            "boundary_points": self.boundary_points.tolist(),
            "interior_defect": self.interior_defect,
            "boundary_defect": self.boundary_defect,
            "orthogonality_defect": self.orthogonality_defect,
            "condition_number": self.condition_number,
        }


def _check_rank(samples: NDArray, m: int, label: str):
    values = linalg.svd(samples, compute_uv=False)
    if values.size < m or values[0] == 0 or values[m - 1] <= SAMPLE_RANK_RTOL * values[0]:
        logger.error("Sampled factor is rank deficient", factor=label, singular_values=values[:m].tolist())
        raise RankDeficiencyError(f"{label} samples have rank below {m}", values)


def select_boundary_points(samples: NDArray, m: int) -> NDArray[np.int64]:
    """Greedy column pivoting: each pick maximizes the growth of |det Q|."""
    _, _, pivots = linalg.qr(samples.T, mode="economic", pivoting=True)
    return np.sort(pivots[:m])


def match_eigenspaces(samples_f: Tuple[NDArray, NDArray], samples_g: Tuple[NDArray, NDArray],
                      m: int) -> EigenspaceMatch:
    """Find T with F(x) = T G(x) from two factorizations of one sampled kernel.

    Each argument is ``(interior, boundary)`` with one column per function, i.e.
    shapes (N_x, m) and (N_y, m), so that K(x, y) = F(x)·F̃(y) = G(x)·G̃(y).
    """
    f_inner, f_boundary = (np.asarray(a, dtype=float) for a in samples_f)
    g_inner, g_boundary = (np.asarray(a, dtype=float) for a in samples_g)
    if f_inner.shape[1] != m or g_inner.shape[1] != m or f_boundary.shape[1] != m or g_boundary.shape[1] != m:
        raise ConfigError(f"every sample block needs {m} columns")
    for samples, label in ((f_inner, "F"), (f_boundary, "F~"), (g_inner, "G"), (g_boundary, "G~")):
        _check_rank(samples, m, label)

    points = select_boundary_points(f_boundary, m)
    q_f, q_g = f_boundary[points], g_boundary[points]
    transform = linalg.solve(q_f, q_g)
    condition = float(np.linalg.cond(transform))

    interior_defect = float(np.linalg.norm(f_inner - g_inner @ transform.T) / np.linalg.norm(f_inner))
    boundary_defect = float(np.linalg.norm(f_boundary - g_boundary @ linalg.inv(transform))
                            / np.linalg.norm(f_boundary))
    orthogonality = float(np.linalg.norm(transform.T @ transform - np.eye(m)))
    logger.debug("Matched eigenspaces", m=m, interior_defect=interior_defect, boundary_defect=boundary_defect,
                 orthogonality_defect=orthogonality, condition=condition)
    return EigenspaceMatch(transform, points, interior_defect, boundary_defect, orthogonality, condition)


def _weighted_norm(operator: WeightedOperator, values: NDArray) -> float:
    return float(np.sqrt(np.sum(operator.mesh.lumped_mass * values ** 2)))


def operator_consistency_check(first: WeightedOperator, second: WeightedOperator,
                               tests: Optional[Sequence[NDArray]] = None) -> float:
    """max ‖P₁u − P₂u‖ / ‖P₁u‖ over compactly supported smooth test fields."""
    if first.mesh is not second.mesh:
        raise ConfigError("operator consistency needs both operators on one mesh")
    tests = default_test_functions(first.mesh) if tests is None else tests
    worst = 0.0
    for u in tests:
        reference = first.apply(u)
        scale = _weighted_norm(first, reference)
        if scale == 0:
            continue
        worst = max(worst, _weighted_norm(first, reference - second.apply(u)) / scale)
    logger.debug("Operator consistency", tests=len(tests), defect=worst)
    return worst
