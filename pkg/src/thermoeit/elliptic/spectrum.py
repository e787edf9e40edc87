"""Dirichlet spectrum of the weighted operator P."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import scipy.linalg
from loguru import logger
from numpy.typing import NDArray
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from src.thermoeit.discretization import BoundaryTrace, Mesh, ScalarField
from src.thermoeit.elliptic.operator import WeightedOperator
from src.thermoeit.errors import EigenSolverError, InsufficientModesError

DENSE_LIMIT = 3000
DEFAULT_CLUSTER_RTOL = 1e-6
EIGEN_SEED = 7


def cluster_indices(values: NDArray, rtol: float) -> NDArray[np.int64]:
    """Cluster label per ascending value; neighbours within ``rtol`` relative share a label."""
    labels = np.zeros(len(values), dtype=np.int64)
    for k in range(1, len(values)):
        same = abs(values[k] - values[k - 1]) <= rtol * abs(values[k])
        labels[k] = labels[k - 1] if same else labels[k - 1] + 1
    return labels


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenpairs of P with eigenvalues ascending.

    ``eigenvectors`` holds nodal values (zero on the boundary), one column per
    eigenvalue, orthonormal in the κ⁻¹-weighted mass. ``flux_traces`` holds the
    variational ν·A∇φ_k at boundary nodes, one column per eigenvalue.
    """

    mesh: Mesh
    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.float64]
    flux_traces: NDArray[np.float64]
    labels: NDArray[np.int64]
    operator: Optional[WeightedOperator] = None

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    @property
    def clusters(self) -> List[NDArray[np.int64]]:
        return [np.flatnonzero(self.labels == c) for c in range(int(self.labels.max()) + 1)]

    @property
    def multiplicities(self) -> List[int]:
        return [len(c) for c in self.clusters]

    @property
    def cluster_values(self) -> NDArray[np.float64]:
        return np.array([self.eigenvalues[c].mean() for c in self.clusters])

    def eigenfunction(self, k: int) -> ScalarField:
        return ScalarField(self.mesh, self.eigenvectors[:, k], name=f"phi_{k + 1}")

    def flux_trace(self, k: int) -> BoundaryTrace:
        return BoundaryTrace(self.mesh, self.flux_traces[:, k])

    def coefficients(self, source: NDArray) -> NDArray:
        """d_k = (source, φ_k) in L²_κ for nodal ``source`` (or a column block)."""
        source = source.values if isinstance(source, ScalarField) else np.asarray(source)
        return self.eigenvectors.T @ (self.operator.mass @ source)

    def truncated(self, count: int) -> "SpectralData":
        return SpectralData(self.mesh, self.eigenvalues[:count], self.eigenvectors[:, :count],
                            self.flux_traces[:, :count], self.labels[:count], self.operator)

    def to_json(self) -> Dict[str, Any]:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "multiplicities": self.multiplicities,
            "flux_traces": self.flux_traces.T.tolist(),
        }


def _dense_pairs(operator: WeightedOperator, count: int):
    k = operator.interior_stiffness.toarray()
    m = operator.interior_mass.toarray()
    try:
        return scipy.linalg.eigh(k, m, subset_by_index=[0, count - 1])
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(f"dense eigensolve failed: {e}") from e


def _sparse_pairs(operator: WeightedOperator, count: int):
    size = operator.mesh.interior_node_count
    v0 = np.random.default_rng(EIGEN_SEED).standard_normal(size)
    try:
        values, vectors = eigsh(operator.interior_stiffness, k=count, M=operator.interior_mass,
                                sigma=0.0, which="LM", v0=v0, tol=1e-12)
    except (ArpackNoConvergence, ArpackError) as e:
        raise EigenSolverError(f"shift-invert Lanczos did not converge: {e}") from e
    order = np.argsort(values)
    values, vectors = values[order], vectors[:, order]
    # M-orthonormalize so weighted orthonormality holds to rounding
    gram = vectors.T @ (operator.interior_mass @ vectors)
    factor = np.linalg.cholesky(gram)
    vectors = scipy.linalg.solve_triangular(factor, vectors.T, lower=True).T
    return values, vectors


def dirichlet_spectrum(operator: WeightedOperator, count: int,
                       cluster_rtol: float = DEFAULT_CLUSTER_RTOL) -> SpectralData:
    """Lowest ``count`` eigenpairs of P, extended to close the last multiplicity cluster."""
    mesh = operator.mesh
    size = mesh.interior_node_count
    if count < 1:
        raise InsufficientModesError("count must be >= 1", tail=float("nan"))
    if count > size:
        raise InsufficientModesError(f"requested {count} modes but only {size} interior nodes", tail=float("nan"))
    padded = min(count + 4, size if size <= DENSE_LIMIT else size - 1)
    if size <= DENSE_LIMIT:
        values, vectors = _dense_pairs(operator, padded)
    else:
        values, vectors = _sparse_pairs(operator, padded)

    labels = cluster_indices(values, cluster_rtol)
    keep = count
    while keep < padded and labels[keep] == labels[count - 1]:
        keep += 1
    values, vectors, labels = values[:keep], vectors[:, :keep], labels[:keep]

    # fix signs so the largest-magnitude entry is positive
    pivots = np.argmax(np.abs(vectors), axis=0)
    vectors = vectors * np.sign(vectors[pivots, np.arange(keep)])

    full = np.zeros((mesh.node_count, keep))
    full[mesh.interior_nodes] = vectors
    fluxes = operator.flux(full, full * values)
    if values[0] <= 0:
        raise EigenSolverError(f"non-positive lowest eigenvalue {values[0]:.6g}")
    logger.debug("Computed Dirichlet spectrum", modes=keep, lowest=float(values[0]),
                 clusters=int(labels.max()) + 1, solver="dense" if size <= DENSE_LIMIT else "shift-invert")
    return SpectralData(mesh, values, full, fluxes, labels, operator)
