"""Conductivity equation ∇·γ∇w = 0 and its Dirichlet-to-Neumann map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from src.thermoeit.discretization import BoundaryTrace, Mesh, ScalarField, stiffness_matrix
from src.thermoeit.elliptic.operator import SOLVER_RTOL, factorize, lu_solve
from src.thermoeit.errors import InvalidCoefficientError, SingularSystemError


class ConductivitySolver:
    """Factorized Dirichlet problem for one γ; reusable across boundary data."""

    def __init__(self, gamma: ScalarField):
        if gamma.values.min() <= 0:
            raise InvalidCoefficientError(f"gamma must be positive, min is {gamma.values.min():.6g}")
        self.gamma = gamma
        self.mesh = gamma.mesh
        self.stiffness = stiffness_matrix(self.mesh, gamma.values)
        interior, boundary = self.mesh.interior_nodes, self.mesh.boundary_nodes
        self._k_ii = self.stiffness[interior][:, interior].tocsc()
        self._k_ib = self.stiffness[interior][:, boundary].tocsc()
        self._lu = factorize(self._k_ii) if interior.size else None

    def solve(self, h) -> NDArray:
        """Nodal solution for boundary values ``h`` (real or complex, or a (B, m) block)."""
        h = h.values if isinstance(h, BoundaryTrace) else np.asarray(h)
        if h.shape[0] != self.mesh.boundary_nodes.size:
            raise InvalidCoefficientError("boundary data has the wrong length")
        u = np.zeros((self.mesh.node_count,) + h.shape[1:], dtype=np.result_type(h, float))
        u[self.mesh.boundary_nodes] = h
        if self._lu is None:
            return u
        rhs = -(self._k_ib @ h)
        u[self.mesh.interior_nodes] = lu_solve(self._lu, rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0:
            residual = np.linalg.norm(self._k_ii @ u[self.mesh.interior_nodes] - rhs) / scale
            if residual > SOLVER_RTOL:
                raise SingularSystemError(f"conductivity residual {residual:.3g} above {SOLVER_RTOL}")
        return u

    def flux(self, u: NDArray) -> NDArray:
        """Variational current γ∂_ν u at boundary nodes."""
        functional = self.stiffness @ u
        m = self.mesh.boundary_mass
        return functional[self.mesh.boundary_nodes] / (m if functional.ndim == 1 else m[:, None])


def solve_conductivity(gamma: ScalarField, h: BoundaryTrace) -> ScalarField:
    return ScalarField(gamma.mesh, ConductivitySolver(gamma).solve(h), name="w0")


@dataclass(frozen=True, eq=False)
class DtNMap:
    """Discrete Λ_γ acting on boundary nodal values.

    ``schur`` is the Schur complement S of the stiffness matrix onto the boundary,
    so that ⟨Λh, h̃⟩ = hᵀ S h̃ in the lumped boundary inner product, and
    ``matrix`` = diag(m)⁻¹ S maps h to the variational current.
    """

    mesh: Mesh
    gamma: ScalarField
    schur: NDArray[np.float64]

    @property
    def matrix(self) -> NDArray[np.float64]:
        return self.schur / self.mesh.boundary_mass[:, None]

    def apply(self, h) -> BoundaryTrace:
        h = h.values if isinstance(h, BoundaryTrace) else np.asarray(h)
        return BoundaryTrace(self.mesh, self.matrix @ h)

    def form(self, h, h_tilde) -> float:
        h = h.values if isinstance(h, BoundaryTrace) else np.asarray(h)
        h_tilde = h_tilde.values if isinstance(h_tilde, BoundaryTrace) else np.asarray(h_tilde)
        return float(h @ self.schur @ h_tilde)

    def gram(self, probes) -> NDArray[np.float64]:
        block = np.stack([p.values if isinstance(p, BoundaryTrace) else np.asarray(p) for p in probes], axis=1)
        return block.T @ self.schur @ block


def dtn_map(gamma: ScalarField) -> DtNMap:
    solver = ConductivitySolver(gamma)
    mesh = gamma.mesh
    basis = np.eye(mesh.boundary_nodes.size)
    harmonic = solver.solve(basis)
    schur = (solver.stiffness @ harmonic)[mesh.boundary_nodes]
    schur = 0.5 * (schur + schur.T)
    logger.debug("Assembled DtN map", boundary_nodes=mesh.boundary_nodes.size)
    return DtNMap(mesh, gamma, schur)

