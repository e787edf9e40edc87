"""The weighted operator P = −κ∇·(A∇·) with homogeneous Dirichlet conditions."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp
from loguru import logger
from numpy.typing import NDArray
from scipy.sparse.linalg import splu

from src.thermoeit.discretization import (
    BoundaryTrace,
    Mesh,
    ScalarField,
    TensorField,
    mass_matrix,
    stiffness_matrix,
    variational_flux,
)
from src.thermoeit.errors import InvalidCoefficientError, SingularSystemError

SOLVER_RTOL = 1e-10


def _as_nodal(mesh: Mesh, values) -> NDArray:
    if isinstance(values, ScalarField):
        if values.mesh is not mesh:
            raise InvalidCoefficientError("field lives on a different mesh")
        return values.values
    values = np.asarray(values)
    if values.shape[0] == mesh.interior_node_count and mesh.interior_node_count != mesh.node_count:
        full = np.zeros((mesh.node_count,) + values.shape[1:], dtype=values.dtype)
        full[mesh.interior_nodes] = values
        return full
    if values.shape[0] != mesh.node_count:
        raise InvalidCoefficientError(f"expected {mesh.node_count} nodal values, got {values.shape[0]}")
    return values


def lu_solve(lu, rhs: NDArray) -> NDArray:
    if np.iscomplexobj(rhs):
        return lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))
    return lu.solve(np.ascontiguousarray(rhs, dtype=float))


def factorize(matrix: sp.spmatrix):
    try:
        return splu(sp.csc_matrix(matrix))
    except RuntimeError as e:
        raise SingularSystemError(f"factorization failed: {e}") from e


@dataclass(frozen=True, eq=False)
class WeightedOperator:
    """Discrete P acting on interior nodes.

    ``stiffness`` is the A-weighted stiffness matrix and ``mass`` the κ⁻¹-weighted
    consistent mass matrix, both over all nodes. Restricted to interior nodes they
    define ``P = M⁻¹K``, which is self-adjoint in the discrete L²_κ inner product.
    """

    mesh: Mesh
    kappa: ScalarField
    tensor: TensorField
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix

    @cached_property
    def _interior(self):
        idx = self.mesh.interior_nodes
        return self.stiffness[idx][:, idx].tocsc(), self.mass[idx][:, idx].tocsc()

    @property
    def interior_stiffness(self) -> sp.csc_matrix:
        return self._interior[0]

    @property
    def interior_mass(self) -> sp.csc_matrix:
        return self._interior[1]

    @cached_property
    def _stiffness_lu(self):
        return factorize(self.interior_stiffness)

    @cached_property
    def _mass_lu(self):
        return factorize(self.interior_mass)

    def inner(self, u, v) -> float:
        """Discrete (u, v) in L²(Ω, κ⁻¹dx)."""
        u, v = _as_nodal(self.mesh, u), _as_nodal(self.mesh, v)
        return u @ (self.mass @ v)

    def energy(self, u, v) -> float:
        """∫ A∇u·∇v."""
        u, v = _as_nodal(self.mesh, u), _as_nodal(self.mesh, v)
        return u @ (self.stiffness @ v)

    def solve_mass(self, rhs: NDArray) -> NDArray:
        """Interior solve with the weighted mass matrix."""
        return lu_solve(self._mass_lu, rhs)

    def apply(self, u) -> NDArray:
        """P u for a field vanishing on the boundary, returned as nodal values."""
        u = _as_nodal(self.mesh, u)
        idx = self.mesh.interior_nodes
        result = np.zeros(u.shape, dtype=np.result_type(u, float))
        result[idx] = lu_solve(self._mass_lu, np.asarray(self.stiffness @ u)[idx])
        return result

    def solve_inverse(self, source) -> NDArray:
        """u with P u = source and u = 0 on the boundary."""
        source = _as_nodal(self.mesh, source)
        idx = self.mesh.interior_nodes
        rhs = np.asarray(self.mass @ source)[idx]
        u = np.zeros(self.mesh.node_count, dtype=np.result_type(source, float))
        if not np.any(rhs):
            return u
        u[idx] = lu_solve(self._stiffness_lu, rhs)
        residual = np.linalg.norm(self.interior_stiffness @ u[idx] - rhs) / np.linalg.norm(rhs)
        if residual > SOLVER_RTOL:
            raise SingularSystemError(f"P inverse residual {residual:.3g} above {SOLVER_RTOL}")
        return u

    def flux(self, u, source=None) -> NDArray:
        """Variational flux ν·A∇u of a field with P u = source in the interior."""
        u = _as_nodal(self.mesh, u)
        source = None if source is None else _as_nodal(self.mesh, source)
        return variational_flux(self.mesh, self.stiffness, self.mass, u, source)

    def scaled_kappa(self, factor: float) -> "WeightedOperator":
        kappa = ScalarField(self.mesh, self.kappa.values * factor, name=self.kappa.name)
        return assemble_P(kappa, self.tensor)


def assemble_P(kappa: ScalarField, tensor: TensorField) -> WeightedOperator:
    if kappa.mesh is not tensor.mesh:
        raise InvalidCoefficientError("kappa and A must share a mesh")
    if kappa.values.min() <= 0:
        raise InvalidCoefficientError(f"kappa must be positive, min is {kappa.values.min():.6g}")
    mesh = kappa.mesh
    stiffness = stiffness_matrix(mesh, tensor)
    mass = mass_matrix(mesh, 1.0 / kappa.values)
    logger.debug("Assembled weighted operator", nodes=mesh.node_count, interior=mesh.interior_node_count,
                 nnz=stiffness.nnz)
    return WeightedOperator(mesh, kappa, tensor, stiffness, mass)


def solve_P_inverse(operator: WeightedOperator, source) -> ScalarField:
    return ScalarField(operator.mesh, operator.solve_inverse(source), name="P_inverse")


def neumann_flux(tensor: TensorField, u: ScalarField, rhs: Optional[ScalarField] = None) -> BoundaryTrace:
    """Variational flux ν·A∇u for ``−∇·(A∇u) = rhs`` in the interior."""
    mesh = tensor.mesh
    if u.mesh is not mesh or (rhs is not None and rhs.mesh is not mesh):
        raise InvalidCoefficientError("flux inputs must share a mesh")
    stiffness = stiffness_matrix(mesh, tensor)
    mass = mass_matrix(mesh) if rhs is not None else None
    values = variational_flux(mesh, stiffness, mass, u.values, None if rhs is None else rhs.values)
    return BoundaryTrace(mesh, values)
