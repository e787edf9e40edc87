"""P1 finite element assembly and quadrature."""
from __future__ import annotations

from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from src.thermoeit.discretization.fields import BoundaryTrace, ScalarField, TensorField
from src.thermoeit.discretization.mesh import Mesh

Coefficient = Union[None, float, NDArray, ScalarField, TensorField]


def _element_coefficient(mesh: Mesh, coefficient: Coefficient) -> NDArray:
    """Element-averaged coefficient as an (E, n, n) tensor."""
    n = mesh.dimension
    count = mesh.elements.shape[0]
    if coefficient is None:
        return np.broadcast_to(np.eye(n), (count, n, n))
    if isinstance(coefficient, (ScalarField, TensorField)):
        coefficient = coefficient.values
    coefficient = np.asarray(coefficient, dtype=float)
    if coefficient.ndim == 0:
        return np.broadcast_to(float(coefficient) * np.eye(n), (count, n, n))
    averaged = coefficient[mesh.elements].mean(axis=1)
    if coefficient.ndim == 1:
        return averaged[:, None, None] * np.eye(n)
    return averaged


def _scatter(mesh: Mesh, local: NDArray) -> sp.csr_matrix:
    k = mesh.dimension + 1
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    size = mesh.node_count
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(size, size)).tocsr()


def stiffness_matrix(mesh: Mesh, coefficient: Coefficient = None) -> sp.csr_matrix:
    """Matrix of ``(u, v) -> ∫ C ∇u·∇v`` for a scalar or tensor coefficient C."""
    grads = mesh.element_gradients
    tensor = _element_coefficient(mesh, coefficient)
    local = np.einsum("eid,edf,ejf->eij", grads, tensor, grads) * mesh.element_volumes[:, None, None]
    return _scatter(mesh, local)


def mass_matrix(mesh: Mesh, weight: Optional[Union[float, NDArray, ScalarField]] = None) -> sp.csr_matrix:
    """Consistent mass matrix of ``(u, v) -> ∫ w u v`` with the weight averaged per element."""
    n = mesh.dimension
    if isinstance(weight, ScalarField):
        weight = weight.values
    if weight is None:
        scale = mesh.element_volumes
    elif np.ndim(weight) == 0:
        scale = float(weight) * mesh.element_volumes
    else:
        scale = np.asarray(weight, dtype=float)[mesh.elements].mean(axis=1) * mesh.element_volumes
    reference = (np.ones((n + 1, n + 1)) + np.eye(n + 1)) / ((n + 1) * (n + 2))
    return _scatter(mesh, scale[:, None, None] * reference)


def integrate_values(mesh: Mesh, values: NDArray) -> Union[float, complex]:
    values = np.asarray(values)
    return (mesh.element_volumes * values[mesh.elements].mean(axis=1)).sum()


def integrate(field: ScalarField) -> float:
    """Exact integral of the piecewise-linear interpolant."""
    return float(integrate_values(field.mesh, field.values))


def boundary_integral_values(mesh: Mesh, values: NDArray) -> Union[float, complex]:
    return (mesh.boundary_mass * np.asarray(values)).sum()


def boundary_integral(trace: BoundaryTrace) -> float:
    """Facet quadrature of the piecewise-linear trace over the boundary."""
    return float(np.real_if_close(boundary_integral_values(trace.mesh, trace.values)))


def lumped_projection(mesh: Mesh, element_values: NDArray) -> NDArray:
    """Nodal field with the same integral against each hat function as a piecewise constant one.

    Positivity and the total integral are preserved.
    """
    share = np.repeat(np.asarray(element_values, dtype=float) * mesh.element_volumes / (mesh.dimension + 1),
                      mesh.dimension + 1)
    loads = np.bincount(mesh.elements.ravel(), weights=share, minlength=mesh.node_count)
    return loads / mesh.lumped_mass


def variational_flux(mesh: Mesh, stiffness: sp.spmatrix, residual_mass: Optional[sp.spmatrix], u: NDArray,
                     rhs: Optional[NDArray] = None) -> NDArray:
    """Boundary flux g with ``∫ g v dS = a(u, v) − ∫ rhs v dx`` for boundary hat functions v.

    The functional is converted to nodal values with the lumped boundary mass.
    """
    functional = stiffness @ u
    if rhs is not None and residual_mass is not None:
        functional = functional - residual_mass @ rhs
    mass = mesh.boundary_mass if np.ndim(functional) == 1 else mesh.boundary_mass[:, None]
    return functional[mesh.boundary_nodes] / mass
