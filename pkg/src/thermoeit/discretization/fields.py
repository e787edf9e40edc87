"""Nodal P1 fields: scalar coefficients, symmetric tensor fields and boundary traces."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

from src.thermoeit.discretization.mesh import Mesh
from src.thermoeit.errors import InvalidCoefficientError

SYMMETRY_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class ScalarField:
    mesh: Mesh
    values: NDArray[np.float64]
    lower_bound: Optional[float] = None
    name: str = "field"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.node_count,):
            raise InvalidCoefficientError(
                f"{self.name}: expected {self.mesh.node_count} nodal values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidCoefficientError(f"{self.name}: non-finite nodal values")
        if self.lower_bound is not None and values.min() < self.lower_bound:
            raise InvalidCoefficientError(
                f"{self.name}: minimum {values.min():.6g} below lower bound {self.lower_bound:.6g}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[NDArray], NDArray], lower_bound: Optional[float] = None,
                      name: str = "field") -> "ScalarField":
        values = np.broadcast_to(np.asarray(func(mesh.nodes), dtype=float), (mesh.node_count,)).copy()
        return cls(mesh, values, lower_bound, name)

    @classmethod
    def constant(cls, mesh: Mesh, value: float, lower_bound: Optional[float] = None,
                 name: str = "field") -> "ScalarField":
        return cls(mesh, np.full(mesh.node_count, float(value)), lower_bound, name)

    @property
    def interior_values(self) -> NDArray[np.float64]:
        return self.values[self.mesh.interior_nodes]

    @property
    def boundary_values(self) -> NDArray[np.float64]:
        return self.values[self.mesh.boundary_nodes]

    def element_means(self) -> NDArray[np.float64]:
        return self.values[self.mesh.elements].mean(axis=1)

    def gradient(self) -> NDArray[np.float64]:
        """Piecewise constant gradient, shape (E, n)."""
        return np.einsum("ei,eid->ed", self.values[self.mesh.elements], self.mesh.element_gradients)

    def with_values(self, values: NDArray, name: Optional[str] = None) -> "ScalarField":
        return ScalarField(self.mesh, values, None, name or self.name)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Symmetric, uniformly elliptic matrix field stored at nodes, shape (N, n, n).

    Values are symmetrised on construction so the stored field is exactly symmetric.
    ``c0`` is the declared ellipticity constant; when omitted, the smallest nodal
    eigenvalue is used and must be positive.
    """

    mesh: Mesh
    values: NDArray[np.float64]
    c0: Optional[float] = None
    name: str = "tensor"

    def __post_init__(self):
        n = self.mesh.dimension
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.node_count, n, n):
            raise InvalidCoefficientError(
                f"{self.name}: expected shape {(self.mesh.node_count, n, n)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidCoefficientError(f"{self.name}: non-finite entries")
        asymmetry = np.abs(values - values.transpose(0, 2, 1)).max()
        if asymmetry > SYMMETRY_TOLERANCE * max(1.0, np.abs(values).max()):
            raise InvalidCoefficientError(f"{self.name}: not symmetric (max asymmetry {asymmetry:.3g})")
        values = 0.5 * (values + values.transpose(0, 2, 1))
        smallest = float(np.linalg.eigvalsh(values).min())
        if smallest <= 0:
            raise InvalidCoefficientError(f"{self.name}: not positive definite (min eigenvalue {smallest:.6g})")
        if self.c0 is not None and smallest < self.c0 * (1 - 1e-12):
            raise InvalidCoefficientError(
                f"{self.name}: min eigenvalue {smallest:.6g} below ellipticity constant {self.c0:.6g}")
        object.__setattr__(self, "values", values)
        if self.c0 is None:
            object.__setattr__(self, "c0", smallest)

    @classmethod
    def constant(cls, mesh: Mesh, matrix, c0: Optional[float] = None, name: str = "tensor") -> "TensorField":
        matrix = np.asarray(matrix, dtype=float)
        return cls(mesh, np.broadcast_to(matrix, (mesh.node_count,) + matrix.shape).copy(), c0, name)

    @classmethod
    def identity(cls, mesh: Mesh) -> "TensorField":
        return cls.constant(mesh, np.eye(mesh.dimension), name="identity")

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[NDArray], NDArray], c0: Optional[float] = None,
                      name: str = "tensor") -> "TensorField":
        return cls(mesh, np.asarray(func(mesh.nodes), dtype=float), c0, name)

    @classmethod
    def isotropic(cls, scalar: ScalarField) -> "TensorField":
        n = scalar.mesh.dimension
        return cls(scalar.mesh, scalar.values[:, None, None] * np.eye(n), name=scalar.name)

    def element_means(self) -> NDArray[np.float64]:
        return self.values[self.mesh.elements].mean(axis=1)

    def scaled(self, factor: float) -> "TensorField":
        return TensorField(self.mesh, self.values * factor, None, self.name)


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Values at ``mesh.boundary_nodes``, in that order."""

    mesh: Mesh
    values: NDArray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape[0] != self.mesh.boundary_nodes.size:
            raise InvalidCoefficientError(
                f"boundary trace needs {self.mesh.boundary_nodes.size} values, got {values.shape[0]}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, mesh: Mesh, func: Callable[[NDArray], NDArray]) -> "BoundaryTrace":
        return cls(mesh, np.asarray(func(mesh.boundary_coordinates)))

    def extend_by_zero(self) -> NDArray:
        full = np.zeros(self.mesh.node_count, dtype=self.values.dtype)
        full[self.mesh.boundary_nodes] = self.values
        return full
