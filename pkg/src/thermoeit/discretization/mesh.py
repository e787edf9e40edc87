"""Simplicial meshes of boxes and disks with tagged boundary facets.

Meshes are immutable once built. Geometry that every solver needs (element
volumes, barycentric gradients, the lumped boundary mass and outward normals)
is computed lazily and cached on the instance.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional, Sequence

import numpy as np
from loguru import logger
from numpy.typing import NDArray

from src.thermoeit.errors import MeshError

GEOMETRIC_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 simplicial mesh.

    Args:
        dimension: 2 (triangles) or 3 (tetrahedra).
        nodes: Node coordinates, shape (N, n).
        elements: Positively oriented simplices, shape (E, n+1).
        boundary_facets: Facets owned by exactly one element, shape (F, n).
        facet_normals: Outward unit normals, shape (F, n).
        facet_measures: Facet lengths (2D) or areas (3D), shape (F,).
        shape: ``"box"`` or ``"disk"``; used to project points onto the domain.
        bounds: Axis-aligned bounding box, shape (2, n).
        radius: Disk radius when ``shape == "disk"``.
    """

    dimension: int
    nodes: NDArray[np.float64]
    elements: NDArray[np.int64]
    boundary_facets: NDArray[np.int64]
    facet_normals: NDArray[np.float64]
    facet_measures: NDArray[np.float64]
    shape: str = "box"
    bounds: NDArray[np.float64] = field(default=None)
    radius: Optional[float] = None

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @cached_property
    def boundary_nodes(self) -> NDArray[np.int64]:
        return np.unique(self.boundary_facets)

    @cached_property
    def interior_nodes(self) -> NDArray[np.int64]:
        mask = np.ones(self.node_count, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @property
    def interior_node_count(self) -> int:
        return int(self.interior_nodes.size)

    @cached_property
    def boundary_position(self) -> NDArray[np.int64]:
        """Map from global node index to position in ``boundary_nodes`` (-1 if interior)."""
        position = -np.ones(self.node_count, dtype=np.int64)
        position[self.boundary_nodes] = np.arange(self.boundary_nodes.size)
        return position

    @cached_property
    def interior_position(self) -> NDArray[np.int64]:
        position = -np.ones(self.node_count, dtype=np.int64)
        position[self.interior_nodes] = np.arange(self.interior_nodes.size)
        return position

    @cached_property
    def _element_geometry(self):
        coords = self.nodes[self.elements]
        edges = coords[:, 1:, :] - coords[:, :1, :]
        determinants = np.linalg.det(edges)
        inverse = np.linalg.inv(edges)
        grads = np.empty((self.elements.shape[0], self.dimension + 1, self.dimension))
        grads[:, 1:, :] = inverse.transpose(0, 2, 1)
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
        volumes = np.abs(determinants) / math.factorial(self.dimension)
        return volumes, grads

    @property
    def element_volumes(self) -> NDArray[np.float64]:
        return self._element_geometry[0]

    @property
    def element_gradients(self) -> NDArray[np.float64]:
        """Gradients of the barycentric coordinates, shape (E, n+1, n)."""
        return self._element_geometry[1]

    @cached_property
    def volume(self) -> float:
        return float(self.element_volumes.sum())

    @cached_property
    def lumped_mass(self) -> NDArray[np.float64]:
        share = np.repeat(self.element_volumes / (self.dimension + 1), self.dimension + 1)
        return np.bincount(self.elements.ravel(), weights=share, minlength=self.node_count)

    @cached_property
    def boundary_mass(self) -> NDArray[np.float64]:
        """Lumped facet mass per boundary node, ordered like ``boundary_nodes``."""
        share = np.repeat(self.facet_measures / self.dimension, self.dimension)
        full = np.bincount(self.boundary_facets.ravel(), weights=share, minlength=self.node_count)
        return full[self.boundary_nodes]

    @cached_property
    def nodal_normals(self) -> NDArray[np.float64]:
        """Facet-measure weighted outward normals at boundary nodes."""
        accum = np.zeros((self.node_count, self.dimension))
        weighted = self.facet_normals * self.facet_measures[:, None]
        for local in range(self.dimension):
            np.add.at(accum, self.boundary_facets[:, local], weighted)
        normals = accum[self.boundary_nodes]
        return normals / np.linalg.norm(normals, axis=1, keepdims=True)

    @property
    def boundary_coordinates(self) -> NDArray[np.float64]:
        return self.nodes[self.boundary_nodes]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.bounds[1] - self.bounds[0]))

    def project_to_domain(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        """Closest point of the closed domain (identity inside)."""
        points = np.asarray(points, dtype=float)
        if self.shape == "disk":
            center = 0.5 * (self.bounds[0] + self.bounds[1])
            offset = points - center
            distance = np.linalg.norm(offset, axis=-1, keepdims=True)
            scale = np.minimum(1.0, self.radius / np.maximum(distance, GEOMETRIC_TOLERANCE))
            return center + offset * scale
        return np.clip(points, self.bounds[0], self.bounds[1])

    def distance_to_domain(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.linalg.norm(np.asarray(points, dtype=float) - self.project_to_domain(points), axis=-1)

    def to_json(self) -> Dict[str, Any]:
        return {
            "dimension": self.dimension,
            "shape": self.shape,
            "radius": self.radius,
            "bounds": self.bounds.tolist(),
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "boundary_facets": self.boundary_facets.tolist(),
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Mesh":
        return mesh_from_arrays(
            int(data["dimension"]),
            np.asarray(data["nodes"], dtype=float),
            np.asarray(data["elements"], dtype=np.int64),
            shape=data.get("shape", "box"),
            bounds=np.asarray(data["bounds"], dtype=float) if data.get("bounds") is not None else None,
            radius=data.get("radius"),
        )


def mesh_from_arrays(dimension: int, nodes: NDArray, elements: NDArray, shape: str = "box",
                     bounds: Optional[NDArray] = None, radius: Optional[float] = None) -> Mesh:
    nodes = np.ascontiguousarray(nodes, dtype=float)
    elements = np.ascontiguousarray(elements, dtype=np.int64)
    elements = _orient(nodes, elements)
    facets, normals, measures = _boundary_facets(nodes, elements, dimension)
    if bounds is None:
        bounds = np.stack([nodes.min(axis=0), nodes.max(axis=0)])
    mesh = Mesh(dimension, nodes, elements, facets, normals, measures, shape, bounds, radius)
    if np.any(mesh.element_volumes <= GEOMETRIC_TOLERANCE * mesh.volume / max(elements.shape[0], 1)):
        raise MeshError("Mesh contains degenerate elements")
    logger.debug("Built mesh", dimension=dimension, nodes=mesh.node_count, elements=elements.shape[0],
                 boundary_nodes=mesh.boundary_nodes.size)
    return mesh


def _orient(nodes: NDArray, elements: NDArray) -> NDArray:
    coords = nodes[elements]
    det = np.linalg.det(coords[:, 1:, :] - coords[:, :1, :])
    flipped = elements.copy()
    negative = det < 0
    flipped[negative, 1], flipped[negative, 2] = elements[negative, 2], elements[negative, 1]
    return flipped


def _boundary_facets(nodes: NDArray, elements: NDArray, dimension: int):
    local_faces = [tuple(j for j in range(dimension + 1) if j != omit) for omit in range(dimension + 1)]
    faces = np.concatenate([elements[:, face] for face in local_faces])
    opposite = np.concatenate([elements[:, omit] for omit in range(dimension + 1)])
    keys = np.sort(faces, axis=1)
    _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    owner = np.sort(first[counts == 1])
    facets = faces[owner]
    points = nodes[facets]
    if dimension == 2:
        tangent = points[:, 1] - points[:, 0]
        raw = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    else:
        raw = np.cross(points[:, 1] - points[:, 0], points[:, 2] - points[:, 0])
    length = np.linalg.norm(raw, axis=1)
    normals = raw / length[:, None]
    measures = length if dimension == 2 else 0.5 * length
    outward = np.einsum("fd,fd->f", normals, points.mean(axis=1) - nodes[opposite[owner]])
    normals[outward < 0] *= -1.0
    return facets, normals, measures


def build_box_mesh(dimension: int, lengths: Sequence[float], divisions: Sequence[int]) -> Mesh:
    """Structured simplicial mesh of ``[0, L_1] x ... x [0, L_n]``.

    2D cells are split along alternating diagonals (union-jack pattern), so even
    division counts keep the reflection symmetries of the box. 3D cells use the
    six-tetrahedron Kuhn split.
    """
    if dimension not in (2, 3):
        raise MeshError(f"Unsupported dimension {dimension}")
    if len(lengths) != dimension or len(divisions) != dimension:
        raise MeshError("lengths and divisions must have one entry per axis")
    if any(int(d) < 2 for d in divisions):
        raise MeshError(f"divisions must be >= 2 per axis, got {list(divisions)}")
    if any(float(length) <= 0 for length in lengths):
        raise MeshError(f"lengths must be positive, got {list(lengths)}")

    divisions = [int(d) for d in divisions]
    axes = [np.linspace(0.0, float(length), d + 1) for length, d in zip(lengths, divisions)]
    grid = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel(order="F") for g in grid], axis=1)
    shape = [d + 1 for d in divisions]

    def index(*ijk):
        flat, stride = 0, 1
        for value, size in zip(ijk, shape):
            flat = flat + value * stride
            stride *= size
        return flat

    elements = []
    if dimension == 2:
        nx, ny = divisions
        for j in range(ny):
            for i in range(nx):
                a, b, c, d = index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1)
                if (i + j) % 2 == 0:
                    elements += [(a, b, c), (a, c, d)]
                else:
                    elements += [(a, b, d), (b, c, d)]
    else:
        nx, ny, nz = divisions
        unit = np.eye(3, dtype=int)
        for k in range(nz):
            for j in range(ny):
                for i in range(nx):
                    origin = np.array([i, j, k])
                    for perm in itertools.permutations(range(3)):
                        path = [origin]
                        for axis in perm:
                            path.append(path[-1] + unit[axis])
                        elements.append(tuple(index(*p) for p in path))

    bounds = np.stack([np.zeros(dimension), np.asarray(lengths, dtype=float)])
    return mesh_from_arrays(dimension, nodes, np.asarray(elements), shape="box", bounds=bounds)


def build_disk_mesh(radius: float = 1.0, divisions: int = 32, center: Sequence[float] = (0.0, 0.0)) -> Mesh:
    """Disk mesh from the elliptical square-to-disk map of a structured grid."""
    if divisions < 2 or divisions % 2:
        raise MeshError(f"disk divisions must be even and >= 2, got {divisions}")
    if radius <= 0:
        raise MeshError(f"radius must be positive, got {radius}")
    ticks = np.linspace(-1.0, 1.0, divisions + 1)
    u, v = np.meshgrid(ticks, ticks, indexing="ij")
    u, v = u.ravel(order="F"), v.ravel(order="F")
    mapped = np.stack([u * np.sqrt(1.0 - 0.5 * v ** 2), v * np.sqrt(1.0 - 0.5 * u ** 2)], axis=1)
    nodes = radius * mapped + np.asarray(center, dtype=float)

    side = divisions + 1
    elements = []
    for j in range(divisions):
        for i in range(divisions):
            a, b, c, d = i + side * j, i + 1 + side * j, i + 1 + side * (j + 1), i + side * (j + 1)
            uc, vc = ticks[i] + ticks[i + 1], ticks[j] + ticks[j + 1]
            if uc * vc > 0:
                elements += [(a, b, c), (a, c, d)]
            else:
                elements += [(a, b, d), (b, c, d)]
    center = np.asarray(center, dtype=float)
    bounds = np.stack([center - radius, center + radius])
    return mesh_from_arrays(2, nodes, np.asarray(elements), shape="disk", bounds=bounds, radius=float(radius))
