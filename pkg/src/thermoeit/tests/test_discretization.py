import json

import numpy as np
import pytest

from src.thermoeit.discretization import (
    BoundaryTrace,
    Mesh,
    ScalarField,
    TensorField,
    boundary_integral,
    build_box_mesh,
    build_disk_mesh,
    integrate,
)
from src.thermoeit.errors import InvalidCoefficientError, MeshError


def test_small_square_counts():
    mesh = build_box_mesh(2, [1, 1], [2, 2])
    assert mesh.node_count == 9
    assert mesh.elements.shape[0] == 8
    assert mesh.volume == pytest.approx(1.0, abs=1e-12)
    assert mesh.interior_node_count == 1


def test_cube_volume():
    mesh = build_box_mesh(3, [1, 1, 1], [2, 2, 2])
    assert mesh.volume == pytest.approx(1.0, abs=1e-12)
    assert np.all(mesh.element_volumes > 0)
    assert mesh.boundary_nodes.size == 26


def test_boundary_node_count(fine_square_mesh):
    assert fine_square_mesh.boundary_nodes.size == 256


@pytest.mark.parametrize("divisions", [[1, 4], [4, 0]])
def test_rejects_degenerate_divisions(divisions):
    with pytest.raises(MeshError):
        build_box_mesh(2, [1, 1], divisions)


def test_rejects_non_positive_lengths():
    with pytest.raises(MeshError):
        build_box_mesh(2, [1, -1], [4, 4])


def test_facet_normals_are_unit_and_outward(unit_square_mesh, unit_disk_mesh):
    for mesh in (unit_square_mesh, unit_disk_mesh):
        assert np.allclose(np.linalg.norm(mesh.facet_normals, axis=1), 1.0, atol=1e-12)
        midpoints = mesh.nodes[mesh.boundary_facets].mean(axis=1)
        center = 0.5 * (mesh.bounds[0] + mesh.bounds[1])
        assert np.all(np.einsum("fd,fd->f", mesh.facet_normals, midpoints - center) > 0)


def test_boundary_nodes_match_facets(unit_square_mesh):
    assert set(unit_square_mesh.boundary_nodes) == set(unit_square_mesh.boundary_facets.ravel())


def test_disk_area(unit_disk_mesh):
    assert unit_disk_mesh.volume == pytest.approx(np.pi, rel=5e-3)
    assert np.allclose(np.linalg.norm(unit_disk_mesh.boundary_coordinates, axis=1), 1.0, atol=1e-12)


def test_integrate_examples(unit_square_mesh, fine_square_mesh):
    one = ScalarField.constant(unit_square_mesh, 1.0)
    x1 = ScalarField.from_function(unit_square_mesh, lambda p: p[:, 0])
    bump = ScalarField.from_function(fine_square_mesh, lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]))
    assert integrate(one) == pytest.approx(1.0, abs=1e-12)
    assert integrate(x1) == pytest.approx(0.5, abs=1e-12)
    assert integrate(bump) == pytest.approx(4 / np.pi ** 2, abs=2e-3)


def test_boundary_integral_examples(unit_square_mesh):
    mesh = unit_square_mesh
    assert boundary_integral(BoundaryTrace(mesh, np.ones(mesh.boundary_nodes.size))) == pytest.approx(4.0)
    assert boundary_integral(BoundaryTrace(mesh, mesh.nodal_normals[:, 0])) == pytest.approx(0.0, abs=1e-12)
    assert boundary_integral(BoundaryTrace.from_function(mesh, lambda p: p[:, 0])) == pytest.approx(2.0)


def test_quadrature_converges_at_second_order():
    interior_errors, boundary_errors, spacings = [], [], []
    for divisions in (8, 16, 32):
        mesh = build_box_mesh(2, [1, 1], [divisions, divisions])
        field = ScalarField.from_function(mesh, lambda p: np.exp(p[:, 0] + p[:, 1]))
        trace = BoundaryTrace.from_function(mesh, lambda p: np.exp(p[:, 0] + p[:, 1]))
        interior_errors.append(abs(integrate(field) - (np.e - 1) ** 2))
        boundary_errors.append(abs(boundary_integral(trace) - 2 * (np.e ** 2 - 1)))
        spacings.append(1.0 / divisions)
    for errors in (interior_errors, boundary_errors):
        slope = np.polyfit(np.log(spacings), np.log(errors), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.3)


def test_scalar_field_lower_bound(unit_square_mesh):
    with pytest.raises(InvalidCoefficientError):
        ScalarField.constant(unit_square_mesh, 0.5, lower_bound=1.0, name="gamma")


def test_tensor_field_validation(unit_square_mesh):
    with pytest.raises(InvalidCoefficientError):
        TensorField.constant(unit_square_mesh, [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(InvalidCoefficientError):
        TensorField.constant(unit_square_mesh, [[1.0, 0.0], [0.0, -1.0]])
    tensor = TensorField.constant(unit_square_mesh, [[4.0, 0.0], [0.0, 1.0]])
    assert tensor.c0 == pytest.approx(1.0)
    assert np.array_equal(tensor.values, tensor.values.transpose(0, 2, 1))


def test_boundary_trace_length(unit_square_mesh):
    with pytest.raises(InvalidCoefficientError):
        BoundaryTrace(unit_square_mesh, np.zeros(3))


def test_mesh_json_roundtrip_preserves_geometry():
    mesh = build_disk_mesh(0.5, 8)
    restored = Mesh.from_json(json.loads(json.dumps(mesh.to_json())))
    assert restored.shape == "disk"
    assert restored.volume == pytest.approx(mesh.volume, abs=1e-14)
    assert np.array_equal(restored.boundary_nodes, mesh.boundary_nodes)
