import numpy as np
import pytest

from graphsolver.mesh import (ShapeSpec, MeshError, TriangleMesh,
                              generate_primitive, validate_mesh, import_obj,
                              export_obj)

ALL_SPECS = [
    ShapeSpec("spheroid", {"Rx": 0.2, "Ry": 0.25, "Rz": 0.3}),
    ShapeSpec("conical_frustum", {"Rt": 0.12, "Rz": 0.2, "H": 0.3}),
    ShapeSpec("hexahedron", {"Dt": 0.2, "Wt": 0.2, "Db": 0.3,
                             "Wb": 0.25, "H": 0.3}),
    ShapeSpec("missilehead", {"H": 0.6, "R": 0.2, "theta": 55.0}),
]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
def test_primitives_are_closed_oriented_spheres(spec):
    mesh = generate_primitive(spec, 0.1, 1.0)
    rep = validate_mesh(mesh)
    assert rep.is_closed
    assert rep.is_oriented
    assert rep.euler_characteristic == 2
    assert mesh.num_triangles % 2 == 0


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
def test_edge_sizing(spec):
    lam = 1.0
    mesh = generate_primitive(spec, 0.1, lam)
    lens = mesh.edge_lengths()
    assert lens.mean() <= 0.13 * lam
    assert lens.max() <= 0.2 * lam


def test_normals_point_outward():
    spec = ShapeSpec("spheroid", {"Rx": 0.2, "Ry": 0.2, "Rz": 0.2})
    mesh = generate_primitive(spec, 0.105, 1.0)
    c = mesh.centroids()
    n = mesh.normals()
    assert np.all(np.einsum("fa,fa->f", c, n) > 0.0)


def test_spheroid_volume_sanity():
    spec = ShapeSpec("spheroid", {"Rx": 0.2, "Ry": 0.2, "Rz": 0.3})
    mesh = generate_primitive(spec, 0.08, 1.0)
    # divergence theorem with the position field: V = (1/3) sum c . n A
    vol = np.einsum("fa,fa,f->", mesh.centroids(), mesh.normals(),
                    mesh.areas()) / 3.0
    exact = 4.0 / 3.0 * np.pi * 0.2 * 0.2 * 0.3
    assert abs(vol - exact) / exact < 0.05


def test_shape_spec_validation():
    with pytest.raises(MeshError):
        ShapeSpec("torus", {"R": 1.0}).validate()
    with pytest.raises(MeshError):
        ShapeSpec("spheroid", {"Rx": 0.2, "Ry": 0.2}).validate()
    with pytest.raises(MeshError):
        ShapeSpec("spheroid", {"Rx": -0.2, "Ry": 0.2, "Rz": 0.2}).validate()
    with pytest.raises(MeshError):
        ShapeSpec("missilehead", {"H": 1.2, "R": 0.3, "theta": 95.0}).validate()


def test_shape_spec_scaled():
    spec = ShapeSpec("missilehead", {"H": 1.2, "R": 0.3, "theta": 55.0})
    s = spec.scaled(0.5)
    assert s.parameters["H"] == pytest.approx(0.6)
    assert s.parameters["theta"] == pytest.approx(55.0)


def test_triangle_cap():
    spec = ShapeSpec("spheroid", {"Rx": 0.5, "Ry": 0.5, "Rz": 0.5})
    with pytest.raises(MeshError):
        generate_primitive(spec, 0.1, 1.0, triangle_cap=100)


def test_obj_round_trip():
    spec = ShapeSpec("hexahedron", {"Dt": 0.2, "Wt": 0.2, "Db": 0.3,
                                    "Wb": 0.25, "H": 0.3})
    mesh = generate_primitive(spec, 0.1, 1.0)
    back = import_obj(export_obj(mesh))
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.vertices, mesh.vertices)


def test_obj_import_rejects_quads():
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
    with pytest.raises(MeshError):
        import_obj(text)


def test_obj_import_rejects_bad_index():
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"
    with pytest.raises(MeshError):
        import_obj(text)


def test_obj_import_rejects_malformed_vertex():
    with pytest.raises(MeshError):
        import_obj("v 0 0\nf 1 1 1\n")


def test_validate_mesh_detects_open_surface():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 1, 3]])
    rep = validate_mesh(TriangleMesh(verts, tris))
    assert not rep.is_closed
