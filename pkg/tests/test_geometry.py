import numpy as np
import pytest
from hypothesis import given, strategies as st

from aims.geometry import (MeshError, MeshFormatError, TriMesh, build_rwg, load_mesh,
                           make_icosphere, make_plate_mesh, make_sphere_mesh, refine_uniform,
                           write_mesh)
from aims.scenario import plate_for_mean_edge

sides = st.floats(0.2, 3.0)
ratios = st.floats(1.0, 12.0)


@given(sides, ratios)
def test_plate_is_a_disk(side, ratio):
    mesh = make_plate_mesh(side, side / ratio)
    assert mesh.n_vertices - mesh.n_edges + mesh.n_triangles == 1
    assert np.allclose(mesh.vertices[:, 2], 0.0)
    lo, hi = mesh.bounding_box()
    assert np.allclose(lo[:2], -side / 2) and np.allclose(hi[:2], side / 2)


@given(sides, st.floats(5.0, 12.0))
def test_plate_edge_lengths(side, ratio):
    max_edge = side / ratio
    mesh = make_plate_mesh(side, max_edge)
    # squares split along a diagonal: edges h, h and sqrt(2) h with h <= max_edge
    assert mesh.edge_lengths.max() <= np.sqrt(2) * max_edge * (1 + 1e-12)
    assert abs(mesh.mean_edge / max_edge - 1) < 0.2
    assert mesh.edge_lengths.max() / mesh.edge_lengths.min() < 3


def test_minimal_plate_has_one_basis():
    mesh = make_plate_mesh(1.0, 1.0)
    assert mesh.n_triangles == 2
    assert build_rwg(mesh).n == 1


def test_unit_plate_unknown_count():
    assert abs(build_rwg(make_plate_mesh(1.0, 1 / 9)).n / 280 - 1) <= 0.25
    # a whole number of squares per wavelength at the same mean edge
    assert build_rwg(plate_for_mean_edge(1.0, 1 / 9)).n == 280


@pytest.mark.parametrize("side, n", [(1.0, 280), (2.0, 1160), (4.0, 4720)])
def test_plate_series_unknowns(side, n):
    assert build_rwg(plate_for_mean_edge(side, 1 / 9)).n == n


@pytest.mark.parametrize("side, max_edge", [(0.0, 0.1), (1.0, 0.0), (-1.0, 0.1), (1.0, 2.0)])
def test_plate_rejects_bad_sizes(side, max_edge):
    with pytest.raises(ValueError):
        make_plate_mesh(side, max_edge)


def test_icosahedron_counts():
    mesh = make_icosphere(1.0, 1)
    assert (mesh.n_vertices, mesh.n_triangles, mesh.n_edges) == (12, 20, 30)


@given(st.integers(1, 8), st.floats(0.1, 5.0))
def test_icosphere_is_closed(freq, radius):
    mesh = make_icosphere(radius, freq)
    assert mesh.is_closed
    assert 2 * mesh.n_edges == 3 * mesh.n_triangles
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), radius)
    assert build_rwg(mesh).n == mesh.n_edges
    assert mesh.edge_lengths.max() / mesh.edge_lengths.min() < 3
    # outward orientation
    c = mesh.centroids
    assert np.all(np.einsum("ij,ij->i", mesh.normals, c) > 0)


def test_unit_sphere_unknown_count():
    mesh = make_sphere_mesh(1.0, 1 / 9)
    assert mesh.mean_edge <= 1 / 9
    assert abs(build_rwg(mesh).n / 3384 - 1) <= 0.30


def test_sphere_rejects_coarse_edge():
    with pytest.raises(ValueError):
        make_sphere_mesh(1.0, 1.0)


@given(st.integers(1, 4))
def test_refine_counts(freq):
    mesh = make_icosphere(1.0, freq)
    fine = refine_uniform(mesh)
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert fine.n_edges == 2 * mesh.n_edges + 3 * mesh.n_triangles
    twice = refine_uniform(fine)
    assert twice.n_triangles == 16 * mesh.n_triangles
    assert twice.n_edges == 2 * fine.n_edges + 3 * fine.n_triangles


def test_refine_preserves_flat_area_and_halves_edges():
    plate = make_plate_mesh(1.3, 0.2)
    fine = refine_uniform(plate)
    assert fine.surface_area == pytest.approx(plate.surface_area, rel=1e-14)
    sphere = make_icosphere(1.0, 3)
    fine = refine_uniform(sphere)
    assert abs(fine.surface_area / sphere.surface_area - 1) < 0.01
    assert abs(fine.mean_edge / sphere.mean_edge - 0.5) < 0.005
    # refinement does not move points onto the sphere
    r = np.linalg.norm(fine.vertices, axis=1)
    assert r.min() < 0.99


def test_rwg_normal_current_is_continuous(plate1):
    """The component of f across its edge is 1 on both sides."""
    b = plate1
    mesh = b.mesh
    e = mesh.edges[b.edge]
    p0, p1 = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    mid = 0.5 * (p0 + p1)
    edge_dir = (p1 - p0) / b.length[:, None]
    across = np.cross(edge_dir, mesh.normals[b.plus])
    # orient from the plus triangle towards the minus triangle
    across *= np.sign(np.einsum("ij,ij->i", across, mid - b.free_plus))[:, None]
    f_plus = b.length[:, None] / (2 * mesh.areas[b.plus][:, None]) * (mid - b.free_plus)
    f_minus = b.length[:, None] / (2 * mesh.areas[b.minus][:, None]) * (b.free_minus - mid)
    assert np.allclose(np.einsum("ij,ij->i", f_plus, across), 1.0)
    assert np.allclose(np.einsum("ij,ij->i", f_minus, across), 1.0)


def test_load_two_triangle_plate(tmp_path):
    path = tmp_path / "plate.txt"
    path.write_text("# unit square\n4 2\n0 0 0\n1 0 0\n1 1 0\n0 1 0  # last vertex\n0 1 2\n0 2 3\n")
    mesh = load_mesh(path)
    assert mesh.n_triangles == 2
    assert build_rwg(mesh).n == 1


def test_mesh_round_trip(tmp_path):
    mesh = make_sphere_mesh(1.0, 0.5)
    path = tmp_path / "sphere.txt"
    write_mesh(mesh, path)
    back = load_mesh(path)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.vertices, mesh.vertices)


def test_repeated_vertex_is_degenerate(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3 1\n0 0 0\n1 0 0\n0 1 0\n0 1 1\n")
    with pytest.raises(MeshError, match="degenerate triangle 0"):
        load_mesh(path)


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("3\n", 1),
    ("3 1\n0 0 0\n1 0 x\n0 1 0\n0 1 2\n", 3),
    ("3 1\n0 0 0\n1 0 0\n0 1 0\n", 4),
])
def test_parse_errors_carry_line_numbers(tmp_path, text, line):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(MeshFormatError) as info:
        load_mesh(path)
    assert info.value.lineno == line


def test_non_manifold_edge_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], float)
    with pytest.raises(MeshError, match="non-manifold"):
        TriMesh(v, [[0, 1, 2], [0, 1, 3], [0, 1, 4]])
