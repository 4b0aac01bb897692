import numpy as np
import pytest

from tveit.mesh import (
    MeshError,
    Polygon,
    boundary_triangulation,
    build_initial_triangulation,
    check_conformity,
    dump_mesh,
    load_mesh,
    mesh_quality,
    refine,
    refine_to_level,
)

UNIT_SQUARE = Polygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def test_unit_square_two_triangles():
    mesh = build_initial_triangulation(UNIT_SQUARE)
    assert mesh.num_triangles == 2
    q = mesh_quality(mesh)
    assert q.h == pytest.approx(np.sqrt(2), abs=1e-14)


def test_equilateral_single_element_quality():
    tri = Polygon([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]])
    mesh = build_initial_triangulation(tri)
    assert mesh.num_triangles == 1
    q = mesh_quality(mesh)
    # oracle: inradius r = area / semiperimeter, rho = 2r, ratio = 1 / rho
    area = np.sqrt(3) / 4
    rho = 2 * area / 1.5
    assert q.s == pytest.approx(1.0 / rho, rel=1e-12)
    assert q.s == pytest.approx(np.sqrt(3), rel=1e-12)


def test_lshape_covers_area():
    lshape = Polygon([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]])
    mesh = build_initial_triangulation(lshape)
    assert mesh.num_triangles >= 4
    check_conformity(mesh)
    assert np.sum(mesh.triangle_areas()) == pytest.approx(3.0, abs=1e-12)


def test_degenerate_polygons_rejected():
    with pytest.raises(MeshError):
        Polygon([[0, 0], [1, 0], [2, 0]])  # zero area
    with pytest.raises(MeshError):
        Polygon([[0, 0], [0, 0], [1, 1]])  # repeated vertex
    with pytest.raises(MeshError):
        Polygon([[0, 0], [1, 1], [1, 0], [0, 1]])  # self-intersecting bowtie
    with pytest.raises(MeshError):
        Polygon([[0, 0], [0, 1], [1, 1], [1, 0]])  # clockwise


def test_refine_counts_and_h():
    mesh = build_initial_triangulation(UNIT_SQUARE)
    fine = refine(mesh)
    assert fine.num_triangles == 8
    assert mesh_quality(fine).h == pytest.approx(np.sqrt(2) / 2, abs=1e-14)
    # count after k refinements
    k = 3
    m = refine_to_level(mesh, k)
    assert m.num_triangles == 2 * 4**k


def test_refine_preserves_quality_and_area():
    lshape = Polygon([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]])
    mesh = build_initial_triangulation(lshape)
    s0 = mesh_quality(mesh).s
    area0 = np.sum(mesh.triangle_areas())
    for _ in range(3):
        mesh = refine(mesh)
        check_conformity(mesh)
        assert mesh_quality(mesh).s == pytest.approx(s0, abs=1e-12)
        assert np.sum(mesh.triangle_areas()) == pytest.approx(area0, abs=1e-12)


def test_quality_right_isoceles():
    tri = Polygon([[0, 0], [1, 0], [0, 1]])
    q = mesh_quality(build_initial_triangulation(tri))
    # oracle: h = sqrt(2), rho = 2*area/semiperimeter = 2 - sqrt(2)
    assert q.h == pytest.approx(np.sqrt(2), abs=1e-14)
    assert q.s == pytest.approx(np.sqrt(2) / (2 - np.sqrt(2)), rel=1e-12)


def test_quality_scale_invariant():
    mesh = refine(build_initial_triangulation(UNIT_SQUARE))
    big = Polygon(10.0 * UNIT_SQUARE.vertices)
    mesh_big = refine(build_initial_triangulation(big))
    assert mesh_quality(mesh_big).s == pytest.approx(mesh_quality(mesh).s, abs=1e-12)


def test_shape_ratio_lower_bound():
    # no triangle can beat the equilateral ratio sqrt(3) > 2/sqrt(3)
    for poly in (UNIT_SQUARE, Polygon([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]])):
        mesh = refine(build_initial_triangulation(poly))
        assert mesh_quality(mesh).s >= 2 / np.sqrt(3)


def test_boundary_loop_square():
    mesh = build_initial_triangulation(UNIT_SQUARE)
    edges, lengths, arc = boundary_triangulation(mesh)
    assert len(edges) == 4
    assert np.allclose(lengths, 1.0)
    assert np.allclose(arc, [0, 1, 2, 3])
    fine = refine(mesh)
    edges_f, lengths_f, _ = boundary_triangulation(fine)
    assert len(edges_f) == 8
    assert np.allclose(lengths_f, 0.5)


def test_perimeter_invariant_under_refinement():
    lshape = Polygon([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]])
    mesh = build_initial_triangulation(lshape)
    for _ in range(3):
        mesh = refine(mesh)
        _, lengths, _ = boundary_triangulation(mesh)
        assert np.sum(lengths) == pytest.approx(lshape.perimeter, abs=1e-12)


def test_boundary_loop_closure():
    mesh = refine_to_level(build_initial_triangulation(UNIT_SQUARE), 2)
    edges = mesh.boundary_edges
    for b in range(len(edges)):
        assert edges[b, 1] == edges[(b + 1) % len(edges), 0]


def test_outward_normals():
    mesh = build_initial_triangulation(UNIT_SQUARE)
    normals = mesh.boundary_normals()
    mids = 0.5 * (mesh.vertices[mesh.boundary_edges[:, 0]]
                  + mesh.vertices[mesh.boundary_edges[:, 1]])
    # stepping outward along the normal leaves the polygon
    outside = mids + 1e-3 * normals
    assert not np.any(UNIT_SQUARE.contains(outside))


def test_dump_load_roundtrip(tmp_path):
    mesh = refine_to_level(build_initial_triangulation(UNIT_SQUARE), 2)
    path = tmp_path / "mesh.txt"
    dump_mesh(mesh, path)
    back = load_mesh(path, polygon=UNIT_SQUARE, level=2)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.boundary_edges, mesh.boundary_edges)
    assert np.allclose(back.vertices, mesh.vertices)
