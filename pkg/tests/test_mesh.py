import math

import numpy as np
import pytest

from heterodg.mesh import (DIRICHLET, NEUMANN, MeshError, MeshParseError, PolyMesh, TopologyError,
                           build_face_topology, check_regularity, element_diameter, load_mesh, save_mesh,
                           subtriangulate_polygon, triangle_areas)
from heterodg.meshgen import structured_quad_mesh

from oracles import shoelace

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def two_squares():
    v = [[0, 0], [1, 0], [2, 0], [2, 1], [1, 1], [0, 1]]
    return PolyMesh(np.array(v, float), ([0, 1, 4, 5], [1, 2, 3, 4]))


def test_two_squares_face_counts():
    m = two_squares()
    assert m.counts() == (1, 6)
    interior = [f for f in m.faces if f.is_interior][0]
    # normal points from owner to neighbour
    c_o, c_n = m.centroids[interior.owner], m.centroids[interior.neighbor]
    assert interior.normal @ (c_n - c_o) > 0


def test_single_triangle_faces():
    m = PolyMesh(np.array([[0, 0], [1, 0], [0, 1]], float), ([0, 1, 2],))
    assert m.counts() == (0, 3)


def test_structured_grid_counts_match_edge_enumeration():
    m = structured_quad_mesh(3, 3)
    edges = set()
    shared = {}
    for k, poly in enumerate(m.elements):
        for a, b in zip(poly, np.roll(poly, -1)):
            key = (min(a, b), max(a, b))
            shared[key] = shared.get(key, 0) + 1
            edges.add(key)
    n_int = sum(v == 2 for v in shared.values())
    assert m.counts() == (n_int, len(edges) - n_int) == (12, 12)


def test_face_normals_unit_and_perpendicular():
    m = structured_quad_mesh(3, 2)
    for f in m.faces:
        d = m.vertices[f.vertices[1]] - m.vertices[f.vertices[0]]
        assert abs(np.linalg.norm(f.normal) - 1) < 1e-15
        assert abs(f.normal @ d) < 1e-14


def test_non_manifold_edge_rejected():
    v = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0, -1]], float)
    with pytest.raises(TopologyError):
        build_face_topology([[0, 1, 2], [1, 0, 4], [0, 1, 3]], v)


def test_clockwise_element_rejected():
    with pytest.raises(MeshError):
        PolyMesh(SQUARE, ([0, 3, 2, 1],))


def test_subtriangulation_square_and_triangle():
    tris = subtriangulate_polygon(SQUARE)
    assert len(tris) == 4
    assert triangle_areas(tris).sum() == pytest.approx(1.0, rel=1e-14)
    tri = np.array([[0, 0], [1, 0], [0, 1]], float)
    assert len(subtriangulate_polygon(tri)) == 1


def test_subtriangulation_l_shape_matches_shoelace():
    L = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], float)
    tris = subtriangulate_polygon(L)
    areas = triangle_areas(tris)
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(shoelace(L), rel=1e-12)


def test_diameters():
    assert element_diameter(SQUARE) == pytest.approx(math.sqrt(2))
    assert element_diameter([[0, 0], [1, 0], [0, 1]]) == pytest.approx(math.sqrt(2))
    assert two_squares().h == pytest.approx(math.sqrt(2))


def test_regularity_square_and_sliver():
    rep = check_regularity(PolyMesh(SQUARE, ([0, 1, 2, 3],)))
    assert rep.shape_ratios[0] == pytest.approx(0.5)
    sliver = PolyMesh(np.array([[0, 0], [1, 0], [1, 1e-6]], float), ([0, 1, 2],))
    rep = check_regularity(sliver)
    assert rep.shape_ratios[0] == pytest.approx(5e-7 / 2 * 2 / (1 + 1e-12), rel=1e-3)
    assert list(rep.flagged) == [0]


def test_face_partition_identity():
    m = structured_quad_mesh(4, 3, (0, 2, 0, 1))
    fa = m.face_arrays
    inner = fa["neighbor"] >= 0
    lhs = 2 * fa["length"][inner].sum() + fa["length"][~inner].sum()
    assert lhs == pytest.approx(m.perimeters.sum(), rel=1e-12)


def test_hanging_node_splits_face():
    # left square abuts two right squares; its right edge is stored as two faces
    v = np.array([[0, 0], [1, 0], [1, 0.5], [1, 1], [0, 1], [2, 0], [2, 0.5], [2, 1]], float)
    m = PolyMesh(v, ([0, 1, 2, 3, 4], [1, 5, 6, 2], [2, 6, 7, 3]))
    interior = [f for f in m.faces if f.is_interior]
    assert len(interior) == 3
    assert sum(f.length for f in interior) == pytest.approx(2.0)


def test_save_load_roundtrip(tmp_path):
    m = structured_quad_mesh(3, 2).with_boundary_tags(lambda mid, n: DIRICHLET if mid[0] < 1e-12 else NEUMANN)
    p = tmp_path / "m.txt"
    save_mesh(m, p)
    m2 = load_mesh(p)
    assert m2.same_as(m)
    assert m2.counts() == m.counts()
    tags = {(f.vertices, f.tag) for f in m.faces if not f.is_interior}
    assert tags == {(f.vertices, f.tag) for f in m2.faces if not f.is_interior}


def test_load_missing_vertex_reports_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("polymesh 2d\nvertices 3\n0 0\n1 0\n0 1\nelements 1\n0 1 7\n")
    with pytest.raises(MeshParseError, match="line 7"):
        load_mesh(p)


def test_load_malformed_line_number(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("polymesh 2d\nvertices 2\n0 0\n1 x\n")
    with pytest.raises(MeshParseError, match="line 4"):
        load_mesh(p)


def test_default_tag_when_boundary_section_absent(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("polymesh 2d\nvertices 3\n0 0\n1 0\n0 1\nelements 1\n0 1 2\n")
    assert {f.tag for f in load_mesh(p).faces} == {NEUMANN}
