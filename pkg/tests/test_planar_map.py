import pytest

from cellpack.planar_map import (
    HalfEdgeMap,
    MapError,
    augment_faces,
    bs_ball,
    build_from_rotations,
)


def triangle():
    # vertices at angles 0, 120, 240 on a circle; CCW rotations
    return build_from_rotations([[1, 2], [2, 0], [0, 1]])


def tetrahedron():
    # standard rotation system of the tetrahedron (sphere map)
    return build_from_rotations(
        [
            [1, 2, 3],
            [0, 3, 2],
            [0, 1, 3],
            [0, 2, 1],
        ]
    )


def hex_patch_neighbors():
    # center 0 with ring 1..6; CCW everywhere
    nb = [[1, 2, 3, 4, 5, 6]]
    for i in range(1, 7):
        prev = 6 if i == 1 else i - 1
        nxt = 1 if i == 6 else i + 1
        nb.append([nxt, 0, prev])
    return nb


def test_triangle_two_faces():
    m = triangle()
    assert m.n_vertices == 3
    assert m.n_edges == 3
    assert m.n_faces == 2
    assert m.euler_characteristic() == 2
    assert sorted(m.face_degree(f) for f in range(m.n_faces)) == [3, 3]


def test_tetrahedron_euler():
    m = tetrahedron()
    d = m.validate()
    assert d.n_faces == 4
    assert d.euler_characteristic == 2
    assert d.face_degree_histogram == {3: 4}
    assert d.is_simple and d.connected


def test_hex_patch_faces():
    m = build_from_rotations(hex_patch_neighbors())
    d = m.validate()
    assert d.euler_characteristic == 2
    # 6 inner triangles + outer hexagon
    assert d.face_degree_histogram == {3: 6, 6: 1}


def test_twin_involution_and_degree_sums():
    for m in (triangle(), tetrahedron(), build_from_rotations(hex_patch_neighbors())):
        for h in range(m.n_half_edges):
            assert m.twin[m.twin[h]] == h
            assert m.twin[h] != h
        assert sum(m.face_degree(f) for f in range(m.n_faces)) == m.n_half_edges
        assert sum(m.degree(v) for v in range(m.n_vertices)) == m.n_half_edges


def test_loop_rejected():
    with pytest.raises(MapError):
        build_from_rotations([[0, 1], [0]])


def test_inconsistent_multiplicity_rejected():
    with pytest.raises(MapError) as ei:
        build_from_rotations([[1, 2, 1], [2, 0], [0, 1]])
    assert "0" in str(ei.value) and "1" in str(ei.value)


def test_multi_edge_map_diagnostics():
    # two vertices joined by two parallel edges (a 2-gon on the sphere)
    m = build_from_rotations([[1, 1], [0, 0]])
    d = m.validate()
    assert d.has_multi_edges and not d.has_loops
    assert d.euler_characteristic == 2
    assert d.n_faces == 2


def test_ball_m0_single_vertex():
    m = tetrahedron()
    b = bs_ball(m, 0, 0)
    assert b.submap.n_vertices == 1
    assert b.submap.n_edges == 0
    assert b.vertex_map == [0]


def test_ball_saturates():
    m = tetrahedron()
    b = bs_ball(m, 2, 10)
    assert b.submap.n_vertices == 4
    assert b.submap.n_edges == 6


def test_ball_hexagonal_flower():
    # 2-ring triangular lattice patch: ball of radius 1 at the center is the 7-flower
    from cellpack.generators import triangular_lattice_patch

    m, coords = triangular_lattice_patch(2)
    center = min(range(len(coords)), key=lambda v: abs(coords[v]))
    b = bs_ball(m, center, 1)
    assert b.submap.n_vertices == 7
    assert sorted(b.submap.degree(v) for v in range(7)) == [3, 3, 3, 3, 3, 3, 6]
    # monotone in m
    b2 = bs_ball(m, center, 2)
    assert set(b.vertex_map) <= set(b2.vertex_map)


def test_augment_square():
    # 4-cycle; both faces get a vertex; result is a simple triangulation
    sq = build_from_rotations([[1, 3], [2, 0], [3, 1], [0, 2]])
    t = augment_faces(sq)
    assert t.n_vertices == 6
    d = t.validate()
    assert d.euler_characteristic == 2
    assert set(d.face_degree_histogram) == {3}
    assert d.is_simple


def test_augment_triangulation_is_stellar():
    m = tetrahedron()
    t = augment_faces(m)
    assert t.n_vertices == 4 + 4
    d = t.validate()
    assert d.euler_characteristic == 2
    assert set(d.face_degree_histogram) == {3}
    # each face-vertex has degree 3
    for f in range(4):
        assert t.degree(4 + f) == 3


def test_augment_square_lattice_patch():
    # 3x3 grid of vertices, CCW rotations; bounded faces are 4 squares
    def vid(i, j):
        return 3 * j + i

    nb = []
    for j in range(3):
        for i in range(3):
            lst = []
            # CCW starting east
            if i < 2:
                lst.append(vid(i + 1, j))
            if j < 2:
                lst.append(vid(i, j + 1))
            if i > 0:
                lst.append(vid(i - 1, j))
            if j > 0:
                lst.append(vid(i, j - 1))
            nb.append(lst)
    m = build_from_rotations(nb)
    t = augment_faces(m)
    d = t.validate()
    assert d.euler_characteristic == 2
    assert set(d.face_degree_histogram) == {3}
    # the 4 bounded-square face-vertices have degree 4
    degs = sorted(t.degree(v) for v in range(9, t.n_vertices))
    assert degs.count(4) >= 4


def test_augment_rejects_non_two_connected():
    # path graph: single face visits vertices twice
    path = build_from_rotations([[1], [0, 2], [1]])
    with pytest.raises(MapError):
        augment_faces(path)


def test_serialization_round_trip():
    for m in (triangle(), tetrahedron(), build_from_rotations([[1, 1], [0, 0]])):
        text = m.to_text()
        m2 = HalfEdgeMap.from_text(text)
        assert m2.to_text() == text
        assert [m2.neighbors(v) for v in range(m2.n_vertices)] == [
            m.neighbors(v) for v in range(m.n_vertices)
        ]
        assert m2.n_faces == m.n_faces
