import numpy as np
import pytest

from ischemia_afem.mesh import (
    MeshConformityError,
    TriMesh,
    bisect,
    boundary_band,
    build_structured,
    meshsize,
    uniform_bisect,
)


def brute_force_conformity(mesh):
    """Independent conformity check: count edge incidences pairwise and look
    for vertices in the interior of edges by geometry."""
    edges = {}
    for t, (a, b, c) in enumerate(mesh.triangles):
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            edges.setdefault(key, []).append(t)
    for key, owners in edges.items():
        assert len(owners) in (1, 2), f"edge {key} has {len(owners)} owners"
    # hanging nodes: any vertex strictly inside any edge segment
    pts = mesh.vertices
    for (va, vb), owners in edges.items():
        pa, pb = pts[va], pts[vb]
        seg = pb - pa
        seglen2 = seg @ seg
        rel = pts - pa
        t_par = (rel @ seg) / seglen2
        dist2 = np.sum((rel - np.outer(t_par, seg)) ** 2, axis=1)
        inside = (dist2 < 1e-24) & (t_par > 1e-12) & (t_par < 1 - 1e-12)
        inside[[va, vb]] = False
        assert not inside.any(), f"hanging node on edge ({va},{vb})"
    return edges


def test_structured_counts_small():
    m = build_structured(3)
    assert m.num_vertices == 9
    assert m.num_triangles == 8
    assert np.isclose(m.areas().sum(), 4.0)
    edges = brute_force_conformity(m)
    boundary = [e for e, o in edges.items() if len(o) == 1]
    interior = [e for e, o in edges.items() if len(o) == 2]
    assert len(boundary) == 8
    assert len(interior) == 8


def test_structured_counts_default_resolution():
    m = build_structured(26)
    assert m.num_vertices == 676
    assert m.num_triangles == 2 * 25 * 25
    assert m.structured_n == 26
    assert np.isclose(m.areas().sum(), 4.0)


def test_structured_orientation_and_refinement_edges():
    m = build_structured(5)
    assert np.all(m.areas() > 0)
    # the refinement edge of every structured triangle is the cell diagonal
    p = m.vertices
    for v1, v2 in m.refinement_edges():
        d = np.abs(p[v1] - p[v2])
        assert d[0] > 0 and np.isclose(d[0], d[1])


def test_edge_tables_euler_and_normals():
    m = build_structured(6)
    et = m.edge_tables()
    # Euler formula for a triangulated disc: E = V + T - 1
    assert et.num_edges == m.num_vertices + m.num_triangles - 1
    assert int(et.is_boundary.sum()) == 4 * 5
    assert np.allclose(np.hypot(et.normal[:, 0], et.normal[:, 1]), 1.0)
    pts = m.vertices
    centroids = pts[m.triangles].mean(axis=1)
    mids = 0.5 * (pts[et.edges[:, 0]] + pts[et.edges[:, 1]])
    for e in range(et.num_edges):
        n = et.normal[e]
        if et.is_boundary[e]:
            # boundary edges lie on the square, normal points outward
            assert np.isclose(np.abs(mids[e]).max(), 1.0)
            assert n @ (mids[e] - centroids[et.tri_plus[e]]) > 0
            outward = np.zeros(2)
            k = int(np.argmax(np.abs(mids[e])))
            outward[k] = np.sign(mids[e][k])
            assert np.allclose(n, outward)
        else:
            assert n @ (centroids[et.tri_minus[e]] - centroids[et.tri_plus[e]]) > 0
    # edge lengths match coordinates
    vecs = pts[et.edges[:, 1]] - pts[et.edges[:, 0]]
    assert np.allclose(et.length, np.hypot(vecs[:, 0], vecs[:, 1]))


def test_tri_edges_are_opposite_local_vertices():
    m = build_structured(4)
    et = m.edge_tables()
    for t, tri in enumerate(m.triangles):
        for j in range(3):
            others = sorted(np.delete(tri, j))
            assert list(et.edges[et.tri_edges[t, j]]) == others


def test_single_pair_bisection():
    m = build_structured(2)
    r = bisect(m, [0])
    # both triangles share the diagonal refinement edge, so one mark splits both
    assert r.num_vertices == 5
    assert r.num_triangles == 4
    assert np.allclose(r.vertices[4], [0.0, 0.0])
    assert np.all(r.generation == 1)
    assert sorted(r.element_parent) == [0, 0, 1, 1]
    assert r.new_vertex_edges.shape == (1, 2)
    va, vb = r.new_vertex_edges[0]
    assert np.allclose(0.5 * (m.vertices[va] + m.vertices[vb]), [0.0, 0.0])
    assert np.all(r.areas() > 0)
    brute_force_conformity(r)
    assert r.parent is m


def test_bisect_empty_marked_is_identity():
    m = build_structured(4)
    r = bisect(m, [])
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.element_parent, np.arange(m.num_triangles))
    assert r.new_vertex_edges.shape == (0, 2)


def test_bisect_rejects_bad_ids():
    m = build_structured(3)
    with pytest.raises(ValueError):
        bisect(m, [m.num_triangles])
    with pytest.raises(ValueError):
        bisect(m, [-1])


def test_uniform_bisect_red_pattern_counts():
    # bisecting all elements twice reproduces the criss-cross refinement:
    # each original cell gains its diagonal midpoint, then its side midpoints
    m = build_structured(3)
    r1 = uniform_bisect(m)
    assert r1.num_vertices == 9 + 4
    assert r1.num_triangles == 16
    r2 = uniform_bisect(r1)
    assert r2.num_vertices == 25
    assert r2.num_triangles == 32
    brute_force_conformity(r2)


def test_vertex_prefix_and_midpoint_provenance():
    rng = np.random.default_rng(3)
    m = build_structured(4)
    for _ in range(4):
        marked = rng.choice(m.num_triangles, size=max(1, m.num_triangles // 4),
                            replace=False)
        r = bisect(m, marked)
        nv = m.num_vertices
        assert np.array_equal(r.vertices[:nv], m.vertices)
        # every appended vertex is the midpoint of its recorded edge, and the
        # recorded endpoints always precede it
        for k, (va, vb) in enumerate(r.new_vertex_edges):
            assert va < nv + k and vb < nv + k
            assert np.allclose(r.vertices[nv + k],
                               0.5 * (r.vertices[va] + r.vertices[vb]))
        m = r


def test_marked_elements_are_gone_after_bisect():
    m = build_structured(5)
    rng = np.random.default_rng(11)
    marked = rng.choice(m.num_triangles, size=6, replace=False)
    r = bisect(m, marked)
    # a marked parent id may appear among element_parent only via its children,
    # which have strictly larger generation
    for t in marked:
        child_ids = np.flatnonzero(r.element_parent == t)
        assert len(child_ids) >= 2
        assert np.all(r.generation[child_ids] >= m.generation[t] + 1)


def test_random_refinement_sequences_stay_conforming():
    rng = np.random.default_rng(42)
    for trial in range(20):
        m = build_structured(int(rng.integers(3, 6)))
        for _ in range(int(rng.integers(2, 5))):
            k = int(rng.integers(1, max(2, m.num_triangles // 3)))
            marked = rng.choice(m.num_triangles, size=k, replace=False)
            r = bisect(m, marked)
            assert np.all(r.areas() > 0)
            brute_force_conformity(r)
            r.validate()
            assert np.isclose(r.areas().sum(), 4.0)
            m = r


def test_child_area_is_half_parent_area():
    rng = np.random.default_rng(7)
    m = build_structured(5)
    for _ in range(3):
        marked = rng.choice(m.num_triangles, size=8, replace=False)
        r = bisect(m, marked)
        pa = m.areas()
        ca = r.areas()
        for i in range(r.num_triangles):
            p = r.element_parent[i]
            gen_up = r.generation[i] - m.generation[p]
            assert abs(ca[i] - pa[p] / 2.0 ** gen_up) <= 1e-14 * pa[p]
        m = r


def test_similarity_classes_bounded():
    # newest-vertex bisection generates at most 4 similarity classes per root
    m0 = build_structured(3)
    root = np.arange(m0.num_triangles)
    m = m0
    shapes = {}
    for _ in range(6):
        r = uniform_bisect(m)
        root = root[r.element_parent]
        m = r
        p = m.vertices[m.triangles]
        sides = np.stack([
            np.sum((p[:, 1] - p[:, 2]) ** 2, axis=1),
            np.sum((p[:, 2] - p[:, 0]) ** 2, axis=1),
            np.sum((p[:, 0] - p[:, 1]) ** 2, axis=1),
        ], axis=1)
        sides.sort(axis=1)
        norm = sides / m.areas()[:, None]
        for t in range(m.num_triangles):
            sig = tuple(np.round(norm[t], 9))
            shapes.setdefault(root[t], set()).add(sig)
    assert max(len(v) for v in shapes.values()) <= 4


def test_meshsize_is_sqrt_area():
    m = build_structured(7)
    assert np.allclose(meshsize(m), np.sqrt(m.areas()))


def test_boundary_band_rings():
    m = build_structured(21)
    # oracle by direct coordinate enumeration: spacing is 0.1, so d0 = 0.1
    # captures exactly the outermost two vertex rings
    band = boundary_band(m, 0.1)
    expect = np.flatnonzero(np.max(np.abs(m.vertices), axis=1) >= 0.9 - 1e-9)
    assert np.array_equal(band.zero_nodes, expect)
    assert len(band.zero_nodes) == 80 + 72

    only_edge = boundary_band(m, 0.0)
    expect0 = np.flatnonzero(np.max(np.abs(m.vertices), axis=1) >= 1.0 - 1e-12)
    assert np.array_equal(only_edge.zero_nodes, expect0)
    assert len(only_edge.zero_nodes) == 80


def test_boundary_band_monotone_in_d0():
    m = build_structured(14)
    prev = boundary_band(m, 0.0).mask
    for d0 in np.linspace(0.05, 1.0, 12):
        cur = boundary_band(m, d0).mask
        assert np.all(prev <= cur)
        prev = cur
    assert prev.all()


def test_boundary_band_rejects_negative():
    m = build_structured(3)
    with pytest.raises(ValueError):
        boundary_band(m, -0.5)


def test_validate_accepts_good_and_rejects_flipped():
    m = build_structured(4)
    assert m.validate()
    bad = TriMesh(m.vertices, m.triangles[:, [0, 2, 1]])
    with pytest.raises(MeshConformityError):
        bad.validate()
