"""Conforming triangle meshes of the square (-1,1)^2 with newest-vertex bisection.

Triangles are stored as positively oriented vertex triples ``(v0, v1, v2)``
whose refinement edge is always the edge opposite ``v0``, i.e. ``(v1, v2)``.
Bisection inserts the midpoint ``m`` of that edge and replaces the triangle by
``(m, v0, v1)`` and ``(m, v2, v0)``, so the new vertex becomes the first
(newest) vertex of both children and the parent's legs become the children's
refinement edges.  Recursive closure keeps the mesh conforming.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshConformityError(RuntimeError):
    """Refinement bookkeeping produced an inconsistent triangulation."""


@dataclass(frozen=True)
class EdgeTables:
    """Edge connectivity of a mesh.

    ``edges`` holds each undirected edge once as ``(va, vb)`` with ``va < vb``.
    ``tri_plus`` / ``tri_minus`` are the incident triangle ids (``tri_minus``
    is -1 on the boundary).  ``normal`` is the unit normal pointing from the
    plus side into the minus side; on boundary edges it is the outward normal.
    ``tri_edges[t, j]`` is the edge id opposite local vertex ``j`` of triangle
    ``t``.  Jumps across edge ``e`` are evaluated as
    ``q_plus . normal[e] - q_minus . normal[e]``.
    """

    edges: np.ndarray
    tri_plus: np.ndarray
    tri_minus: np.ndarray
    normal: np.ndarray
    length: np.ndarray
    tri_edges: np.ndarray

    @property
    def is_boundary(self):
        return self.tri_minus < 0

    @property
    def num_edges(self):
        return len(self.edges)


@dataclass(frozen=True)
class BandMask:
    """Vertices pinned to zero near the boundary of the square."""

    mask: np.ndarray  # bool per vertex
    d0: float

    @property
    def zero_nodes(self):
        return np.flatnonzero(self.mask)


class TriMesh:
    """Immutable conforming triangulation with bisection provenance.

    Provenance fields link a refined mesh to the mesh it was produced from:
    ``parent`` is that mesh, ``new_vertex_edges`` lists, in creation order,
    the endpoint ids of the edge each appended vertex bisected (endpoint ids
    refer to this mesh's own numbering, and always precede the new vertex),
    and ``element_parent[t]`` is the id in ``parent`` of the element that
    triangle ``t`` descends from.  Root meshes carry ``parent = None``.
    """

    def __init__(self, vertices, triangles, generation=None, *, parent=None,
                 new_vertex_edges=None, element_parent=None, structured_n=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be an (N, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be an (M, 3) array")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle indices out of range")
        if generation is None:
            generation = np.zeros(len(self.triangles), dtype=np.int64)
        self.generation = np.ascontiguousarray(generation, dtype=np.int64)
        if len(self.generation) != len(self.triangles):
            raise ValueError("generation must have one entry per triangle")
        self.parent = parent
        self.new_vertex_edges = (np.zeros((0, 2), dtype=np.int64)
                                 if new_vertex_edges is None
                                 else np.asarray(new_vertex_edges, dtype=np.int64))
        self.element_parent = (None if element_parent is None
                               else np.asarray(element_parent, dtype=np.int64))
        self.structured_n = structured_n
        self._areas = None
        self._edge_tables = None

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    def areas(self):
        if self._areas is None:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._areas

    def meshsize(self):
        """Per-element size h_T = |T|^(1/2)."""
        return np.sqrt(self.areas())

    def refinement_edges(self):
        """Vertex pairs (v1, v2) of each triangle's refinement edge."""
        return self.triangles[:, 1:3].copy()

    def edge_tables(self) -> EdgeTables:
        if self._edge_tables is None:
            self._edge_tables = _build_edge_tables(self)
        return self._edge_tables

    def boundary_vertices(self):
        et = self.edge_tables()
        return np.unique(et.edges[et.is_boundary])

    def validate(self):
        """Check orientation, conformity and index sanity; raise on failure."""
        if not np.all(self.areas() > 0):
            raise MeshConformityError("non-positive element area")
        tri_sorted = np.sort(self.triangles, axis=1)
        if np.any(tri_sorted[:, 0] == tri_sorted[:, 1]) or np.any(tri_sorted[:, 1] == tri_sorted[:, 2]):
            raise MeshConformityError("degenerate triangle (repeated vertex)")
        et = self.edge_tables()
        # every edge is shared by one or two triangles; hanging nodes would
        # show up as a vertex lying strictly inside some edge
        if np.any(np.bincount(self.triangles.ravel(), minlength=self.num_vertices) == 0):
            raise MeshConformityError("orphan vertex")
        _check_no_hanging_nodes(self, et)
        return True


def build_structured(n: int) -> TriMesh:
    """Structured n-per-side triangulation of (-1,1)^2.

    Each grid cell is split along its (bottom-left to top-right) diagonal and
    the diagonal is the refinement edge of both triangles, so a bisect-all
    pass reproduces the classical criss-cross pattern.
    """
    if n < 2:
        raise ValueError("need at least 2 vertices per side")
    t = np.linspace(-1.0, 1.0, n)
    x, y = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([x.ravel(), y.ravel()])

    ix, iy = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="xy")
    p00 = (iy * n + ix).ravel()
    p10 = p00 + 1
    p01 = p00 + n
    p11 = p01 + 1
    lower = np.column_stack([p10, p11, p00])
    upper = np.column_stack([p01, p00, p11])
    triangles = np.empty((2 * len(lower), 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return TriMesh(vertices, triangles, structured_n=n)


def _build_edge_tables(mesh: TriMesh) -> EdgeTables:
    tris = mesh.triangles
    m = len(tris)
    # local edge j is opposite local vertex j
    pairs = np.concatenate([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]])
    owner = np.tile(np.arange(m), 3)
    local = np.repeat(np.arange(3), m)
    key = np.sort(pairs, axis=1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    ne = len(uniq)

    tri_plus = np.full(ne, -1, dtype=np.int64)
    tri_minus = np.full(ne, -1, dtype=np.int64)
    plus_local = np.full(ne, -1, dtype=np.int64)
    tri_edges = np.empty((m, 3), dtype=np.int64)
    # lower triangle id becomes the plus side so the orientation is stable
    order = np.lexsort((local, owner))
    for idx in order:
        e = inverse[idx]
        if tri_plus[e] < 0:
            tri_plus[e] = owner[idx]
            plus_local[e] = local[idx]
        elif tri_minus[e] < 0:
            tri_minus[e] = owner[idx]
        else:
            raise MeshConformityError("edge shared by more than two triangles")
        tri_edges[owner[idx], local[idx]] = e

    pv = mesh.vertices
    vec = pv[uniq[:, 1]] - pv[uniq[:, 0]]
    length = np.hypot(vec[:, 0], vec[:, 1])
    if np.any(length <= 0):
        raise MeshConformityError("zero-length edge")
    normal = np.column_stack([vec[:, 1], -vec[:, 0]]) / length[:, None]
    # orient away from the plus triangle's opposite vertex: outward on the
    # boundary, plus-to-minus across interior edges
    opp = tris[tri_plus, plus_local]
    mid = 0.5 * (pv[uniq[:, 0]] + pv[uniq[:, 1]])
    flip = np.einsum("ij,ij->i", normal, mid - pv[opp]) < 0
    normal[flip] *= -1.0
    return EdgeTables(edges=uniq, tri_plus=tri_plus, tri_minus=tri_minus,
                      normal=normal, length=length, tri_edges=tri_edges)


def _check_no_hanging_nodes(mesh: TriMesh, et: EdgeTables):
    # a hanging node is a vertex coinciding with the midpoint of some edge
    # that is itself a mesh vertex; detect via exact coordinate matching
    mids = 0.5 * (mesh.vertices[et.edges[:, 0]] + mesh.vertices[et.edges[:, 1]])
    coords = {(float(x), float(y)) for x, y in mesh.vertices}
    for k, (mx, my) in enumerate(mids):
        if (float(mx), float(my)) in coords:
            raise MeshConformityError(
                f"hanging node at midpoint of edge {tuple(et.edges[k])}")


def bisect(mesh: TriMesh, marked) -> TriMesh:
    """Refine all marked elements by newest-vertex bisection.

    Compatibility closure may split additional elements.  The returned mesh
    shares the parent's vertex numbering as a prefix, appends edge midpoints
    in creation order, and records provenance for field transfer.
    """
    marked = np.atleast_1d(np.asarray(marked, dtype=np.int64))
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.num_triangles):
        raise ValueError("marked element id out of range")

    verts = [tuple(v) for v in mesh.vertices]
    tris = [tuple(t) for t in mesh.triangles]
    gen = list(mesh.generation)
    origin = list(range(len(tris)))
    alive = [True] * len(tris)
    new_edges = []

    edge_map: dict[tuple[int, int], list[int]] = {}

    def _register(t):
        a, b, c = tris[t]
        for e in ((min(b, c), max(b, c)), (min(c, a), max(c, a)), (min(a, b), max(a, b))):
            edge_map.setdefault(e, []).append(t)

    def _unregister(t):
        a, b, c = tris[t]
        for e in ((min(b, c), max(b, c)), (min(c, a), max(c, a)), (min(a, b), max(a, b))):
            edge_map[e].remove(t)

    for t in range(len(tris)):
        _register(t)

    def _ref_edge(t):
        _, a, b = tris[t]
        return (min(a, b), max(a, b))

    def _do_bisect(t, mid):
        c, a, b = tris[t]
        _unregister(t)
        alive[t] = False
        for child in ((mid, c, a), (mid, b, c)):
            tris.append(child)
            gen.append(gen[t] + 1)
            origin.append(origin[t])
            alive.append(True)
            _register(len(tris) - 1)

    def _split_conforming(t0):
        stack = [t0]
        guard = 0
        while stack:
            guard += 1
            if guard > 8 * (len(tris) + 8):
                raise MeshConformityError("bisection closure did not terminate")
            t = stack[-1]
            if not alive[t]:
                stack.pop()
                continue
            e = _ref_edge(t)
            incident = edge_map[e]
            partner = None
            for s in incident:
                if s != t:
                    partner = s
            if partner is not None and _ref_edge(partner) != e:
                stack.append(partner)
                continue
            va, vb = e
            mid = len(verts)
            verts.append(((verts[va][0] + verts[vb][0]) / 2.0,
                          (verts[va][1] + verts[vb][1]) / 2.0))
            new_edges.append((va, vb))
            _do_bisect(t, mid)
            if partner is not None:
                _do_bisect(partner, mid)
            stack.pop()

    for t in sorted(set(int(t) for t in marked)):
        if alive[t]:
            _split_conforming(t)

    keep = [i for i in range(len(tris)) if alive[i]]
    out = TriMesh(np.array(verts, dtype=float),
                  np.array([tris[i] for i in keep], dtype=np.int64),
                  np.array([gen[i] for i in keep], dtype=np.int64),
                  parent=mesh,
                  new_vertex_edges=np.array(new_edges, dtype=np.int64).reshape(-1, 2),
                  element_parent=np.array([origin[i] for i in keep], dtype=np.int64))
    return out


def uniform_bisect(mesh: TriMesh) -> TriMesh:
    """Bisect every element once (closure may bisect some twice)."""
    return bisect(mesh, np.arange(mesh.num_triangles))


def meshsize(mesh: TriMesh):
    """Per-element size map h_T = |T|^(1/2)."""
    return mesh.meshsize()


def boundary_band(mesh: TriMesh, d0: float) -> BandMask:
    """Vertices within distance d0 of the boundary of the square (-1,1)^2.

    The comparison tolerates 1e-12 of rounding so that grid rings lying
    exactly at distance d0 are included.
    """
    if d0 < 0:
        raise ValueError("d0 must be nonnegative")
    x = mesh.vertices
    dist = np.minimum(1.0 - np.abs(x[:, 0]), 1.0 - np.abs(x[:, 1]))
    return BandMask(mask=dist <= d0 + 1e-12, d0=d0)
