"""Half-edge planar maps with explicit rotation systems.

Vertices are integers ``0..n-1``.  Every directed edge is a half-edge with an
integer id; the map stores, per half-edge, its origin vertex and its twin, and
per vertex the counterclockwise cyclic order of outgoing half-edges.  Faces are
the orbits of ``next = rotation_successor(twin(h))`` and are computed once at
construction; maps are immutable afterwards.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


class MapError(ValueError):
    """Structural problem in planar-map input data."""


@dataclass(frozen=True)
class MapDiagnostics:
    n_vertices: int
    n_edges: int
    n_faces: int
    euler_characteristic: int
    connected: bool
    has_loops: bool
    has_multi_edges: bool
    face_degree_histogram: dict = field(default_factory=dict)

    @property
    def is_simple(self) -> bool:
        return not (self.has_loops or self.has_multi_edges)


class HalfEdgeMap:
    """A finite planar map given by a rotation system.

    Attributes
    ----------
    n_vertices : int
    rot : list[list[int]]
        Per vertex, outgoing half-edge ids in counterclockwise order.
    org, twin, nxt : list[int]
        Per half-edge: origin vertex, twin half-edge, face successor.
    faces : list[tuple[int, ...]]
        Half-edge cycles; ``face_of[h]`` gives the face index of ``h``.
    outer_face : int | None
        Explicitly marked unbounded face of a finite truncation.
    """

    def __init__(self, rot, twin, org=None, outer_face=None):
        n = len(rot)
        if org is None:
            org = [0] * sum(len(r) for r in rot)
            for v, hs in enumerate(rot):
                for h in hs:
                    org[h] = v
        m = len(org)
        if len(twin) != m:
            raise MapError("twin table length does not match half-edge count")
        for h in range(m):
            if twin[twin[h]] != h or twin[h] == h:
                raise MapError(f"twin is not a fixed-point-free involution at half-edge {h}")
            if org[h] == org[twin[h]]:
                raise MapError(f"loop at vertex {org[h]} (half-edge {h}); loops are not supported")
        self.n_vertices = n
        self.rot = [list(hs) for hs in rot]
        self.org = list(org)
        self.twin = list(twin)
        # position of each half-edge inside its origin's rotation
        self._rot_pos = [0] * m
        for v, hs in enumerate(self.rot):
            for i, h in enumerate(hs):
                if org[h] != v:
                    raise MapError(f"half-edge {h} listed at vertex {v} but originates at {org[h]}")
                self._rot_pos[h] = i
        # next(h): predecessor of twin(h) in the rotation at its origin, so
        # that with counterclockwise rotations every bounded face cycle runs
        # counterclockwise (face to the left of each half-edge)
        self.nxt = [0] * m
        for h in range(m):
            t = twin[h]
            v = org[t]
            hs = self.rot[v]
            self.nxt[h] = hs[(self._rot_pos[t] - 1) % len(hs)]
        # face cycles
        self.faces = []
        self.face_of = [-1] * m
        for h in range(m):
            if self.face_of[h] >= 0:
                continue
            cyc = []
            g = h
            while self.face_of[g] < 0:
                self.face_of[g] = len(self.faces)
                cyc.append(g)
                g = self.nxt[g]
            self.faces.append(tuple(cyc))
        self.outer_face = outer_face

    # -- basic queries ---------------------------------------------------

    @property
    def n_half_edges(self):
        return len(self.org)

    @property
    def n_edges(self):
        return len(self.org) // 2

    @property
    def n_faces(self):
        return len(self.faces)

    def target(self, h):
        return self.org[self.twin[h]]

    def degree(self, v):
        return len(self.rot[v])

    def neighbors(self, v):
        """Neighbor vertices of v in counterclockwise order (with multiplicity)."""
        return [self.target(h) for h in self.rot[v]]

    def half_edge(self, u, v):
        """Some half-edge from u to v (first in rotation order)."""
        for h in self.rot[u]:
            if self.target(h) == v:
                return h
        raise MapError(f"no edge between {u} and {v}")

    def edges(self):
        """One (u, v, h) triple per undirected edge, h the lower half-edge id."""
        out = []
        for h in range(len(self.org)):
            if h < self.twin[h]:
                out.append((self.org[h], self.target(h), h))
        return out

    def face_vertices(self, f):
        return tuple(self.org[h] for h in self.faces[f])

    def face_degree(self, f):
        return len(self.faces[f])

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    def is_connected(self):
        if self.n_vertices == 0:
            return True
        seen = [False] * self.n_vertices
        q = deque([0])
        seen[0] = True
        cnt = 1
        while q:
            v = q.popleft()
            for h in self.rot[v]:
                w = self.target(h)
                if not seen[w]:
                    seen[w] = True
                    cnt += 1
                    q.append(w)
        return cnt == self.n_vertices

    def graph_distances(self, v0):
        dist = [-1] * self.n_vertices
        dist[v0] = 0
        q = deque([v0])
        while q:
            v = q.popleft()
            for h in self.rot[v]:
                w = self.target(h)
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    q.append(w)
        return dist

    def has_multi_edges(self):
        for v in range(self.n_vertices):
            nb = self.neighbors(v)
            if len(nb) != len(set(nb)):
                return True
        return False

    def validate(self) -> MapDiagnostics:
        hist = {}
        for f in range(self.n_faces):
            d = self.face_degree(f)
            hist[d] = hist.get(d, 0) + 1
        return MapDiagnostics(
            n_vertices=self.n_vertices,
            n_edges=self.n_edges,
            n_faces=self.n_faces,
            euler_characteristic=self.euler_characteristic(),
            connected=self.is_connected(),
            has_loops=False,  # rejected at construction
            has_multi_edges=self.has_multi_edges(),
            face_degree_histogram=hist,
        )

    # -- serialization ---------------------------------------------------

    def to_text(self):
        lines = [f"halfedgemap {self.n_vertices}"]
        for v in range(self.n_vertices):
            nb = " ".join(str(self.target(h)) for h in self.rot[v])
            lines.append(f"vertex {v}: {nb}")
        if self.has_multi_edges():
            for v in range(self.n_vertices):
                tw = " ".join(str(self.twin[h]) for h in self.rot[v])
                lines.append(f"pairing {v}: {tw}")
        for f in range(self.n_faces):
            vs = " ".join(str(v) for v in self.face_vertices(f))
            lines.append(f"face {f}: {vs}")
        if self.outer_face is not None:
            lines.append(f"outer {self.outer_face}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text):
        rot_lists = {}
        pairing = {}
        outer = None
        n = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("halfedgemap"):
                n = int(line.split()[1])
            elif line.startswith("vertex"):
                head, rest = line.split(":", 1)
                v = int(head.split()[1])
                rot_lists[v] = [int(t) for t in rest.split()]
            elif line.startswith("pairing"):
                head, rest = line.split(":", 1)
                v = int(head.split()[1])
                pairing[v] = [int(t) for t in rest.split()]
            elif line.startswith("face"):
                continue  # faces are recomputed
            elif line.startswith("outer"):
                outer = int(line.split()[1])
        if n is None:
            raise MapError("missing halfedgemap header")
        neighbors = [rot_lists.get(v, []) for v in range(n)]
        if pairing:
            base = [0] * n
            for v in range(1, n):
                base[v] = base[v - 1] + len(neighbors[v - 1])
            rot = [[base[v] + i for i in range(len(neighbors[v]))] for v in range(n)]
            twin = [0] * (2 * sum(len(nb) for nb in neighbors) // 2)
            twin = [0] * sum(len(nb) for nb in neighbors)
            for v in range(n):
                for i, t in enumerate(pairing[v]):
                    twin[base[v] + i] = t
            org = [0] * len(twin)
            for v in range(n):
                for i in range(len(neighbors[v])):
                    org[base[v] + i] = v
            m = HalfEdgeMap(rot, twin, org, outer_face=outer)
        else:
            m = build_from_rotations(neighbors, outer_face=outer)
        return m


def build_from_rotations(neighbors, outer_face=None) -> HalfEdgeMap:
    """Build a map from per-vertex neighbor lists in counterclockwise order.

    Parallel edges are paired occurrence-by-occurrence (the k-th occurrence of
    u in v's list pairs with the k-th occurrence of v in u's list).  Loops and
    inconsistent multiplicities are rejected.
    """
    n = len(neighbors)
    base = [0] * n
    for v in range(1, n):
        base[v] = base[v - 1] + len(neighbors[v - 1])
    total = sum(len(nb) for nb in neighbors)
    org = [0] * total
    rot = []
    for v in range(n):
        hs = []
        for i, u in enumerate(neighbors[v]):
            if u == v:
                raise MapError(f"loop at vertex {v}; loops are not supported")
            if not (0 <= u < n):
                raise MapError(f"vertex {v} lists unknown neighbor {u}")
            h = base[v] + i
            org[h] = v
            hs.append(h)
        rot.append(hs)
    # occurrence tables
    occ = [{} for _ in range(n)]  # occ[v][u] = list of half-edge ids v->u in order
    for v in range(n):
        for i, u in enumerate(neighbors[v]):
            occ[v].setdefault(u, []).append(base[v] + i)
    twin = [-1] * total
    for v in range(n):
        for u, hs in occ[v].items():
            back = occ[u].get(v, [])
            if len(back) != len(hs):
                raise MapError(
                    f"inconsistent rotation data between vertices {v} and {u}: "
                    f"multiplicities {len(hs)} vs {len(back)}"
                )
            for h, t in zip(hs, back):
                twin[h] = t
    return HalfEdgeMap(rot, twin, org, outer_face=outer_face)


@dataclass
class RootedBall:
    """Combinatorial ball of radius m around a root vertex.

    ``submap`` uses fresh vertex ids; ``vertex_map[i]`` is the original id of
    submap vertex ``i``.  ``kept_faces`` lists original faces all of whose
    vertices lie inside the ball.
    """

    submap: HalfEdgeMap
    root: int
    radius: int
    vertex_map: list
    kept_faces: list

    def vertex_set(self):
        return set(self.vertex_map)


def bs_ball(m: HalfEdgeMap, v0: int, radius: int) -> RootedBall:
    """Submap induced by vertices at graph distance <= radius from v0."""
    dist = m.graph_distances(v0)
    keep = [v for v in range(m.n_vertices) if 0 <= dist[v] <= radius]
    old2new = {v: i for i, v in enumerate(keep)}
    neighbors = []
    for v in keep:
        nb = [old2new[m.target(h)] for h in m.rot[v] if m.target(h) in old2new]
        neighbors.append(nb)
    sub = build_from_rotations(neighbors)
    kept_faces = [
        f for f in range(m.n_faces)
        if all(v in old2new for v in m.face_vertices(f))
    ]
    return RootedBall(sub, old2new[v0], radius, keep, kept_faces)


def augment_faces(m: HalfEdgeMap) -> HalfEdgeMap:
    """Add one vertex inside every face, joined to all its incident vertices.

    Requires a simple map in which every face boundary is a simple cycle
    (true for 2-connected simple maps); the result is a simple triangulation.
    """
    if m.has_multi_edges():
        raise MapError("face augmentation requires a simple input map")
    for f in range(m.n_faces):
        vs = m.face_vertices(f)
        if len(vs) != len(set(vs)):
            raise MapError(
                f"face {f} visits a vertex twice (map not 2-connected); "
                "augmentation would create a multi-edge"
            )
    n = m.n_vertices
    neighbors = []
    for v in range(n):
        nb = []
        for h in m.rot[v]:
            nb.append(m.target(h))
            nb.append(n + m.face_of[h])  # corner of face_of(h) between h and its CCW successor
        neighbors.append(nb)
    for f in range(m.n_faces):
        neighbors.append([m.org[h] for h in m.faces[f]])
    out = build_from_rotations(neighbors)
    return out
