"""Glued equilateral surfaces, square-portions, semi-flowers, and discrete
conformal (circle-packing) approximations of their uniformization maps.

A surface is built by gluing regular unit-side polygons (usually equilateral
triangles) along the adjacencies of a planar map.  Portions carved out by a
square of the plane are subdivided and circle-packed maximally in the disk to
approximate the uniformizing map onto a round disk.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import MultiPoint, Point, Polygon, box

from .circle_pack import MAXIMAL, Triangulation, pack


class SurfaceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# the glued surface
# ---------------------------------------------------------------------------


class EquilateralSurface:
    """Surface obtained by gluing regular unit-side p-gons along a map.

    Every face carries the metric of the regular polygon with unit sides; an
    interior vertex incident to d faces has total cone angle d*(p-2)*pi/p.
    """

    def __init__(self, faces, n_vertices):
        F = [tuple(int(v) for v in f) for f in faces]
        if not F:
            raise SurfaceError("need at least one face")
        p = len(F[0])
        if p < 3 or any(len(f) != p for f in F):
            raise SurfaceError("all faces must be p-gons for a single p >= 3")
        for fi, f in enumerate(F):
            if len(set(f)) != p:
                raise SurfaceError(f"face {fi} revisits a vertex (loop)")
        self.faces = F
        self.p = p
        self.n_vertices = int(n_vertices)
        # directed edge -> (face, corner position of the edge tail)
        self._left = {}
        for fi, f in enumerate(F):
            for i in range(p):
                e = (f[i], f[(i + 1) % p])
                if e in self._left:
                    raise SurfaceError(
                        f"directed edge {e} appears twice; orientation inconsistent")
                self._left[e] = (fi, i)
        # rotation at each vertex: with CCW faces, the face at corner
        # (a, v, b) spans the sector from edge v->b CCW to edge v->a
        succ = [dict() for _ in range(self.n_vertices)]
        for f in F:
            for i in range(p):
                a, v, b = f[i - 1], f[i], f[(i + 1) % p]
                succ[v][b] = a
        self.rot = []
        self.is_boundary = np.zeros(self.n_vertices, dtype=bool)
        for v in range(self.n_vertices):
            s = succ[v]
            if not s:
                self.rot.append([])
                self.is_boundary[v] = True
                continue
            starts = set(s) - set(s.values())
            if len(starts) == 0:
                start, closed = next(iter(s)), True
            elif len(starts) == 1:
                start, closed = starts.pop(), False
                self.is_boundary[v] = True
            else:
                raise SurfaceError(f"vertex {v} has a disconnected fan")
            cyc = [start]
            w = s.get(start)
            while w is not None and w != start:
                cyc.append(w)
                w = s.get(w)
            want = len(s) if closed else len(s) + 1
            if len(cyc) != want:
                raise SurfaceError(f"vertex {v} has a disconnected fan")
            self.rot.append(cyc)
        self.interior_angle = (p - 2) * math.pi / p
        circum = 1.0 / (2.0 * math.sin(math.pi / p))
        self.frame = np.array(
            [circum * np.exp(2j * math.pi * (j + 0.5) / p) for j in range(p)])
        self.face_area = p / (4.0 * math.tan(math.pi / p))
        deg_faces = np.zeros(self.n_vertices, dtype=np.int64)
        for f in F:
            for v in f:
                deg_faces[v] += 1
        self.n_incident_faces = deg_faces
        self.cone_angles = deg_faces * self.interior_angle

    @property
    def n_faces(self):
        return len(self.faces)

    def left_face(self, u, v):
        hit = self._left.get((u, v))
        return None if hit is None else hit[0]

    def corner_coord(self, fi, v):
        """Position of vertex v in the standard frame of face fi."""
        return complex(self.frame[self.faces[fi].index(v)])

    def face_adjacency(self):
        adj = [[] for _ in range(self.n_faces)]
        for (u, v), (fi, _) in self._left.items():
            other = self._left.get((v, u))
            if other is not None:
                adj[fi].append(other[0])
        return adj

    def unfold(self, f_from, f_to):
        """Isometry (as a, b with z -> a + b*z) mapping the frame of f_to
        into the plane of f_from across their shared edge."""
        if f_from == f_to:
            return 0j, 1.0 + 0j
        shared = None
        ffrom = self.faces[f_from]
        for i in range(self.p):
            u, v = ffrom[i], ffrom[(i + 1) % self.p]
            hit = self._left.get((v, u))
            if hit is not None and hit[0] == f_to:
                shared = (u, v)
                break
        if shared is None:
            raise SurfaceError("faces do not share an edge")
        u, v = shared
        a1, b1 = self.corner_coord(f_from, u), self.corner_coord(f_from, v)
        a2, b2 = self.corner_coord(f_to, u), self.corner_coord(f_to, v)
        rot = (b1 - a1) / (b2 - a2)
        return a1 - rot * a2, rot

    def pair_distance(self, f1, z1, f2, z2):
        """Straight-line distance between points of one face or two adjacent
        faces after unfolding into a common plane."""
        off, rot = self.unfold(f1, f2)
        return abs(complex(z1) - (off + rot * complex(z2)))


def build_surface(source):
    """Glue unit regular polygons along the faces of a triangulation (or any
    consistently oriented p-gon face list)."""
    if isinstance(source, Triangulation):
        return EquilateralSurface(source.faces, source.n_vertices)
    faces = [tuple(f) for f in source]
    n = max(max(f) for f in faces) + 1
    return EquilateralSurface(faces, n)


# ---------------------------------------------------------------------------
# square portions
# ---------------------------------------------------------------------------


@dataclass
class SurfacePortion:
    """A disk-like union of faces carved out by a square of the plane."""

    surface: EquilateralSurface
    face_ids: np.ndarray
    vertices: np.ndarray
    boundary_loop: list
    square: tuple | None = None   # (cx, cy, side)
    a: float | None = None
    root_vertex: int | None = None
    diagnostic: str | None = None

    @property
    def empty(self):
        return len(self.face_ids) == 0

    @property
    def side(self):
        return self.square[2] if self.square is not None else None

    def area(self):
        return len(self.face_ids) * self.surface.face_area

    def to_text(self):
        head = "portion"
        if self.square is not None:
            cx, cy, s = self.square
            head += f" square {cx!r} {cy!r} {s!r} a {self.a!r}"
        lines = [head,
                 "faces " + " ".join(str(int(f)) for f in self.face_ids),
                 "boundary " + " ".join(str(int(v)) for v in self.boundary_loop)]
        return "\n".join(lines) + "\n"


def _face_subset_portion(surface, face_ids, square=None, a=None,
                         root_vertex=None):
    """Assemble a SurfacePortion from a set of faces, or None if the subset
    does not have disk topology."""
    fset = set(int(f) for f in face_ids)
    verts = sorted({v for f in fset for v in surface.faces[f]})
    # boundary edges: left face inside, right face outside (or absent)
    bsucc = {}
    n_bedges = 0
    for (u, v), (fi, _) in surface._left.items():
        if fi not in fset:
            continue
        other = surface._left.get((v, u))
        if other is None or other[0] not in fset:
            bsucc[u] = v
            n_bedges += 1
    n_edges = 0
    for (u, v) in surface._left:
        if u < v:
            fa = surface._left.get((u, v))
            fb = surface._left.get((v, u))
            if (fa and fa[0] in fset) or (fb and fb[0] in fset):
                n_edges += 1
        elif (v, u) not in surface._left:
            if surface._left[(u, v)][0] in fset:
                n_edges += 1
    if len(verts) - n_edges + len(fset) != 1:
        return None
    if len(bsucc) != n_bedges:
        return None  # a boundary vertex visited twice: pinched, not a disk
    if not bsucc:
        return None
    start = next(iter(bsucc))
    loop = [start]
    w = bsucc[start]
    while w != start and len(loop) <= n_bedges:
        loop.append(w)
        w = bsucc[w]
    if w != start or len(loop) != n_bedges:
        return None
    return SurfacePortion(surface, np.array(sorted(fset), dtype=np.int64),
                          np.array(verts, dtype=np.int64), loop,
                          square=square, a=a, root_vertex=root_vertex)


def build_M_S(config, surface, square, levels=32):
    """Largest disk-like sub-surface carved out by the square.

    For a trial inner size ``a`` the seed faces are those with a vertex whose
    cell meets the concentric square of side ``a``; bounded complementary
    components are filled in.  The returned portion uses the largest ``a`` on
    a dyadic grid for which the seed cells form a connected subgraph, the
    filled face set is a topological disk, and every portion vertex has its
    cell inside the square.  An empty portion with a diagnostic is returned
    when no ``a`` works.
    """
    cx, cy, side = (float(t) for t in square)
    Sbox = box(cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)
    adj_faces = surface.face_adjacency()
    reasons = []
    nbrs = None
    for j in range(levels - 1, 0, -1):
        a = side * j / levels
        inner = box(cx - a / 2, cy - a / 2, cx + a / 2, cy + a / 2)
        try:
            seed = config.cells_meeting(inner)
        except Exception as exc:  # carrier too small for this a
            reasons.append(f"a={a:g}: {exc}")
            continue
        if not seed:
            reasons.append(f"a={a:g}: no cells meet the inner square")
            continue
        if nbrs is None:
            nbrs = [list(config.map.neighbors(v)) for v in
                    range(config.map.n_vertices)]
        seed_set = set(seed)
        comp = {seed[0]}
        q = deque([seed[0]])
        while q:
            u = q.popleft()
            for w in nbrs[u]:
                if w in seed_set and w not in comp:
                    comp.add(w)
                    q.append(w)
        if len(comp) != len(seed_set):
            reasons.append(f"a={a:g}: seed cells disconnected")
            continue
        m0 = {fi for fi, f in enumerate(surface.faces)
              if any(v in seed_set for v in f)}
        # fill bounded complementary components
        outside = set(range(surface.n_faces)) - m0
        seen = set()
        fill = set()
        for f0 in outside:
            if f0 in seen:
                continue
            compf = {f0}
            q = deque([f0])
            unbounded = False
            while q:
                g = q.popleft()
                if any(surface.is_boundary[v] for v in surface.faces[g]):
                    unbounded = True
                for h in adj_faces[g]:
                    if h in outside and h not in compf:
                        compf.add(h)
                        q.append(h)
            seen |= compf
            if not unbounded:
                fill |= compf
        face_ids = m0 | fill
        portion = _face_subset_portion(surface, face_ids, square=(cx, cy, side), a=a)
        if portion is None:
            reasons.append(f"a={a:g}: face set is not a disk")
            continue
        bad = None
        for v in portion.vertices:
            cell = config.cells[v]
            if cell is None or not Sbox.covers(cell.polygon):
                bad = v
                break
        if bad is not None:
            reasons.append(f"a={a:g}: cell of vertex {bad} leaves the square")
            continue
        center = complex(cx, cy)
        on_loop = set(portion.boundary_loop)
        inner_vs = [v for v in portion.vertices if v not in on_loop]
        pool = inner_vs if inner_vs else list(portion.vertices)
        portion.root_vertex = int(min(
            pool, key=lambda v: abs(config.positions[v] - center)))
        return portion
    diag = "no valid inner size: " + ("; ".join(reasons[-3:]) if reasons
                                      else "square too small")
    return SurfacePortion(surface, np.empty(0, dtype=np.int64),
                          np.empty(0, dtype=np.int64), [],
                          square=(cx, cy, side), diagnostic=diag)


# ---------------------------------------------------------------------------
# subdivision
# ---------------------------------------------------------------------------


@dataclass
class Subdivision:
    """Level-n refinement of a portion into small triangles.

    Each triangular face splits into n^2 congruent copies; p-gon faces are
    first fanned from the face center into p isoceles triangles.  Subdivision
    vertices carry their intrinsic location (parent face, frame coordinate).
    """

    tri: Triangulation
    portion: SurfacePortion
    n: int
    original_vertex: dict
    locations: list                  # per sub-vertex (local face idx, coord)
    sub_face_parent: np.ndarray      # per sub-face: local index into face_ids
    sub_face_coords: np.ndarray = None  # per sub-face corner coords, parent frame
    _face_cache: dict = field(default_factory=dict, repr=False)

    def faces_of_parent(self, local):
        if not self._face_cache:
            for sf, par in enumerate(self.sub_face_parent):
                self._face_cache.setdefault(int(par), []).append(sf)
        return self._face_cache.get(int(local), [])


def subdivide(portion, n):
    """Refine every face of the portion into n^2 triangles (per fan wedge for
    p-gons), sharing vertices along common edges."""
    n = int(n)
    if n < 1:
        raise ValueError("subdivision level must be >= 1")
    surf = portion.surface
    p = surf.p
    index = {}
    locations = []
    faces = []
    parents = []
    face_coords = []

    def node(key, local, z):
        i = index.get(key)
        if i is None:
            i = len(locations)
            index[key] = i
            locations.append((local, z))
        return i

    for local, fi in enumerate(portion.face_ids):
        fi = int(fi)
        fverts = surf.faces[fi]
        if p == 3:
            wedges = [((("v", fverts[0]), surf.frame[0]),
                       (("v", fverts[1]), surf.frame[1]),
                       (("v", fverts[2]), surf.frame[2]))]
        else:
            c = (("c", fi), 0j)
            wedges = [(c,
                       (("v", fverts[j]), surf.frame[j]),
                       (("v", fverts[(j + 1) % p]), surf.frame[(j + 1) % p]))
                      for j in range(p)]
        for (ka, za), (kb, zb), (kc, zc) in wedges:
            grid = {}
            coords = {}
            for i in range(n + 1):
                for j in range(n + 1 - i):
                    z = za + (i / n) * (zb - za) + (j / n) * (zc - za)
                    if i == 0 and j == 0:
                        key = ka
                    elif i == n and j == 0:
                        key = kb
                    elif i == 0 and j == n:
                        key = kc
                    elif j == 0:
                        key = _edge_key(ka, kb, i, n)
                    elif i == 0:
                        key = _edge_key(ka, kc, j, n)
                    elif i + j == n:
                        key = _edge_key(kb, kc, j, n)
                    else:
                        key = ("w", fi, ka, kb, i, j)
                    grid[(i, j)] = node(key, local, complex(z))
                    coords[(i, j)] = complex(z)
            for i in range(n):
                for j in range(n - i):
                    faces.append((grid[(i, j)], grid[(i + 1, j)],
                                  grid[(i, j + 1)]))
                    face_coords.append((coords[(i, j)], coords[(i + 1, j)],
                                        coords[(i, j + 1)]))
                    parents.append(local)
                    if i + j < n - 1:
                        faces.append((grid[(i + 1, j)], grid[(i + 1, j + 1)],
                                      grid[(i, j + 1)]))
                        face_coords.append((coords[(i + 1, j)],
                                            coords[(i + 1, j + 1)],
                                            coords[(i, j + 1)]))
                        parents.append(local)
    tri = Triangulation(len(locations), faces)
    original = {v: index[("v", int(v))] for v in portion.vertices}
    return Subdivision(tri, portion, n, original, locations,
                       np.array(parents, dtype=np.int64),
                       np.array(face_coords, dtype=complex))


def _edge_key(ka, kb, t, n):
    if kb < ka:
        ka, kb, t = kb, ka, n - t
    return ("e", ka, kb, t)


# ---------------------------------------------------------------------------
# discrete conformal approximation
# ---------------------------------------------------------------------------


@dataclass
class DiscreteConformalMap:
    """Circle-packing approximation to the uniformization of a portion.

    Vertex images live in the closed disk of radius ``scale`` with the root
    at 0; boundary vertices sit on the bounding circle at their horocycle
    tangency points.
    """

    subdivision: Subdivision
    images: np.ndarray     # complex, per subdivision vertex
    radii: np.ndarray
    scale: float
    root_sub: int
    anchor: int | None = None

    def vertex_image(self, v):
        """Image of an original (surface) vertex of the portion."""
        return complex(self.images[self.subdivision.original_vertex[int(v)]])

    def eval(self, local_face, z):
        """Piecewise-linear image of an intrinsic point (face-frame coords)."""
        sub = self.subdivision
        z = complex(z)
        best, best_err = None, math.inf
        for sf in sub.faces_of_parent(int(local_face)):
            ia, ib, ic = sub.tri.faces[sf]
            za, zb, zc = sub.sub_face_coords[sf]
            den = ((zb - za).real * (zc - za).imag
                   - (zb - za).imag * (zc - za).real)
            if den == 0:
                continue
            w = z - za
            lb = (w.real * (zc - za).imag - w.imag * (zc - za).real) / den
            lc = ((zb - za).real * w.imag - (zb - za).imag * w.real) / den
            la = 1.0 - lb - lc
            err = -min(la, lb, lc)
            if err < best_err:
                best_err = err
                best = (la * self.images[ia] + lb * self.images[ib]
                        + lc * self.images[ic])
            if err <= 1e-9:
                break
        if best is None or best_err > 1e-6:
            raise SurfaceError("point not on the requested face")
        return complex(best)

    def orientation_violations(self, tol=None):
        """Sub-faces whose image triangle has negative signed area.

        Faces pinched against boundary corners collapse to (numerically)
        zero area; those are tolerated up to ``tol``.
        """
        if tol is None:
            tol = 1e-9 * self.scale**2
        bad = []
        for sf, (a, b, c) in enumerate(self.subdivision.tri.faces):
            za, zb, zc = self.images[a], self.images[b], self.images[c]
            area = ((zb - za).real * (zc - za).imag
                    - (zb - za).imag * (zc - za).real)
            if area < -tol:
                bad.append(sf)
        return bad

    def to_text(self):
        lines = [f"conformalmap n {self.subdivision.n} scale {self.scale!r} "
                 f"root {self.root_sub}"]
        for v in range(len(self.images)):
            z = self.images[v]
            lines.append(f"{v} {float(z.real)!r} {float(z.imag)!r}")
        return "\n".join(lines) + "\n"

    def to_svg(self, path=None):
        s = self.scale
        sw = 0.002 * s
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" '
               f'viewBox="{-1.05 * s} {-1.05 * s} {2.1 * s} {2.1 * s}">',
               f'<circle cx="0" cy="0" r="{s}" fill="none" stroke="red" '
               f'stroke-width="{sw}"/>']
        for (u, v) in self.subdivision.tri.edges:
            a, b = self.images[u], self.images[v]
            out.append(f'<line x1="{a.real}" y1="{-a.imag}" x2="{b.real}" '
                       f'y2="{-b.imag}" stroke="black" stroke-width="{sw}"/>')
        out.append("</svg>")
        text = "\n".join(out)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


MAX_SUBDIVISION_VERTICES = 5_000_000


def _horocycle_tangency(centers, radii):
    """Ideal tangency point (on the unit circle) of the horocycle tangent to
    the given interior circles, by Gauss-Newton on (angle, size)."""
    cs = np.asarray(centers, dtype=complex)
    rs = np.asarray(radii, dtype=float)
    dirs = cs / np.abs(cs)
    if np.all(rs < 1e-12):
        # neighbors are themselves ideal points: the tangency is pinched
        # between them and Gauss-Newton is underdetermined
        m = dirs.sum()
        return m / abs(m)
    theta = float(np.angle(dirs.sum()))
    s = float(np.clip(np.mean(1.0 - np.abs(cs) - rs), 1e-12, 0.9))
    for _ in range(60):
        zeta = np.exp(1j * theta)
        ch = (1.0 - s) * zeta
        d = np.abs(ch - cs)
        f = d - (s + rs)
        # partials of |ch - c| in theta and s
        unit = (ch - cs) / d
        dtheta = (unit.conjugate() * (1j * (1.0 - s) * zeta)).real
        ds = (unit.conjugate() * (-zeta)).real - 1.0
        J = np.column_stack([dtheta, ds])
        step, *_ = np.linalg.lstsq(J, -f, rcond=None)
        theta += float(step[0])
        s = float(np.clip(s + step[1], 1e-14, 0.999))
        if np.max(np.abs(step)) < 1e-14:
            break
    return np.exp(1j * theta)


def uniformize_approx(portion, n, tol=1e-12, root=None, scale=None):
    """Approximate the uniformization of the portion onto a round disk by
    maximally circle-packing its level-n subdivision.

    The designated (root) vertex maps to 0; images are scaled to the disk of
    radius ``scale`` (the portion's square side by default) and rotated so
    the anchor vertex has argument 0, making maps at different n comparable.
    """
    if portion.empty:
        raise SurfaceError("cannot uniformize an empty portion")
    sub = subdivide(portion, n)
    if sub.tri.n_vertices > MAX_SUBDIVISION_VERTICES:
        raise SurfaceError("subdivision too large; lower n")
    if scale is None:
        scale = portion.side if portion.side is not None else 1.0
    if root is None:
        root = portion.root_vertex
    if root is not None:
        root_sub = sub.original_vertex[int(root)]
        if sub.tri.is_boundary[root_sub]:
            root_sub = None
    else:
        root_sub = None
    if root_sub is None:
        # deepest interior vertex (graph distance from the boundary)
        depth = np.full(sub.tri.n_vertices, -1, dtype=np.int64)
        q = deque()
        for v in sub.tri.boundary:
            depth[v] = 0
            q.append(int(v))
        nbr = [[] for _ in range(sub.tri.n_vertices)]
        for (u, v) in sub.tri.edges:
            nbr[u].append(v)
            nbr[v].append(u)
        while q:
            u = q.popleft()
            for w in nbr[u]:
                if depth[w] < 0:
                    depth[w] = depth[u] + 1
                    q.append(w)
        root_sub = int(np.argmax(depth))
    packing = pack(sub.tri, MAXIMAL, root=root_sub, tol=tol)
    placed = packing.placed_mask()
    images = np.array(packing.centers, dtype=complex)
    radii = np.array(packing.radii, dtype=float)
    nbr = [[] for _ in range(sub.tri.n_vertices)]
    for (u, v) in sub.tri.edges:
        nbr[u].append(v)
        nbr[v].append(u)
    # resolve horocycle tangency points; corner nodes whose neighbors are all
    # boundary wait until those neighbors' ideal points are known
    known = placed.copy()
    pending = set(int(b) for b in packing.unplaced)
    while pending:
        progressed = []
        for b in sorted(pending):
            around = [w for w in nbr[b] if known[w]]
            if not around:
                continue
            if len(around) == 1 and radii[around[0]] == 0.0:
                continue  # a single ideal point cannot pin the tangency
            images[b] = _horocycle_tangency(images[around], radii[around])
            radii[b] = 0.0
            progressed.append(b)
        if not progressed:
            raise SurfaceError("boundary vertex with no resolvable neighbors")
        for b in progressed:
            pending.discard(b)
            known[b] = True
    # rotation gauge: put the anchor (largest-id original non-root vertex)
    # on the positive real axis
    anchor = None
    for v in sorted(portion.vertices, reverse=True):
        sv = sub.original_vertex[int(v)]
        if sv != root_sub and abs(images[sv]) > 1e-12:
            anchor = int(v)
            break
    if anchor is not None:
        sv = sub.original_vertex[anchor]
        images = images * (np.abs(images[sv]) / images[sv])
    images *= scale
    radii *= scale
    return DiscreteConformalMap(sub, images, radii, float(scale), root_sub,
                                anchor)


def refinement_gap(portion, n, tol=1e-12, root=None):
    """Sup displacement of tracked original-vertex images between the level-n
    and level-2n discrete maps (both in the same gauge)."""
    m1 = uniformize_approx(portion, n, tol=tol, root=root)
    m2 = uniformize_approx(portion, 2 * n, tol=tol, root=root)
    return max(abs(m1.vertex_image(v) - m2.vertex_image(v))
               for v in portion.vertices)


# ---------------------------------------------------------------------------
# semi-flowers
# ---------------------------------------------------------------------------


def semi_flower_corners(portion, v):
    """Intrinsic boundary of the nearest-vertex region of v, as a list of
    (local face index, frame coordinate) corner pairs in rotation order.

    Requires the full flower of v inside the portion (v interior to it).
    """
    surf = portion.surface
    v = int(v)
    if surf.is_boundary[v]:
        raise SurfaceError("vertex is on the surface boundary")
    fset = {int(f): i for i, f in enumerate(portion.face_ids)}
    petals = surf.rot[v]
    corners = []
    for b in petals:
        fi = surf.left_face(v, b)
        if fi is None or fi not in fset:
            raise SurfaceError("flower of the vertex is clipped by the portion")
        local = fset[fi]
        zv = surf.corner_coord(fi, v)
        zb = surf.corner_coord(fi, b)
        corners.append((local, 0.5 * (zv + zb)))   # edge midpoint
        corners.append((local, 0j))                # face center
    return corners


def semi_flower_geometry(portion, dmap, v):
    """(outradius, inradius, degree) of the image of v's semi-flower."""
    corners = semi_flower_corners(portion, v)
    pts = [dmap.eval(local, z) for (local, z) in corners]
    zv = dmap.vertex_image(v)
    poly = Polygon([(p.real, p.imag) for p in pts])
    if not poly.is_valid or poly.area <= 0:
        raise SurfaceError("degenerate semi-flower image")
    pt = Point(zv.real, zv.imag)
    if not poly.covers(pt):
        raise SurfaceError("vertex image escapes its semi-flower image")
    outradius = max(abs(p - zv) for p in pts)
    inradius = poly.exterior.distance(pt)
    return outradius, inradius, len(portion.surface.rot[v])


def semi_flower_areas(portion):
    """Intrinsic semi-flower area per portion vertex (closed form: each face
    splits evenly among its corners); the values sum to the portion area."""
    surf = portion.surface
    share = surf.face_area / surf.p
    out = {int(v): 0.0 for v in portion.vertices}
    for fi in portion.face_ids:
        for v in surf.faces[int(fi)]:
            out[int(v)] += share
    return out


def semi_flower_image(portion, dmap, v, partial=True):
    """Shapely polygon for the image of v's semi-flower; with ``partial``,
    clipped flowers fall back to the hull of the reachable corners (None when
    nothing of the flower is in the portion)."""
    try:
        corners = semi_flower_corners(portion, v)
    except SurfaceError:
        if not partial:
            raise
        surf = portion.surface
        fset = {int(f): i for i, f in enumerate(portion.face_ids)}
        corners = []
        for b in surf.rot[int(v)]:
            fi = surf.left_face(int(v), b)
            if fi is None or fi not in fset:
                continue
            local = fset[fi]
            zv = surf.corner_coord(fi, int(v))
            zb = surf.corner_coord(fi, b)
            corners.extend([(local, zv), (local, 0.5 * (zv + zb)),
                            (local, 0j)])
        if not corners:
            return None
        pts = [dmap.eval(local, z) for (local, z) in corners]
        return MultiPoint([(p.real, p.imag) for p in pts]).convex_hull
    pts = [dmap.eval(local, z) for (local, z) in corners]
    poly = Polygon([(p.real, p.imag) for p in pts])
    if not poly.is_valid:
        poly = MultiPoint([(p.real, p.imag) for p in pts]).convex_hull
    return poly


# ---------------------------------------------------------------------------
# Gauss-Bonnet bookkeeping
# ---------------------------------------------------------------------------


def gauss_bonnet_defect(portion):
    """Total curvature defect + boundary turning minus 2*pi (zero on disks)."""
    surf = portion.surface
    fset = set(int(f) for f in portion.face_ids)
    incident = {int(v): 0 for v in portion.vertices}
    for fi in fset:
        for v in surf.faces[fi]:
            incident[v] += 1
    on_loop = set(portion.boundary_loop)
    total = 0.0
    for v, cnt in incident.items():
        angle = cnt * surf.interior_angle
        if v in on_loop:
            total += math.pi - angle
        else:
            total += 2 * math.pi - angle
    return total - 2 * math.pi


# ---------------------------------------------------------------------------
# length-area diagnostics
# ---------------------------------------------------------------------------


def _union_diameter(geoms):
    from shapely import get_coordinates

    pts = [get_coordinates(g) for g in geoms if g is not None and not g.is_empty]
    if not pts:
        return 0.0
    arr = np.vstack(pts)
    if len(arr) > 3:
        hull = MultiPoint(arr).convex_hull
        arr = get_coordinates(hull)
    d2 = ((arr[:, None, :] - arr[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.max()))


def length_area_diagnostic(config, dmap, deltas, lam=0.5, samples=3):
    """Continuity table for the discrete uniformization.

    For each delta: (a) the diameter of the union of semi-flower images over
    cells meeting a sampled square of side delta*|S|, and (b) the diameter of
    the union of cells whose semi-flower image meets a sampled ball of radius
    delta*|S| inside the disk of radius lam*|S|; both normalized by |S|.
    """
    portion = dmap.subdivision.portion
    if portion.square is None:
        raise SurfaceError("diagnostic needs a square-provenance portion")
    cx, cy, side = portion.square
    flowers = {}
    for v in portion.vertices:
        flowers[int(v)] = semi_flower_image(portion, dmap, int(v))
    vset = set(int(v) for v in portion.vertices)
    offsets = np.linspace(-0.5, 0.5, samples + 2)[1:-1]
    rows = []
    for delta in deltas:
        d = float(delta) * side
        for ox in offsets:
            for oy in offsets:
                qx, qy = cx + ox * side, cy + oy * side
                half = d / 2
                q = box(qx - half, qy - half, qx + half, qy + half)
                ids = [u for u in config.cells_meeting(q, check_carrier=False)
                       if u in vset]
                val = _union_diameter([flowers[u] for u in ids]) / side
                rows.append({"kind": "square", "delta": float(delta),
                             "x": qx, "y": qy, "value": val})
                # ball side: sample centers within lam*|S| of the disk center
                z = complex(lam * ox * side, lam * oy * side)
                hit = [u for u in vset
                       if flowers[u] is not None
                       and not flowers[u].is_empty
                       and flowers[u].distance(Point(z.real, z.imag)) <= d]
                cells = [config.cells[u].polygon for u in hit
                         if config.cells[u] is not None]
                rows.append({"kind": "ball", "delta": float(delta),
                             "x": z.real, "y": z.imag,
                             "value": _union_diameter(cells) / side})
    return rows
