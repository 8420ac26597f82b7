"""Cell-configuration generators: Poisson-Voronoi, subcritical hexagon-cluster
percolation, and deterministic lattice oracles for tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon, box

from .planar_map import HalfEdgeMap, MapError, build_from_rotations

# Directions of the triangular lattice (unit steps), counterclockwise.
_TRI_DIRS = [complex(math.cos(k * math.pi / 3), math.sin(k * math.pi / 3)) for k in range(6)]
# Integer axial steps corresponding to the six directions e^{ik*pi/3} when a
# lattice point is a + b*e^{i*pi/3}:
_AXIAL_STEPS = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]


def _axial_to_complex(a, b):
    return a + b * _TRI_DIRS[1]


def triangular_lattice_patch(radius):
    """Hexagon-shaped patch of the triangular lattice with the given ring radius.

    Returns (HalfEdgeMap, coords) where coords[v] is a complex position and the
    rotation lists neighbors counterclockwise.
    """
    pts = {}
    order = []
    for a in range(-radius, radius + 1):
        for b in range(-radius, radius + 1):
            if abs(a + b) <= radius and max(abs(a), abs(b)) <= radius:
                pts[(a, b)] = len(order)
                order.append((a, b))
    neighbors = []
    for (a, b) in order:
        nb = []
        for (da, db) in _AXIAL_STEPS:
            key = (a + da, b + db)
            if key in pts:
                nb.append(pts[key])
        neighbors.append(nb)
    m = build_from_rotations(neighbors)
    coords = [_axial_to_complex(a, b) for (a, b) in order]
    return m, coords


def triangular_patch_triangulation(radius):
    """The same hexagon-shaped patch as a Triangulation plus complex coords."""
    from .circle_pack import Triangulation

    pts = {}
    order = []
    for a in range(-radius, radius + 1):
        for b in range(-radius, radius + 1):
            if abs(a + b) <= radius and max(abs(a), abs(b)) <= radius:
                pts[(a, b)] = len(order)
                order.append((a, b))
    faces = []
    for (a, b) in order:
        if (a + 1, b) in pts and (a, b + 1) in pts:
            faces.append((pts[(a, b)], pts[(a + 1, b)], pts[(a, b + 1)]))
        if (a + 1, b) in pts and (a + 1, b + 1) in pts and (a, b + 1) in pts:
            faces.append((pts[(a + 1, b)], pts[(a + 1, b + 1)], pts[(a, b + 1)]))
    tri = Triangulation(len(order), faces)
    coords = np.array([_axial_to_complex(a, b) for (a, b) in order])
    return tri, coords


# ---------------------------------------------------------------------------
# generator specification
# ---------------------------------------------------------------------------

# documented safe bound for the hexagon-cluster bond parameter (the critical
# value on the triangular lattice is 2 sin(pi/18) ~ 0.3473)
P_SUBCRITICAL_BOUND = 0.34


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of a cell-configuration generator.

    window is the side length of the carrier square, centered at the origin.
    buffer defaults to 10 expected cell diameters when None.
    """

    kind: str  # "poisson-voronoi" | "hex-percolation" | "lattice"
    window: float
    seed: int = 0
    intensity: float = 1.0
    p: float = 0.2
    buffer: float = None
    collapse_multi_edges: bool = False
    lattice_kind: str = "triangular"

    def __post_init__(self):
        if self.kind not in ("poisson-voronoi", "hex-percolation", "lattice"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.kind == "poisson-voronoi" and self.intensity <= 0:
            raise ValueError("intensity must be positive")
        if self.kind == "hex-percolation" and not (0 <= self.p < P_SUBCRITICAL_BOUND):
            raise ValueError(
                f"p={self.p} outside the documented subcritical range "
                f"[0,{P_SUBCRITICAL_BOUND})"
            )
        if self.buffer is not None and self.buffer < self.default_buffer():
            raise ValueError(
                f"buffer {self.buffer} below the documented minimum "
                f"{self.default_buffer()}"
            )

    def default_buffer(self):
        if self.kind == "poisson-voronoi":
            return 10.0 / math.sqrt(self.intensity)
        if self.kind == "hex-percolation":
            return 10.0
        return 2.0

    @property
    def buffer_width(self):
        return self.default_buffer() if self.buffer is None else self.buffer


def _hash_pair(i, j):
    # injective packing of two small signed ints into one uint64 stream key
    return np.uint64(((i + (1 << 31)) << 32) ^ (j + (1 << 31)))


# ---------------------------------------------------------------------------
# Poisson-Voronoi
# ---------------------------------------------------------------------------


def _circumcenter(a, b, c):
    d = 2.0 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    b2 = (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2
    c2 = (c[0] - a[0]) ** 2 + (c[1] - a[1]) ** 2
    ux = a[0] + ((c[1] - a[1]) * b2 - (b[1] - a[1]) * c2) / d
    uy = a[1] + ((b[0] - a[0]) * c2 - (c[0] - a[0]) * b2) / d
    return (ux, uy)


def _sample_poisson_points(spec):
    """Poisson process on the buffered window, one substream per integer
    lattice cell so the point set inside a fixed region is reproducible
    bit-for-bit regardless of the buffer width."""
    half = spec.window / 2.0
    lo, hi = -half - spec.buffer_width, half + spec.buffer_width
    lam = spec.intensity
    chunks = []
    for i in range(math.floor(lo), math.ceil(hi)):
        for j in range(math.floor(lo), math.ceil(hi)):
            rng = np.random.Generator(
                np.random.Philox(key=[np.uint64(spec.seed), _hash_pair(i, j)])
            )
            n = rng.poisson(lam)
            if n:
                chunks.append((i, j) + rng.random((n, 2)))
    pts = np.concatenate(chunks, axis=0)
    keep = ((pts[:, 0] >= lo) & (pts[:, 0] <= hi) &
            (pts[:, 1] >= lo) & (pts[:, 1] <= hi))
    return pts[keep]


def poisson_voronoi(spec: GeneratorSpec):
    """Poisson-Voronoi cell configuration: cells are Voronoi polygons of a
    Poisson point process, the associated map is the Delaunay graph."""
    from scipy.spatial import Delaunay

    from .cell_config import Cell, CellConfiguration, ConfigError
    from .circle_pack import Triangulation, TriangulationError

    if spec.kind != "poisson-voronoi":
        raise ValueError("spec.kind must be poisson-voronoi")
    pts = _sample_poisson_points(spec)
    jitter_rng = np.random.Generator(
        np.random.Philox(key=[np.uint64(spec.seed), np.uint64(0x9E37)])
    )
    tri = None
    for attempt in range(4):
        try:
            d = Delaunay(pts)
            tri = Triangulation.from_positions(pts, d.simplices)
            break
        except TriangulationError:
            # cocircular degeneracy: deterministic tiny jitter, then retry
            pts = pts + 1e-9 * jitter_rng.standard_normal(pts.shape)
    if tri is None:
        raise ConfigError("degenerate point set after perturbation budget")

    # Voronoi polygons as circumcenters of incident Delaunay triangles,
    # computed in canonical vertex order so the geometry of a cell depends
    # only on its incident triangles (bit-reproducible across buffer widths)
    half = spec.window / 2.0
    lo, hi = -half - spec.buffer_width, half + spec.buffer_width
    incident = [[] for _ in range(len(pts))]
    centers = {}
    for face in tri.faces:
        a, b, c = sorted(face)
        centers[(a, b, c)] = _circumcenter(pts[a], pts[b], pts[c])
        for v in face:
            incident[v].append((a, b, c))
    boundary = set(int(v) for v in tri.boundary)
    cells = [None] * len(pts)
    for v in range(len(pts)):
        if v in boundary:
            continue
        verts = np.array([centers[f] for f in incident[v]])
        if (verts[:, 0].min() < lo or verts[:, 0].max() > hi or
                verts[:, 1].min() < lo or verts[:, 1].max() > hi):
            continue  # geometry influenced by the truncation; keep unknown
        ang = np.arctan2(verts[:, 1] - pts[v, 1], verts[:, 0] - pts[v, 0])
        cells[v] = Cell(v, Polygon(verts[np.argsort(ang)]))

    # rotation system of the Delaunay graph: neighbors sorted by angle
    nbr_sets = [set() for _ in range(len(pts))]
    for (a, b, c) in tri.faces:
        nbr_sets[a].update((b, c))
        nbr_sets[b].update((a, c))
        nbr_sets[c].update((a, b))
    neighbors = []
    for v in range(len(pts)):
        nb = sorted(nbr_sets[v],
                    key=lambda w: math.atan2(pts[w, 1] - pts[v, 1],
                                             pts[w, 0] - pts[v, 0]))
        neighbors.append(nb)
    hmap = build_from_rotations(neighbors)
    positions = pts[:, 0] + 1j * pts[:, 1]
    cfg = CellConfiguration(
        cells, hmap, (-half, -half, half, half), positions=positions,
        meta={"kind": spec.kind, "seed": spec.seed, "intensity": spec.intensity,
              "window": spec.window, "buffer": spec.buffer_width},
    )
    cfg.meta["triangulation"] = tri
    return cfg


def config_triangulation(config):
    """Disk triangulation whose vertices are the configuration's sites."""
    tri = config.meta.get("triangulation")
    if tri is not None:
        return tri
    from scipy.spatial import Delaunay

    from .circle_pack import Triangulation

    pts = np.column_stack([config.positions.real, config.positions.imag])
    tri = Triangulation.from_positions(pts, Delaunay(pts).simplices)
    config.meta["triangulation"] = tri
    return tri


# ---------------------------------------------------------------------------
# hexagon-cluster percolation
# ---------------------------------------------------------------------------


def _hexagon(center):
    # vertices snapped to a 1e-9 grid so adjacent hexagons share vertices
    # exactly and unions stay free of slivers
    r = 1.0 / math.sqrt(3.0)
    pts = [(round(center.real + r * math.cos(math.pi / 6 + k * math.pi / 3), 9),
            round(center.imag + r * math.sin(math.pi / 6 + k * math.pi / 3), 9))
           for k in range(6)]
    return Polygon(pts)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _edge_open(seed, key_a, key_b, k, p):
    word = (int(seed) * 8 + k) ^ 0xB5C4B5C4
    rng = np.random.Generator(np.random.Philox(
        key=[np.uint64(word), _hash_pair(key_a, key_b)]
    ))
    return rng.random() < p


def hex_percolation(spec: GeneratorSpec):
    """Subcritical hexagon-cluster percolation configuration.

    Hexagons of a uniformly shifted unit triangular lattice are grouped by
    Bernoulli(p) bond percolation; enclosed hexagons are absorbed into the
    surrounding cluster, so cells are simply connected hexagon unions.  The
    associated map is the contraction of the triangular lattice, one edge per
    connected boundary component between two cells (parallel edges allowed);
    with collapse_multi_edges every cell enclosed by just two others is merged
    into one of them, which empirically yields a simple map.
    """
    from shapely.ops import unary_union

    from .cell_config import Cell, CellConfiguration, ConfigError

    if spec.kind != "hex-percolation":
        raise ValueError("spec.kind must be hex-percolation")
    half = spec.window / 2.0
    lo, hi = -half - spec.buffer_width, half + spec.buffer_width

    shift_rng = np.random.Generator(
        np.random.Philox(key=[np.uint64(spec.seed), np.uint64(0x5217)])
    )
    # uniform shift in the lattice fundamental domain
    w = shift_rng.random() + shift_rng.random() * _TRI_DIRS[1]

    bound = int(math.ceil((hi - lo) / 2.0)) + 3
    index = {}
    axial = []
    centers = []
    for a in range(-bound, bound + 1):
        for b in range(-bound, bound + 1):
            z = w + _axial_to_complex(a, b)
            if lo <= z.real <= hi and lo <= z.imag <= hi:
                index[(a, b)] = len(axial)
                axial.append((a, b))
                centers.append(z)
    npts = len(axial)

    uf = _UnionFind(npts)
    for (a, b) in axial:
        v = index[(a, b)]
        for k in range(3):  # directions 0,1,2 visit each lattice edge once
            da, db = _AXIAL_STEPS[k]
            u = index.get((a + da, b + db))
            if u is not None and _edge_open(spec.seed, a, b, k, spec.p):
                uf.union(v, u)

    # absorb hexagons separated from infinity by a cluster
    members = {}
    for v in range(npts):
        members.setdefault(uf.find(v), []).append(v)
    for root, verts in sorted(members.items(), key=lambda kv: -len(kv[1])):
        if len(verts) < 6:
            continue  # too small to enclose anything
        cluster = {axial[v] for v in verts}
        amin = min(a for a, _ in cluster) - 1
        amax = max(a for a, _ in cluster) + 1
        bmin = min(b for _, b in cluster) - 1
        bmax = max(b for _, b in cluster) + 1
        outside = set()
        stack = [(a, b) for a in (amin, amax) for b in range(bmin, bmax + 1)]
        stack += [(a, b) for b in (bmin, bmax) for a in range(amin + 1, amax)]
        stack = [ab for ab in stack if ab not in cluster]
        outside.update(stack)
        while stack:
            a, b = stack.pop()
            for da, db in _AXIAL_STEPS:
                nb = (a + da, b + db)
                if (amin <= nb[0] <= amax and bmin <= nb[1] <= bmax and
                        nb not in cluster and nb not in outside):
                    outside.add(nb)
                    stack.append(nb)
        for a in range(amin + 1, amax):
            for b in range(bmin + 1, bmax):
                ab = (a, b)
                if ab not in cluster and ab not in outside:
                    if ab in index:
                        uf.union(root, index[ab])

    collapse_rng = np.random.Generator(
        np.random.Philox(key=[np.uint64(spec.seed), np.uint64(0xC011)])
    )
    while True:
        hmap, cell_ids, label = _contract_lattice(axial, index, uf)
        if not spec.collapse_multi_edges:
            break
        to_merge = []
        for ci, root in enumerate(cell_ids):
            nb = set(hmap.neighbors(ci))
            if len(nb) == 2:
                pick = cell_ids[sorted(nb)[int(collapse_rng.integers(0, 2))]]
                to_merge.append((root, pick))
        if not to_merge and not hmap.has_multi_edges():
            break
        if not to_merge:
            # remaining parallel edges without a mergeable middle cell:
            # join the two cells themselves
            for (u, v, h) in hmap.edges():
                nb = hmap.neighbors(u)
                if nb.count(v) > 1:
                    to_merge.append((cell_ids[u], cell_ids[v]))
                    break
        for a, b in to_merge:
            uf.union(a, b)

    # geometry
    hex_cache = {}
    groups = {}
    for v in range(npts):
        groups.setdefault(uf.find(v), []).append(v)
    cells = []
    positions = []
    danger = []  # cells touching the outermost lattice ring
    ring = {v for (a, b), v in index.items()
            if any((a + da, b + db) not in index for da, db in _AXIAL_STEPS)}
    for ci, root in enumerate(cell_ids):
        verts = groups[root]
        polys = [_hexagon(centers[v]) for v in verts]
        poly = polys[0] if len(polys) == 1 else unary_union(polys)
        if poly.geom_type != "Polygon":
            raise ConfigError("cluster union is not a single polygon")
        if poly.interiors:
            poly = Polygon(poly.exterior)  # paper-rule holes already absorbed
        cells.append(Cell(ci, poly))
        positions.append(sum(centers[v] for v in verts) / len(verts))
        if any(v in ring for v in verts):
            danger.append(ci)

    # clusters reaching the outermost ring may be truncated; exclude them
    # from the carrier by shrinking the window to the largest centered box
    # they do not touch
    chalf = half
    for ci in danger:
        x0, y0, x1, y1 = cells[ci].polygon.bounds
        dx = 0.0 if x0 <= 0.0 <= x1 else min(abs(x0), abs(x1))
        dy = 0.0 if y0 <= 0.0 <= y1 else min(abs(y0), abs(y1))
        reach = max(dx, dy)  # sup-norm distance of the cell's bbox from 0
        if reach < chalf:
            chalf = reach - 1e-9
    if chalf < half / 2:
        raise ConfigError(
            "truncated clusters intrude deep into the window; enlarge the buffer"
        )
    cfg = CellConfiguration(
        cells, hmap, (-chalf, -chalf, chalf, chalf), positions=np.array(positions),
        meta={"kind": spec.kind, "seed": spec.seed, "p": spec.p,
              "window": spec.window, "buffer": spec.buffer_width,
              "carrier_shrunk": chalf < half,
              "collapsed": spec.collapse_multi_edges},
    )
    return cfg


def _contract_lattice(axial, index, uf):
    """Contract each percolation cluster of the truncated triangular lattice
    to one vertex; returns (HalfEdgeMap, cluster root per map vertex, label)."""
    npts = len(axial)
    label = np.array([uf.find(v) for v in range(npts)])
    roots = sorted(set(int(r) for r in label))
    root_id = {r: i for i, r in enumerate(roots)}

    def exists(a, b, k):
        da, db = _AXIAL_STEPS[k]
        return index.get((a + da, b + db))

    # neighbor label of a dart: the cell across it, or -1 past the truncation
    def dart_label(v, k):
        u = exists(*axial[v], k)
        return -1 if u is None else root_id[label[u]]

    visited = set()
    rot = [[] for _ in roots]  # per cell: run ids in boundary-cycle order
    run_neighbor = []  # neighbor cell per run
    run_owner = []
    dart_run = {}
    for v0 in range(npts):
        for k0 in range(6):
            lab0 = dart_label(v0, k0)
            if lab0 == root_id[label[v0]] or (v0, k0) in visited:
                continue
            cell = root_id[label[v0]]
            # boundary walk of this cell starting at (pseudo-)dart (v0, k0);
            # darts past the truncation are kept so runs split identically on
            # both sides of every contact component
            cyc = []
            v, k = v0, k0
            while True:
                cyc.append((v, k))
                visited.add((v, k))
                kk = (k + 1) % 6
                u = exists(*axial[v], kk)
                while u is not None and label[u] == label[v]:
                    v, k = u, (kk + 3) % 6
                    kk = (k + 1) % 6
                    u = exists(*axial[v], kk)
                k = kk
                if (v, k) == (v0, k0):
                    break
            # maximal runs of consecutive darts toward the same neighbor
            nb_of = [dart_label(dv, dk) for (dv, dk) in cyc]
            nc = len(cyc)
            breaks = [i for i in range(nc) if nb_of[i] != nb_of[i - 1]]
            if not breaks:
                runs = [list(range(nc))]  # single neighbor all around
            else:
                runs = []
                for bi, start in enumerate(breaks):
                    end = breaks[(bi + 1) % len(breaks)]
                    length = (end - start) % nc or nc
                    runs.append([(start + t) % nc for t in range(length)])
            for idxs in runs:
                if nb_of[idxs[0]] < 0:
                    continue  # stretch along the truncation edge: no map edge
                rid = len(run_neighbor)
                run_neighbor.append(nb_of[idxs[0]])
                run_owner.append(cell)
                rot[cell].append(rid)
                for i in idxs:
                    dart_run[cyc[i]] = rid
    # twins: the reversed darts of a run form exactly one run at the neighbor
    twin = [-1] * len(run_neighbor)
    for (v, k), rid in dart_run.items():
        u = exists(*axial[v], k)
        trid = dart_run[(u, (k + 3) % 6)]
        if twin[rid] not in (-1, trid):
            raise MapError("boundary component produced inconsistent pairing")
        twin[rid] = trid
    org = [0] * len(run_neighbor)
    for rid, c in enumerate(run_owner):
        org[rid] = c
    hmap = HalfEdgeMap(rot, twin, org)
    return hmap, roots, label


# ---------------------------------------------------------------------------
# deterministic lattice configurations
# ---------------------------------------------------------------------------


def lattice_config(kind, window):
    """Deterministic reference configurations: unit squares on the grid map,
    or hexagons on the triangular-lattice map."""
    from .cell_config import Cell, CellConfiguration

    half = window / 2.0
    pad = 2
    if kind == "unit-square":
        rng_i = range(math.floor(-half) - pad, math.ceil(half) + pad)
        index = {}
        order = []
        for i in rng_i:
            for j in rng_i:
                index[(i, j)] = len(order)
                order.append((i, j))
        neighbors = []
        for (i, j) in order:
            nb = [index[key] for key in
                  ((i + 1, j), (i, j + 1), (i - 1, j), (i, j - 1))
                  if key in index]
            neighbors.append(nb)
        hmap = build_from_rotations(neighbors)
        cells = [Cell(v, box(i, j, i + 1, j + 1)) for v, (i, j) in enumerate(order)]
        pos = np.array([complex(i + 0.5, j + 0.5) for (i, j) in order])
    elif kind == "triangular":
        bound = int(math.ceil(half)) + pad + 1
        index = {}
        order = []
        for a in range(-bound, bound + 1):
            for b in range(-bound, bound + 1):
                z = _axial_to_complex(a, b)
                if max(abs(z.real), abs(z.imag)) <= half + pad:
                    index[(a, b)] = len(order)
                    order.append((a, b))
        neighbors = []
        for (a, b) in order:
            nb = [index[(a + da, b + db)] for (da, db) in _AXIAL_STEPS
                  if (a + da, b + db) in index]
            neighbors.append(nb)
        hmap = build_from_rotations(neighbors)
        pos = np.array([_axial_to_complex(a, b) for (a, b) in order])
        cells = [Cell(v, _hexagon(pos[v])) for v in range(len(order))]
    else:
        raise ValueError(f"unknown lattice kind {kind!r}")
    return CellConfiguration(
        cells, hmap, (-half, -half, half, half), positions=pos,
        meta={"kind": "lattice", "lattice": kind, "window": window},
    )
