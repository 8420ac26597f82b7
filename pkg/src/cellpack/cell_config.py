"""Cell configurations: compact connected cells covering a window, an
associated planar map on the cell ids, and positive edge conductances;
plus uniform dyadic systems and their mass-capped squares."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import LineString, Point, Polygon, box
from shapely.strtree import STRtree

from .planar_map import HalfEdgeMap


class ConfigError(ValueError):
    pass


class CarrierError(ValueError):
    """A statistic needed data outside the configuration's carrier window."""


def polygon_diameter(poly) -> float:
    hull = poly.convex_hull
    if hull.geom_type == "Point":
        return 0.0
    if hull.geom_type == "LineString":
        coords = np.asarray(hull.coords)
    else:
        coords = np.asarray(hull.exterior.coords)[:-1]
    d2 = 0.0
    for i in range(len(coords)):
        diff = coords[i + 1:] - coords[i]
        if len(diff):
            d2 = max(d2, float(np.max(diff[:, 0] ** 2 + diff[:, 1] ** 2)))
    return math.sqrt(d2)


class Cell:
    """One compact connected cell: a simple polygon (or union of tiles merged
    into one polygon) with cached area, diameter and centroid."""

    __slots__ = ("id", "polygon", "area", "diameter", "centroid")

    def __init__(self, cid, polygon):
        if polygon.is_empty or polygon.area <= 0:
            raise ConfigError(f"cell {cid} has nonpositive area")
        self.id = cid
        self.polygon = polygon
        self.area = float(polygon.area)
        self.diameter = polygon_diameter(polygon)
        c = polygon.centroid
        self.centroid = complex(c.x, c.y)


class CellConfiguration:
    """Cells + associated map + conductances, valid inside a carrier window.

    ``cells[v]`` may be None for map vertices whose geometry lies outside the
    region the generator certifies (they still carry a position so walks and
    packings can use them); every cell meeting the carrier must be present.
    """

    def __init__(self, cells, hmap: HalfEdgeMap, carrier, positions=None,
                 conductances=None, meta=None):
        if len(cells) != hmap.n_vertices:
            raise ConfigError("one (possibly absent) cell per map vertex required")
        self.cells = list(cells)
        self.map = hmap
        self.carrier = tuple(float(t) for t in carrier)  # x0, y0, x1, y1
        if positions is None:
            positions = np.array(
                [c.centroid if c is not None else np.nan + 0j for c in self.cells]
            )
        self.positions = np.asarray(positions, dtype=complex)
        ne = hmap.n_edges
        if conductances is None:
            conductances = np.ones(ne)
        self.conductances = np.asarray(conductances, dtype=float)
        if len(self.conductances) != ne or np.any(self.conductances <= 0):
            raise ConfigError("need one positive conductance per map edge")
        # edge order: as emitted by map.edges()
        self.edge_list = hmap.edges()
        self._edge_index = {e[2]: i for i, e in enumerate(self.edge_list)}
        self.meta = dict(meta or {})
        self._tree = None
        self._tree_ids = None

    # -- geometry queries -------------------------------------------------

    def _ensure_tree(self):
        if self._tree is None:
            ids = [v for v, c in enumerate(self.cells) if c is not None]
            self._tree = STRtree([self.cells[v].polygon for v in ids])
            self._tree_ids = np.array(ids)

    def carrier_box(self):
        x0, y0, x1, y1 = self.carrier
        return box(x0, y0, x1, y1)

    def require_carrier(self, geom):
        x0, y0, x1, y1 = self.carrier
        gx0, gy0, gx1, gy1 = geom.bounds
        tol = 1e-9 * max(x1 - x0, y1 - y0, 1.0)
        if gx0 < x0 - tol or gy0 < y0 - tol or gx1 > x1 + tol or gy1 > y1 + tol:
            raise CarrierError(
                f"statistic needs {geom.bounds} but carrier is {self.carrier}"
            )

    def cells_meeting(self, geom, check_carrier=True):
        """Ids of cells intersecting the geometry (the paper's H(A))."""
        if check_carrier:
            self.require_carrier(geom)
        self._ensure_tree()
        idx = self._tree.query(geom, predicate="intersects")
        return sorted(int(self._tree_ids[i]) for i in idx)

    def conductance(self, u, v):
        h = self.map.half_edge(u, v)
        key = min(h, self.map.twin[h])
        return float(self.conductances[self._edge_index[key]])

    def degree(self, v):
        return self.map.degree(v)

    # -- validation -------------------------------------------------------

    def validate(self, sample_overlaps=2000, rng=None):
        """Check Def-style invariants: adjacent cells touch, interiors do not
        overlap (within relative tolerance)."""
        problems = []
        for (u, v, _) in self.edge_list:
            cu, cv = self.cells[u], self.cells[v]
            if cu is None or cv is None:
                continue
            d = cu.polygon.distance(cv.polygon)
            scale = max(cu.diameter, cv.diameter, 1e-12)
            if d > 1e-9 * scale:
                problems.append(f"adjacent cells {u},{v} at distance {d}")
        self._ensure_tree()
        pairs = []
        for v in self._tree_ids:
            poly = self.cells[v].polygon
            for i in self._tree.query(poly, predicate="intersects"):
                w = int(self._tree_ids[i])
                if w > v:
                    pairs.append((int(v), w))
        if rng is None:
            rng = np.random.default_rng(0)
        if len(pairs) > sample_overlaps:
            sel = rng.choice(len(pairs), size=sample_overlaps, replace=False)
            pairs = [pairs[i] for i in sel]
        for (u, v) in pairs:
            a = self.cells[u].polygon.intersection(self.cells[v].polygon).area
            if a > 1e-9 * min(self.cells[u].area, self.cells[v].area):
                problems.append(f"cells {u},{v} overlap with area {a}")
        return problems

    # -- serialization ----------------------------------------------------

    def to_text(self):
        lines = [f"cellconfig {len(self.cells)}"]
        lines.append("carrier " + " ".join(repr(t) for t in self.carrier))
        for k in sorted(self.meta):
            val = self.meta[k]
            if isinstance(val, (str, int, float)):
                lines.append(f"meta {k}={val!r}")
        for v, c in enumerate(self.cells):
            p = self.positions[v]
            if c is None:
                lines.append(f"site {v}: {float(p.real)!r} {float(p.imag)!r}")
            else:
                coords = np.asarray(c.polygon.exterior.coords)[:-1]
                flat = " ".join(repr(float(t)) for t in coords.ravel())
                lines.append(f"cell {v}: {float(p.real)!r} {float(p.imag)!r} | {flat}")
        lines.append("conductances " + " ".join(repr(float(c)) for c in self.conductances))
        lines.append("[map]")
        lines.append(self.map.to_text().rstrip("\n"))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text):
        head, map_text = text.split("[map]\n", 1)
        cells = {}
        sites = {}
        carrier = None
        cond = None
        meta = {}
        n = None
        for raw in head.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("cellconfig"):
                n = int(line.split()[1])
            elif line.startswith("carrier"):
                carrier = tuple(float(t) for t in line.split()[1:])
            elif line.startswith("meta"):
                k, v = line[5:].split("=", 1)
                meta[k] = eval(v)  # values written with repr above
            elif line.startswith("site"):
                headp, rest = line.split(":", 1)
                v = int(headp.split()[1])
                x, y = (float(t) for t in rest.split())
                sites[v] = complex(x, y)
            elif line.startswith("cell"):
                headp, rest = line.split(":", 1)
                v = int(headp.split()[1])
                pos_part, poly_part = rest.split("|")
                x, y = (float(t) for t in pos_part.split())
                vals = [float(t) for t in poly_part.split()]
                pts = list(zip(vals[0::2], vals[1::2]))
                cells[v] = Cell(v, Polygon(pts))
                sites[v] = complex(x, y)
            elif line.startswith("conductances"):
                cond = np.array([float(t) for t in line.split()[1:]])
        hmap = HalfEdgeMap.from_text(map_text)
        cell_list = [cells.get(v) for v in range(n)]
        pos = np.array([sites[v] for v in range(n)])
        return CellConfiguration(cell_list, hmap, carrier, positions=pos,
                                 conductances=cond, meta=meta)


# ---------------------------------------------------------------------------
# uniform dyadic systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DyadicSquare:
    level: int
    ix: int
    iy: int
    x0: float
    y0: float
    side: float

    def contains_point(self, x, y):
        return self.x0 <= x < self.x0 + self.side and self.y0 <= y < self.y0 + self.side

    def geometry(self):
        return box(self.x0, self.y0, self.x0 + self.side, self.y0 + self.side)


class DyadicSystem:
    """Random nested family of square lattices at every dyadic scale.

    Level-0 squares have side 2**s with the base square placed at -w; each
    level's lattice sits inside the next level's via an independently chosen
    corner, so any two squares in the family share an ancestor.
    """

    def __init__(self, s, w, seed):
        self.s = float(s)
        self.w = (float(w[0]), float(w[1]))
        self.seed = seed
        self._choices = []
        self._choice_rng = np.random.Generator(np.random.Philox(key=[seed, 0x6479]))
        # lattice origin per level >= 0 (levels < 0 share origin of level 0)
        self._origins = [(-self.w[0], -self.w[1])]

    def side(self, level):
        return 2.0 ** (self.s + level)

    def parent_choice(self, level):
        while len(self._choices) <= level:
            self._choices.append(int(self._choice_rng.integers(0, 4)))
        return self._choices[level]

    def origin(self, level):
        if level <= 0:
            return self._origins[0]
        while len(self._origins) <= level:
            lv = len(self._origins) - 1
            ox, oy = self._origins[lv]
            c = self.parent_choice(lv)
            side = self.side(lv)
            self._origins.append((ox - (c & 1) * side, oy - (c >> 1) * side))
        return self._origins[level]

    def square_containing(self, z, level) -> DyadicSquare:
        ox, oy = self.origin(level)
        side = self.side(level)
        ix = math.floor((z.real - ox) / side)
        iy = math.floor((z.imag - oy) / side)
        return DyadicSquare(level, ix, iy, ox + ix * side, oy + iy * side, side)

    def parent(self, sq: DyadicSquare) -> DyadicSquare:
        z = complex(sq.x0 + sq.side / 2, sq.y0 + sq.side / 2)
        return self.square_containing(z, sq.level + 1)

    def children(self, sq: DyadicSquare):
        out = []
        half = sq.side / 2
        ox, oy = self.origin(sq.level - 1)
        for dx in (0, 1):
            for dy in (0, 1):
                x0, y0 = sq.x0 + dx * half, sq.y0 + dy * half
                out.append(DyadicSquare(sq.level - 1, round((x0 - ox) / half),
                                        round((y0 - oy) / half), x0, y0, half))
        return out


def sample_dyadic_system(seed) -> DyadicSystem:
    rng = np.random.Generator(np.random.Philox(key=[seed, 0x6453]))
    s = float(rng.uniform(0.0, 1.0))
    w = rng.uniform(0.0, 2.0 ** s, size=2)
    return DyadicSystem(s, w, seed)


# ---------------------------------------------------------------------------
# mass-capped squares (the hat-S_m construction)
# ---------------------------------------------------------------------------


def square_mass(config: CellConfiguration, sq: DyadicSquare, exact=True) -> float:
    """Sum over cells meeting the square of area(H cap S)/area(H).

    With ``exact=False`` the sum runs over the cells the configuration knows,
    giving a lower bound when the square leaves the carrier."""
    geom = sq.geometry()
    if exact:
        ids = config.cells_meeting(geom)
    else:
        config._ensure_tree()
        idx = config._tree.query(geom, predicate="intersects")
        ids = [int(config._tree_ids[i]) for i in idx]
    total = 0.0
    for v in ids:
        c = config.cells[v]
        total += c.polygon.intersection(geom).area / c.area
    return total


def hat_square(config: CellConfiguration, dyadic: DyadicSystem, z, m):
    """The largest dyadic square containing z with fractional cell mass <= m.

    Returns (square, mass).  Raises CarrierError when the carrier cannot
    certify maximality (the candidate square or the evidence that its parent
    exceeds the cap would need unknown cells)."""
    if m <= 0:
        raise ValueError("mass cap must be positive")
    z = complex(z)
    sq = dyadic.square_containing(z, 0)
    mass = _mass_within(config, sq, m)
    if mass <= m:
        # climb while the mass stays under the cap
        while True:
            par = dyadic.parent(sq)
            pmass = _mass_within(config, par, m)
            if pmass > m:
                return sq, mass
            sq, mass = par, pmass
    # descend to the first level under the cap
    while mass > m:
        child = None
        for c in dyadic.children(sq):
            if c.contains_point(z.real, z.imag):
                child = c
                break
        if child is None or child.side < 1e-12:
            raise ConfigError("descent failed; is z on a lattice boundary?")
        sq = child
        mass = _mass_within(config, sq, m)
    return sq, mass


def _mass_within(config, sq, cap):
    """Mass of a square; exact if inside the carrier, otherwise a certified
    lower bound if that bound already exceeds the cap."""
    x0, y0, x1, y1 = config.carrier
    inside = (x0 <= sq.x0 and y0 <= sq.y0 and
              sq.x0 + sq.side <= x1 and sq.y0 + sq.side <= y1)
    if inside:
        return square_mass(config, sq, exact=True)
    lower = square_mass(config, sq, exact=False)
    if lower > cap:
        return lower
    raise CarrierError(
        f"insufficient window: square at level {sq.level} side {sq.side:.3g} "
        "leaves the carrier before reaching the mass cap"
    )


def hat_partition(config: CellConfiguration, dyadic: DyadicSystem, region, m):
    """All mass-capped squares intersecting the region (an axis box geometry).

    The returned squares tile a neighborhood of the region; each satisfies
    mass <= m while its parent exceeds m."""
    minx, miny, maxx, maxy = region.bounds
    # find a level whose lattice squares over the region all exceed the cap
    level = 0
    while True:
        ox, oy = dyadic.origin(level)
        side = dyadic.side(level)
        i0 = math.floor((minx - ox) / side)
        i1 = math.floor((maxx - ox) / side)
        j0 = math.floor((miny - oy) / side)
        j1 = math.floor((maxy - oy) / side)
        tops = [DyadicSquare(level, i, j, ox + i * side, oy + j * side, side)
                for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]
        try:
            if all(square_mass(config, t, exact=False) > m for t in tops):
                break
        except CarrierError:
            pass
        level += 1
        if level > 60:
            raise ConfigError("no level exceeds the mass cap; empty configuration?")
    out = []

    def descend(sq):
        for c in dyadic.children(sq):
            g = c.geometry()
            if not g.intersects(region):
                continue
            mass = _mass_within(config, c, m)
            if mass <= m:
                out.append((c, mass))
            else:
                descend(c)

    for t in tops:
        if t.geometry().intersects(region):
            descend(t)
    return out


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def line_connectivity_check(config: CellConfiguration, segment):
    """Is the subgraph induced by cells meeting the segment connected?

    ``segment`` is ((x0,y0),(x1,y1)), axis-parallel, inside the carrier.
    Returns (connected, component_count)."""
    (ax, ay), (bx, by) = segment
    if not (ax == bx or ay == by):
        raise ValueError("segment must be axis-parallel")
    line = LineString([(ax, ay), (bx, by)])
    ids = config.cells_meeting(line)
    if not ids:
        return True, 0
    idset = set(ids)
    comp = 0
    seen = set()
    from collections import deque

    for start in ids:
        if start in seen:
            continue
        comp += 1
        q = deque([start])
        seen.add(start)
        while q:
            v = q.popleft()
            for w in config.map.neighbors(v):
                if w in idset and w not in seen:
                    seen.add(w)
                    q.append(w)
    return comp == 1, comp


def almost_planarity_gap(config: CellConfiguration, r, points=None, curves=None):
    """(1/r) max over cells meeting B(0;r) of the worst Hausdorff distance
    between an incident embedded edge curve and the cell.

    Default embedding: positions as points, straight segments as curves."""
    disk = Point(0, 0).buffer(r, quad_segs=64)
    ids = config.cells_meeting(disk)
    if points is None:
        points = {v: config.positions[v] for v in range(len(config.cells))}
    worst = 0.0
    for v in ids:
        cell = config.cells[v]
        if cell is None:
            raise ConfigError(f"cell {v} needed for the planarity gap is absent")
        for w in set(config.map.neighbors(v)):
            if curves is not None and (min(v, w), max(v, w)) in curves:
                curve = LineString(curves[(min(v, w), max(v, w))])
            else:
                if v not in points or w not in points:
                    raise ConfigError(f"embedding point missing for edge {v},{w}")
                a, b = points[v], points[w]
                curve = LineString([(a.real, a.imag), (b.real, b.imag)])
            worst = max(worst, curve.hausdorff_distance(cell.polygon))
    return worst / r


def moment_statistic(config: CellConfiguration, square, p):
    """(1/|S|^2) * sum over cells meeting S of diam(H)^2 deg(H)^p."""
    x0, y0, x1, y1 = square
    side = x1 - x0
    if side <= 0 or (y1 - y0) <= 0:
        raise ValueError("degenerate square")
    geom = box(x0, y0, x1, y1)
    ids = config.cells_meeting(geom)
    total = 0.0
    for v in ids:
        c = config.cells[v]
        total += c.diameter ** 2 * config.map.degree(v) ** p
    return total / side ** 2


def max_cell_diameter(config: CellConfiguration, square):
    """Max cell diameter over cells meeting S, and its ratio to |S|."""
    x0, y0, x1, y1 = square
    side = x1 - x0
    geom = box(x0, y0, x1, y1)
    ids = config.cells_meeting(geom)
    dmax = max(config.cells[v].diameter for v in ids)
    return dmax, dmax / side


def config_correspondence_distance(config_a, config_b, bijection, r_grid):
    """Surrogate distance between configurations given an explicit matching.

    For each radius r in the increasing grid, verifies that the matching is a
    map isomorphism on cells meeting B(0;r) and takes the sup of centroid
    displacement plus conductance mismatch; sups are integrated against
    exp(-r) with the right-endpoint rule, so the total never exceeds
    sup-displacement * integral exp(-r) dr."""
    r_grid = sorted(r_grid)
    total = 0.0
    prev_r = 0.0
    for r in r_grid:
        disk = Point(0, 0).buffer(r, quad_segs=64)
        ids = config_a.cells_meeting(disk)
        sup = 0.0
        for u in ids:
            bu = bijection[u]
            ca, cb = config_a.cells[u], config_b.cells[bu]
            nb_a = sorted(set(config_a.map.neighbors(u)))
            nb_b = set(config_b.map.neighbors(bu))
            for w in nb_a:
                if bijection.get(w) is not None and bijection[w] not in nb_b:
                    raise ConfigError(
                        f"matching is not a map isomorphism: edge ({u},{w}) has "
                        f"no image edge ({bu},{bijection[w]})"
                    )
                if bijection.get(w) is not None:
                    sup = max(sup, abs(config_a.conductance(u, w) -
                                       config_b.conductance(bu, bijection[w])))
            sup = max(sup, abs(ca.centroid - cb.centroid))
        total += math.exp(-r) * (r - prev_r) * sup
        prev_r = r
    return total
