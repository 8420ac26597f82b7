"""Piecewise-linear embeddings of glued surfaces and their harmonic
corrections.

The a-priori map sends each surface vertex to a uniformly sampled point of
its cell and extends linearly over faces.  Harmonic extension re-solves the
map inside the preimages of mass-capped dyadic squares, lowering Dirichlet
energy while keeping the values pinned elsewhere.  A linear gauge (scale,
det-1 matrix, rotation) is fitted by least squares to relate embeddings to
reference data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve
from shapely.geometry import box

from .cell_config import hat_partition
from .surface import DiscreteConformalMap, SurfaceError, subdivide

SQRT3 = math.sqrt(3.0)


class CorrectorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# piecewise-linear maps
# ---------------------------------------------------------------------------


@dataclass
class PLMap:
    """A map defined on surface vertices (or subdivision vertices) with
    linear extension over each face.

    ``subdivision`` is None for maps living on the raw surface vertices.
    ``provenance`` records how the values were produced (sampling seed, or
    the mass cap / mesh level / solve residuals of a harmonic extension).
    """

    surface: object
    values: np.ndarray
    subdivision: object = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        n = (self.subdivision.tri.n_vertices if self.subdivision is not None
             else self.surface.n_vertices)
        if len(self.values) != n:
            raise CorrectorError("one image point per domain vertex required")

    def face_values(self, faces=None):
        """Image corner triples, one row per (triangular) face."""
        if self.subdivision is not None:
            F = np.asarray(self.subdivision.tri.faces)
        else:
            if self.surface.p != 3:
                raise CorrectorError(
                    "face-wise evaluation needs a triangulated surface")
            F = np.asarray(self.surface.faces)
        if faces is not None:
            F = F[np.asarray(faces, dtype=np.int64)]
        return self.values[F]

    def vertex_value(self, v):
        """Value at an original surface vertex."""
        if self.subdivision is None:
            return self.values[int(v)]
        idx = self.subdivision.original_vertex.get(int(v))
        if idx is None:
            raise CorrectorError(f"vertex {v} not covered by this map")
        return self.values[idx]

    def degenerate_faces(self, tol=1e-14):
        """Faces whose image collapses (zero signed area); allowed, flagged."""
        corners = self.face_values()
        a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
        area2 = np.imag(np.conj(b - a) * (c - a))
        return [int(i) for i in np.nonzero(np.abs(area2) <= tol)[0]]

    def to_text(self):
        lines = ["plmap"]
        for key in sorted(self.provenance):
            val = self.provenance[key]
            if np.isscalar(val):
                lines.append(f"# {key} {val!r}")
        for z in self.values:
            lines.append(f"{z.real!r} {z.imag!r}")
        return "\n".join(lines) + "\n"


def _triangle_gradients(corners):
    """Constant gradient columns of the linear maps sending the reference
    equilateral face to the image corner triples.

    The two columns (as complex numbers) are the image derivatives along the
    first edge direction and its perpendicular; side length of the reference
    triangle cancels, so the same formula serves faces of any refinement
    level.
    """
    a, b, c = corners[..., 0], corners[..., 1], corners[..., 2]
    d1 = b - a
    d2 = (2.0 * (c - a) - (b - a)) / SQRT3
    return d1, d2


def face_energy(corners):
    """Dirichlet energy of the linear map on each face: area x |grad|^2.

    Equals (l1^2 + l2^2 + l3^2) / (2 sqrt 3) in the image side lengths; a
    face congruent to the unit reference face contributes sqrt(3)/2.
    """
    d1, d2 = _triangle_gradients(np.asarray(corners, dtype=complex))
    return (SQRT3 / 4.0) * (np.abs(d1) ** 2 + np.abs(d2) ** 2)


def dirichlet_energy(plmap: PLMap, faces=None) -> float:
    """Total Dirichlet energy of the map over the given faces (default all)."""
    return float(np.sum(face_energy(plmap.face_values(faces))))


def dirichlet_inner(map_a: PLMap, map_b: PLMap, faces=None) -> float:
    """The bilinear form polarizing the Dirichlet energy."""
    ca = map_a.face_values(faces)
    cb = map_b.face_values(faces)
    if ca.shape != cb.shape:
        raise CorrectorError("maps live on different domains")
    d1a, d2a = _triangle_gradients(ca)
    d1b, d2b = _triangle_gradients(cb)
    return float((SQRT3 / 4.0) * np.sum(
        np.real(d1a * np.conj(d1b)) + np.real(d2a * np.conj(d2b))))


def face_energy_quadrature(corners, grid=4, eps=1e-4):
    """Numerical check of the closed-form energy: finite-difference gradients
    sampled on a barycentric grid, averaged against face area."""
    a, b, c = (complex(z) for z in corners)
    # reference face with unit sides; the energy is scale invariant
    ra, rb, rc = 0.0 + 0.0j, 1.0 + 0.0j, complex(0.5, SQRT3 / 2.0)
    area = SQRT3 / 4.0
    mat = np.array([[rb.real - ra.real, rc.real - ra.real],
                    [rb.imag - ra.imag, rc.imag - ra.imag]])
    inv = np.linalg.inv(mat)

    def f(z):
        lam = inv @ np.array([z.real - ra.real, z.imag - ra.imag])
        return (1 - lam[0] - lam[1]) * a + lam[0] * b + lam[1] * c

    total = 0.0
    count = 0
    for i in range(grid):
        for j in range(grid - i):
            p = (ra + (i + 0.4) / grid * (rb - ra)
                 + (j + 0.4) / grid * (rc - ra))
            gx = (f(p + eps) - f(p)) / eps
            gy = (f(p + 1j * eps) - f(p)) / eps
            total += abs(gx) ** 2 + abs(gy) ** 2
            count += 1
    return area * total / count


# ---------------------------------------------------------------------------
# the a-priori embedding
# ---------------------------------------------------------------------------


def _uniform_point(polygon, rng, max_tries=100_000):
    """Uniform point of a polygon by rejection from its bounding box."""
    x0, y0, x1, y1 = polygon.bounds
    for _ in range(max_tries):
        x = rng.uniform(x0, x1)
        y = rng.uniform(y0, y1)
        if shapely.contains_xy(polygon, x, y):
            return complex(x, y)
    raise CorrectorError("rejection sampling failed; degenerate polygon?")


def sample_phi0(config, surface, seed) -> PLMap:
    """The a-priori embedding: an independent uniform point in every cell,
    extended linearly over the glued faces.

    Each vertex uses its own counter-based stream keyed on (seed, vertex), so
    the map is reproducible and insensitive to evaluation order.  Vertices
    without a certified cell fall back to their recorded position.
    """
    if surface.n_vertices != len(config.cells):
        raise CorrectorError("surface vertices and config cells must match")
    values = np.empty(surface.n_vertices, dtype=complex)
    fallbacks = 0
    for v in range(surface.n_vertices):
        cell = config.cells[v]
        if cell is None:
            values[v] = config.positions[v]
            fallbacks += 1
            continue
        rng = np.random.Generator(np.random.Philox(key=[seed, (0x7030 << 32) + v]))
        values[v] = _uniform_point(cell.polygon, rng)
    return PLMap(surface, values,
                 provenance={"kind": "phi0", "seed": int(seed),
                             "fallback_sites": fallbacks})


def phi0_on_subdivision(plmap: PLMap, subdivision) -> PLMap:
    """Transport a vertex-level map to a subdivision by linear interpolation
    on each face (fan wedges for non-triangular faces)."""
    if plmap.subdivision is not None:
        raise CorrectorError("expected a map on the raw surface vertices")
    surf = plmap.surface
    if subdivision.portion.surface is not surf:
        raise CorrectorError("subdivision belongs to a different surface")
    p = surf.p
    frame = surf.frame
    out = np.empty(subdivision.tri.n_vertices, dtype=complex)
    face_ids = subdivision.portion.face_ids
    if p == 3:
        locals_ = np.fromiter((loc for loc, _ in subdivision.locations),
                              dtype=np.int64, count=len(subdivision.locations))
        zs = np.fromiter((z for _, z in subdivision.locations),
                         dtype=complex, count=len(subdivision.locations))
        M = np.array([[(frame[1] - frame[0]).real, (frame[2] - frame[0]).real],
                      [(frame[1] - frame[0]).imag, (frame[2] - frame[0]).imag]])
        Minv = np.linalg.inv(M)
        rel = zs - frame[0]
        lam1 = Minv[0, 0] * rel.real + Minv[0, 1] * rel.imag
        lam2 = Minv[1, 0] * rel.real + Minv[1, 1] * rel.imag
        vals = plmap.values[np.asarray(surf.faces)[face_ids[locals_]]]
        out[:] = ((1 - lam1 - lam2) * vals[:, 0]
                  + lam1 * vals[:, 1] + lam2 * vals[:, 2])
        prov = dict(plmap.provenance)
        prov["mesh_level"] = subdivision.n
        return PLMap(surf, out, subdivision=subdivision, provenance=prov)
    for sv, (local, z) in enumerate(subdivision.locations):
        fverts = surf.faces[int(face_ids[local])]
        vals = plmap.values[list(fverts)]
        if abs(z) < 1e-14:
            out[sv] = np.mean(vals)
            continue
        j = int(math.floor(np.angle(z) / (2 * math.pi) * p - 0.5)) % p
        corners = np.array([0j, frame[j], frame[(j + 1) % p]])
        cvals = np.array([np.mean(vals), vals[j], vals[(j + 1) % p]])
        mat = np.array([[(corners[1] - corners[0]).real,
                         (corners[2] - corners[0]).real],
                        [(corners[1] - corners[0]).imag,
                         (corners[2] - corners[0]).imag]])
        lam = np.linalg.solve(mat, [z.real - corners[0].real,
                                    z.imag - corners[0].imag])
        out[sv] = ((1 - lam[0] - lam[1]) * cvals[0]
                   + lam[0] * cvals[1] + lam[1] * cvals[2])
    prov = dict(plmap.provenance)
    prov["mesh_level"] = subdivision.n
    return PLMap(surf, out, subdivision=subdivision, provenance=prov)


# ---------------------------------------------------------------------------
# harmonic extension over mass-capped squares
# ---------------------------------------------------------------------------


def harmonic_extend(config, phi0: PLMap, dyadic, m, n=8, portion=None) -> PLMap:
    """Re-solve the embedding harmonically inside the preimage of every
    mass-capped square, keeping the values fixed elsewhere.

    The image plane is partitioned into the largest dyadic squares of
    fractional cell mass <= m; a subdivision vertex is an unknown when it and
    all its mesh neighbors map into the same square (and it is not on the
    portion boundary).  Each square's unknowns solve the discrete Laplace
    equation with the uniform edge weights of the equilateral metric,
    Dirichlet data taken from the unrefined map.
    """
    if portion is None:
        raise CorrectorError("a disk-like portion of the surface is required")
    if portion.empty:
        raise CorrectorError("cannot extend over an empty portion")
    sub = subdivide(portion, int(n))
    base = phi0_on_subdivision(phi0, sub)
    values = base.values.copy()
    tri = sub.tri

    # hat squares covering the image of the portion, clipped to the carrier
    pts = base.values
    region = box(pts.real.min(), pts.imag.min(), pts.real.max(), pts.imag.max())
    region = region.intersection(config.carrier_box())
    if region.is_empty or region.area <= 0:
        raise CorrectorError("embedding image leaves the carrier entirely")
    squares = hat_partition(config, dyadic, region, m)

    label = np.full(tri.n_vertices, -1, dtype=np.int64)
    for si, (sq, _mass) in enumerate(squares):
        hit = ((pts.real >= sq.x0) & (pts.real < sq.x0 + sq.side)
               & (pts.imag >= sq.y0) & (pts.imag < sq.y0 + sq.side))
        label[hit & (label < 0)] = si

    nbrs = [[] for _ in range(tri.n_vertices)]
    for (u, v) in tri.edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    on_boundary = np.zeros(tri.n_vertices, dtype=bool)
    on_boundary[tri.boundary] = True

    regions = []
    max_residual = 0.0
    for si in range(len(squares)):
        members = np.nonzero(label == si)[0]
        unknown = [int(v) for v in members
                   if not on_boundary[v]
                   and all(label[u] == si for u in nbrs[v])]
        if not unknown:
            continue
        uidx = {v: i for i, v in enumerate(unknown)}
        rows, cols, data = [], [], []
        rhs = np.zeros(len(unknown), dtype=complex)
        ring = set()
        for v in unknown:
            i = uidx[v]
            rows.append(i)
            cols.append(i)
            data.append(float(len(nbrs[v])))
            for u in nbrs[v]:
                j = uidx.get(u)
                if j is None:
                    rhs[i] += values[u]
                    ring.add(u)
                else:
                    rows.append(i)
                    cols.append(j)
                    data.append(-1.0)
        if not ring:
            raise CorrectorError(
                "region mesh disconnected from its boundary values")
        L = csr_matrix((data, (rows, cols)),
                       shape=(len(unknown), len(unknown)))
        sol = spsolve(L, rhs)
        res = float(np.max(np.abs(L @ sol - rhs))) if len(unknown) else 0.0
        scale = max(1.0, float(np.max(np.abs(rhs))))
        if not np.all(np.isfinite(sol)) or res > 1e-8 * scale:
            raise CorrectorError(
                f"harmonic solve failed on square {si}: residual {res:.3g}")
        max_residual = max(max_residual, res)

        # maximum principle, coordinate-wise against the Dirichlet ring
        ringv = values[sorted(ring)]
        tol = 1e-9 * scale
        assert sol.real.min() >= ringv.real.min() - tol
        assert sol.real.max() <= ringv.real.max() + tol
        assert sol.imag.min() >= ringv.imag.min() - tol
        assert sol.imag.max() <= ringv.imag.max() + tol

        touched = sorted({f for v in unknown
                          for f in _faces_at(tri, v)})
        before = float(np.sum(face_energy(values[np.asarray(tri.faces)[touched]])))
        for v, z in zip(unknown, sol):
            values[v] = z
        after = float(np.sum(face_energy(values[np.asarray(tri.faces)[touched]])))
        assert after <= before * (1 + 1e-12) + 1e-12
        sq = squares[si][0]
        regions.append({"square_level": sq.level,
                        "square_box": (sq.x0, sq.y0, sq.side),
                        "unknowns": np.array(unknown, dtype=np.int64),
                        "ring": np.array(sorted(ring), dtype=np.int64),
                        "energy_before": before, "energy_after": after})

    prov = dict(phi0.provenance)
    prov.update({"kind": "phi_m", "mass_cap": float(m), "mesh_level": int(n),
                 "solve_residual": max_residual, "n_regions": len(regions),
                 "phi0_values": base.values, "square_label": label,
                 "regions": regions})
    return PLMap(phi0.surface, values, subdivision=sub, provenance=prov)


def _faces_at(tri, v):
    cache = getattr(tri, "_corner_faces", None)
    if cache is None:
        cache = [[] for _ in range(tri.n_vertices)]
        for fi, f in enumerate(tri.faces):
            for w in f:
                cache[w].append(fi)
        tri._corner_faces = cache
    return cache[v]


# ---------------------------------------------------------------------------
# comparison statistics
# ---------------------------------------------------------------------------


def se_statistic(map_a: PLMap, map_b: PLMap, cell, clip) -> float:
    """Mean squared gradient difference over the part of the domain whose
    a-priori image lies in cell-intersect-clip, normalized by that area."""
    if map_a.subdivision is None or map_b.subdivision is None:
        raise CorrectorError("SE statistics need subdivision-level maps")
    if map_a.subdivision.tri is not map_b.subdivision.tri:
        ta, tb = map_a.subdivision.tri, map_b.subdivision.tri
        if ta.n_vertices != tb.n_vertices or ta.n_faces != tb.n_faces:
            raise CorrectorError("maps live on different meshes")
    cell_geom = getattr(cell, "polygon", cell)
    domain = cell_geom.intersection(clip)
    if domain.is_empty or domain.area <= 0:
        raise CorrectorError("cell and clip square do not overlap")
    phi0 = map_a.provenance.get("phi0_values", map_a.values)
    F = np.asarray(map_a.subdivision.tri.faces)
    cent = phi0[F].mean(axis=1)
    inside = shapely.contains_xy(domain, cent.real, cent.imag)
    if not inside.any():
        return 0.0
    diff = map_a.values - map_b.values
    corners = diff[F[inside]]
    return float(np.sum(face_energy(corners))) / domain.area


def sublinearity_metric(phi0: PLMap, target, k, portion, gauge=None) -> float:
    """Scaled sup distance between the a-priori map and a gauge-transformed
    target over the vertices of a window portion."""
    if portion.empty:
        raise CorrectorError("empty portion")
    worst = 0.0
    for v in portion.vertices:
        x = phi0.vertex_value(int(v))
        if isinstance(target, DiscreteConformalMap):
            try:
                t = target.vertex_image(int(v))
            except (KeyError, SurfaceError) as exc:
                raise CorrectorError(f"target does not cover vertex {v}") from exc
        else:
            t = target.vertex_value(int(v))
        if gauge is not None:
            t = gauge.apply(t)
        worst = max(worst, abs(x - t))
    return worst / 2.0 ** k


# ---------------------------------------------------------------------------
# linear gauge
# ---------------------------------------------------------------------------


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class GaugeFit:
    """A linear gauge scale * A * R(theta) with det(A) = 1, theta in [0, pi)."""

    A: np.ndarray
    theta: float
    scale: float
    residual: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if self.A.shape != (2, 2):
            raise CorrectorError("gauge matrix must be 2x2")
        if abs(np.linalg.det(self.A) - 1.0) > 1e-10:
            raise CorrectorError("gauge matrix must have determinant one")
        if not self.scale > 0:
            raise CorrectorError("gauge scale must be positive")

    def matrix(self):
        return self.scale * self.A @ _rotation(self.theta)

    def apply(self, points):
        z = np.asarray(points, dtype=complex)
        M = self.matrix()
        w = (M[0, 0] * z.real + M[0, 1] * z.imag
             + 1j * (M[1, 0] * z.real + M[1, 1] * z.imag))
        return complex(w) if np.isscalar(points) or w.ndim == 0 else w


def _as_xy(points):
    arr = np.asarray(points)
    if np.iscomplexobj(arr) or arr.ndim == 1:
        arr = arr.astype(complex)
        return np.column_stack([arr.real, arr.imag])
    return arr.astype(float)


def decompose_linear(L) -> GaugeFit:
    """Factor an orientation-preserving 2x2 map as scale * A * R(theta) with
    det(A) = 1, canonicalized to theta in [0, pi)."""
    L = np.asarray(L, dtype=float)
    d = np.linalg.det(L)
    if d <= 1e-14:
        raise CorrectorError("gauge must be orientation preserving")
    # symmetric-positive factor from L L^T, rotation remainder
    w, V = np.linalg.eigh(L @ L.T)
    P = V @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ V.T
    scale = math.sqrt(d)
    A = P / scale
    R = np.linalg.solve(P, L)
    theta = math.atan2(R[1, 0], R[0, 0]) % (2 * math.pi)
    if theta >= math.pi:
        theta -= math.pi
        A = -A
    return GaugeFit(A, theta, scale)


def fit_linear_gauge(pairs) -> GaugeFit:
    """Least-squares linear gauge from (source, target) point pairs."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise CorrectorError("need at least three point pairs")
    S = _as_xy([p[0] for p in pairs])
    T = _as_xy([p[1] for p in pairs])
    sv = np.linalg.svd(S, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1e-30):
        raise CorrectorError("source points collinear through the origin")
    Lt, *_ = np.linalg.lstsq(S, T, rcond=None)
    L = Lt.T
    fit = decompose_linear(L)
    fit.residual = float(np.sqrt(np.mean(
        np.sum((S @ L.T - T) ** 2, axis=1))))
    return fit
