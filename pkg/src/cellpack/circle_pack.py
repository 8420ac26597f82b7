"""Circle packings of finite disk triangulations.

Two boundary conditions are supported:

* ``fixed-boundary-radii`` — Euclidean packing with prescribed boundary radii,
  solved by damped Newton iteration on log-radii (the angle-sum equations are
  the gradient of a convex functional in these variables).
* ``maximal-in-unit-disk`` — the maximal packing in the unit disk, solved in
  hyperbolic geometry with boundary circles as horocycles, parametrized by
  x = exp(-2*rho) for hyperbolic radius rho.

Layouts place circles by breadth-first tangency propagation; the hyperbolic
layout develops positions in the Poincare disk and converts each circle to its
Euclidean center/radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class TriangulationError(ValueError):
    """Input is not a simple disk triangulation."""


class SolveError(RuntimeError):
    """Radius iteration failed to converge."""


class Triangulation:
    """A simple triangulation of a disk.

    Faces are triples of vertex ids, all with the same (counterclockwise)
    orientation: each directed edge appears in at most one face, boundary
    edges are those whose reversal is missing, and the boundary forms a
    single cycle.
    """

    def __init__(self, n_vertices: int, faces):
        F = np.asarray(faces, dtype=np.int64)
        if F.ndim != 2 or F.shape[1] != 3:
            raise TriangulationError("faces must be an (F,3) array")
        self.n_vertices = int(n_vertices)
        self.faces = F
        directed = {}
        for fi, (a, b, c) in enumerate(F):
            for (u, v) in ((a, b), (b, c), (c, a)):
                if u == v:
                    raise TriangulationError(f"degenerate face {fi}")
                if (u, v) in directed:
                    raise TriangulationError(
                        f"directed edge ({u},{v}) appears twice; orientation inconsistent "
                        "or non-manifold"
                    )
                directed[(u, v)] = fi
        self._left_face = directed
        # rotation at each vertex: within face (a,b,c), at corner a the CCW
        # successor of petal b is petal c
        succ = [dict() for _ in range(self.n_vertices)]
        for (a, b, c) in F:
            succ[a][b] = c
            succ[b][c] = a
            succ[c][a] = b
        self.rot = []
        self.is_boundary = np.zeros(self.n_vertices, dtype=bool)
        for v in range(self.n_vertices):
            s = succ[v]
            if not s:
                raise TriangulationError(f"isolated vertex {v}")
            starts = set(s) - set(s.values())
            if len(starts) == 0:
                # closed fan: interior vertex
                start = next(iter(s))
                closed = True
            elif len(starts) == 1:
                start = starts.pop()
                closed = False
                self.is_boundary[v] = True
            else:
                raise TriangulationError(f"vertex {v} has a disconnected fan")
            cyc = [start]
            w = s.get(start)
            while w is not None and w != start:
                cyc.append(w)
                w = s.get(w)
            if closed and len(cyc) != len(s):
                raise TriangulationError(f"vertex {v} has a disconnected fan")
            if not closed and len(cyc) != len(s) + 1:
                raise TriangulationError(f"vertex {v} has a disconnected fan")
            self.rot.append(cyc)
        self.interior = np.where(~self.is_boundary)[0]
        self.boundary = np.where(self.is_boundary)[0]
        # undirected edges
        self.edges = np.array(
            sorted({(min(u, v), max(u, v)) for (u, v) in directed}), dtype=np.int64
        )
        # boundary must be a single cycle for a disk
        bsucc = {u: v for (v, u) in directed if (u, v) not in directed}
        if len(self.boundary):
            start = int(self.boundary[0])
            cyc = [start]
            w = bsucc.get(start)
            seen = 1
            while w is not None and w != start:
                cyc.append(w)
                w = bsucc.get(w)
                seen += 1
                if seen > self.n_vertices + 1:
                    break
            if w != start or len(cyc) != len(self.boundary):
                raise TriangulationError("boundary is not a single cycle (not a disk)")
            self.boundary_cycle = cyc
        else:
            self.boundary_cycle = []

    @property
    def n_faces(self):
        return len(self.faces)

    def left_face(self, u, v):
        """Index of the face to the left of directed edge (u, v), or None."""
        return self._left_face.get((u, v))

    def degree(self, v):
        return len(self.rot[v])

    def opposite_vertices(self, u, v):
        """Vertices completing the one or two faces on edge (u, v)."""
        out = []
        for (a, b) in ((u, v), (v, u)):
            fi = self._left_face.get((a, b))
            if fi is not None:
                f = self.faces[fi]
                out.append(int(f[(list(f).index(a) + 2) % 3]))
        return out

    @staticmethod
    def from_positions(points, faces):
        """Build from faces of arbitrary orientation using point positions."""
        pts = np.asarray(points, dtype=float)
        F = np.asarray(faces, dtype=np.int64).copy()
        a, b, c = pts[F[:, 0]], pts[F[:, 1]], pts[F[:, 2]]
        cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        flip = cross < 0
        F[flip] = F[flip][:, [0, 2, 1]]
        return Triangulation(len(pts), F)


# ---------------------------------------------------------------------------
# angle sums and derivatives
# ---------------------------------------------------------------------------


def _euclid_corner_data(r, F):
    r0 = r[F]
    r1 = np.roll(r0, -1, axis=1)
    r2 = np.roll(r0, -2, axis=1)
    P = r1 / (r0 + r1)
    Q = r2 / (r0 + r2)
    s2 = np.clip(P * Q, 0.0, 1.0)
    ang = 2.0 * np.arcsin(np.sqrt(s2))
    return ang, P, Q, s2


def euclid_angle_sums(r, tri):
    ang, _, _, _ = _euclid_corner_data(np.asarray(r, float), tri.faces)
    return np.bincount(tri.faces.ravel(), weights=ang.ravel(), minlength=tri.n_vertices)


def _hyper_corner_data(x, F):
    x0 = x[F]
    x1 = np.roll(x0, -1, axis=1)
    x2 = np.roll(x0, -2, axis=1)
    denom = (1.0 - x0 * x1) * (1.0 - x0 * x2)
    s2 = np.clip(x0 * (1.0 - x1) * (1.0 - x2) / denom, 0.0, 1.0)
    ang = 2.0 * np.arcsin(np.sqrt(s2))
    return ang, x0, x1, x2, s2


def hyper_angle_sums(x, tri):
    ang, _, _, _, _ = _hyper_corner_data(np.asarray(x, float), tri.faces)
    return np.bincount(tri.faces.ravel(), weights=ang.ravel(), minlength=tri.n_vertices)


def _euclid_jacobian(r, tri):
    """d theta / d u (u = log r) as a sparse matrix over all vertices."""
    F = tri.faces
    ang, P, Q, s2 = _euclid_corner_data(r, F)
    s = np.sqrt(s2)
    guard = np.maximum(s * np.sqrt(np.maximum(1.0 - s2, 1e-300)), 1e-300)
    d0 = -P * Q * (2.0 - P - Q) / guard
    d1 = Q * P * (1.0 - P) / guard
    d2 = P * Q * (1.0 - Q) / guard
    v0 = F
    v1 = np.roll(F, -1, axis=1)
    v2 = np.roll(F, -2, axis=1)
    rows = np.concatenate([v0.ravel()] * 3)
    cols = np.concatenate([v0.ravel(), v1.ravel(), v2.ravel()])
    data = np.concatenate([d0.ravel(), d1.ravel(), d2.ravel()])
    return sp.coo_matrix((data, (rows, cols)), shape=(tri.n_vertices, tri.n_vertices)).tocsr()


def _hyper_jacobian(x, tri):
    """d theta / d u (u = log x) over all vertices."""
    F = tri.faces
    ang, x0, x1, x2, s2 = _hyper_corner_data(x, F)
    s = np.sqrt(s2)
    fac = s / np.sqrt(np.maximum(1.0 - s2, 1e-300))
    d0 = fac * (1.0 + x0 * x1 / (1.0 - x0 * x1) + x0 * x2 / (1.0 - x0 * x2))
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = fac * (-(1.0 - x0) / np.maximum((1.0 - x1) * (1.0 - x0 * x1), 1e-300)) * x1
        d2 = fac * (-(1.0 - x0) / np.maximum((1.0 - x2) * (1.0 - x0 * x2), 1e-300)) * x2
    v0 = F
    v1 = np.roll(F, -1, axis=1)
    v2 = np.roll(F, -2, axis=1)
    rows = np.concatenate([v0.ravel()] * 3)
    cols = np.concatenate([v0.ravel(), v1.ravel(), v2.ravel()])
    data = np.concatenate([d0.ravel(), d1.ravel(), d2.ravel()])
    return sp.coo_matrix((data, (rows, cols)), shape=(tri.n_vertices, tri.n_vertices)).tocsr()


@dataclass
class RadiiSolution:
    """Solved packing radii.

    ``kind`` is "euclidean" (``values`` are radii for all vertices) or
    "hyperbolic" (``values`` are x = exp(-2 rho); boundary entries are 0).
    """

    kind: str
    values: np.ndarray
    residual: float
    iterations: int
    residual_history: list = field(default_factory=list)

    @property
    def radii(self):
        if self.kind != "euclidean":
            raise SolveError("euclidean radii undefined for a hyperbolic solution")
        return self.values

    def hyperbolic_radii(self):
        if self.kind != "hyperbolic":
            raise SolveError("not a hyperbolic solution")
        with np.errstate(divide="ignore"):
            return -0.5 * np.log(self.values)


FIXED = "fixed-boundary-radii"
MAXIMAL = "maximal-in-unit-disk"


def solve_radii(tri: Triangulation, boundary=FIXED, boundary_radii=1.0,
                tol=1e-12, max_iter=400) -> RadiiSolution:
    """Solve the interior angle-sum equations (target 2*pi at every interior
    vertex) for the requested boundary condition."""
    if not (1e-14 < tol < 1e-4):
        raise ValueError("tol outside supported range")
    if len(tri.interior) == 0:
        raise TriangulationError("triangulation has no interior vertex")
    interior = tri.interior
    n = tri.n_vertices
    target = 2.0 * math.pi

    if boundary == FIXED:
        r = np.ones(n)
        br = np.broadcast_to(np.asarray(boundary_radii, float), (len(tri.boundary),))
        if np.any(br <= 0):
            raise ValueError("boundary radii must be positive")
        r[tri.boundary] = br
        r[interior] = float(np.mean(br)) if len(br) else 1.0
        angle_sums, jac = euclid_angle_sums, _euclid_jacobian

        def get(rv):
            return rv

        u = np.log(r)
        u_lo, u_hi = -700.0, 700.0
    elif boundary == MAXIMAL:
        x = np.zeros(n)
        x[interior] = 0.5
        angle_sums, jac = hyper_angle_sums, _hyper_jacobian

        def get(uv):
            return uv

        u = np.full(n, -np.inf)
        u[interior] = math.log(0.5)
        u_lo, u_hi = -700.0, -1e-10
    else:
        raise ValueError(f"unknown boundary condition {boundary!r}")

    def values_from_u(u):
        vals = np.exp(u)
        if boundary == MAXIMAL:
            vals[tri.boundary] = 0.0
        return vals

    vals = values_from_u(u)
    theta = angle_sums(vals, tri)
    g = theta[interior] - target
    res = float(np.max(np.abs(g)))
    history = [res]

    # Damped diagonal sweeps to enter the Newton basin, then full Newton.
    it = 0
    while res > tol and it < max_iter:
        it += 1
        J = jac(vals, tri)
        if it <= 8 and res > 0.3:
            diag = J.diagonal()[interior]
            step = np.zeros(n)
            step[interior] = -0.6 * g / np.maximum(np.abs(diag), 1e-12) * np.sign(diag)
            step = np.clip(step, -1.5, 1.5)
            u = np.clip(u + step, u_lo, u_hi)
            vals = values_from_u(u)
            theta = angle_sums(vals, tri)
            g = theta[interior] - target
            res = float(np.max(np.abs(g)))
            history.append(res)
            continue
        Jii = J[interior, :][:, interior].tocsc()
        try:
            delta = spla.spsolve(Jii, -g)
        except Exception as exc:  # pragma: no cover - singular systems
            raise SolveError(f"linear solve failed at iteration {it}: {exc}")
        if not np.all(np.isfinite(delta)):
            raise SolveError(f"non-finite Newton step at iteration {it}")
        scale = 1.0
        for _ in range(40):
            u_try = u.copy()
            u_try[interior] = np.clip(u[interior] + scale * delta, u_lo, u_hi)
            vals_try = values_from_u(u_try)
            theta_try = angle_sums(vals_try, tri)
            g_try = theta_try[interior] - target
            res_try = float(np.max(np.abs(g_try)))
            if res_try < res or res_try < tol:
                break
            scale *= 0.5
        else:
            raise SolveError(f"line search stalled at residual {res:.3e}")
        u, vals, g, res = u_try, vals_try, g_try, res_try
        history.append(res)

    if res > tol:
        raise SolveError(f"no convergence after {it} iterations; residual {res:.3e}")
    kind = "euclidean" if boundary == FIXED else "hyperbolic"
    return RadiiSolution(kind, vals, res, it, history)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


@dataclass
class CirclePacking:
    """Laid-out circle packing: per-vertex Euclidean center and radius.

    Vertices that could not be placed (boundary horocycle neighbors of a
    maximal packing outside the root's interior component) carry NaN entries
    and are listed in ``unplaced``.
    """

    tri: Triangulation
    centers: np.ndarray  # complex
    radii: np.ndarray
    boundary_condition: str
    root: int
    solution: RadiiSolution | None = None
    unplaced: list = field(default_factory=list)

    def placed_mask(self):
        return ~np.isnan(self.radii)

    def tangency_residuals(self):
        """Relative tangency error per edge with both endpoints placed."""
        e = self.tri.edges
        ok = self.placed_mask()
        m = ok[e[:, 0]] & ok[e[:, 1]]
        ee = e[m]
        d = np.abs(self.centers[ee[:, 0]] - self.centers[ee[:, 1]])
        s = self.radii[ee[:, 0]] + self.radii[ee[:, 1]]
        return np.abs(d - s) / s

    def to_text(self):
        lines = [f"circlepacking {self.tri.n_vertices} {self.boundary_condition} root {self.root}"]
        for v in range(self.tri.n_vertices):
            c = self.centers[v]
            lines.append(f"{v} {c.real!r} {c.imag!r} {self.radii[v]!r}")
        return "\n".join(lines) + "\n"

    def to_svg(self, path=None, tangency_graph=False):
        ok = self.placed_mask()
        cs, rs = self.centers[ok], self.radii[ok]
        if len(cs) == 0:
            raise ValueError("nothing to draw")
        x0 = float(np.min(cs.real - rs)); x1 = float(np.max(cs.real + rs))
        y0 = float(np.min(cs.imag - rs)); y1 = float(np.max(cs.imag + rs))
        w = x1 - x0 or 1.0; h = y1 - y0 or 1.0
        sw = 0.002 * max(w, h)
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0} {-y1} {w} {h}">']
        for c, r in zip(cs, rs):
            out.append(
                f'<circle cx="{c.real}" cy="{-c.imag}" r="{r}" fill="none" '
                f'stroke="black" stroke-width="{sw}"/>'
            )
        if tangency_graph:
            okv = self.placed_mask()
            for (u, v) in self.tri.edges:
                if okv[u] and okv[v]:
                    a, b = self.centers[u], self.centers[v]
                    out.append(
                        f'<line x1="{a.real}" y1="{-a.imag}" x2="{b.real}" y2="{-b.imag}" '
                        f'stroke="blue" stroke-width="{sw}"/>'
                    )
        out.append("</svg>")
        text = "\n".join(out)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _euclid_layout(tri, r, root, root_neighbor):
    n = tri.n_vertices
    pos = np.full(n, np.nan + 0j, dtype=complex)
    pos[root] = 0.0
    pos[root_neighbor] = r[root] + r[root_neighbor]
    ang, _, _, _ = _euclid_corner_data(r, tri.faces)
    corner_angle = {}
    for fi, (a, b, c) in enumerate(tri.faces):
        corner_angle[(a, fi)] = ang[fi, 0]
        corner_angle[(b, fi)] = ang[fi, 1]
        corner_angle[(c, fi)] = ang[fi, 2]
    from collections import deque

    q = deque([(root, root_neighbor), (root_neighbor, root)])
    placed = np.zeros(n, dtype=bool)
    placed[root] = placed[root_neighbor] = True
    face_done = np.zeros(tri.n_faces, dtype=bool)
    while q:
        u, v = q.popleft()
        fi = tri.left_face(u, v)
        if fi is None or face_done[fi]:
            continue
        face_done[fi] = True
        f = tri.faces[fi]
        w = int(f[(list(f).index(u) + 2) % 3])
        if not placed[w]:
            alpha = corner_angle[(u, fi)]
            direction = np.angle(pos[v] - pos[u]) + alpha
            pos[w] = pos[u] + (r[u] + r[w]) * np.exp(1j * direction)
            placed[w] = True
        q.append((u, w))
        q.append((w, v))
    unplaced = [v for v in range(n) if not placed[v]]
    radii = r.astype(float).copy()
    for v in unplaced:
        radii[v] = np.nan
    return pos, radii, unplaced


def _mobius_to(zu, z):
    return (z - zu) / (1.0 - np.conj(zu) * z)


def _mobius_from(zu, z):
    return (z + zu) / (1.0 + np.conj(zu) * z)


def _hyper_layout(tri, x, root, root_neighbor):
    """Develop interior circles of the maximal packing in the Poincare disk.

    Only interior vertices in the root's interior-subgraph component are
    placed; boundary horocycles are left unplaced.
    """
    n = tri.n_vertices
    interior = ~tri.is_boundary
    if tri.is_boundary[root]:
        raise SolveError("maximal-packing layout root must be interior")
    with np.errstate(divide="ignore"):
        rho = -0.5 * np.log(x)  # hyperbolic radii; inf on boundary
    ang, _, _, _, _ = _hyper_corner_data(x, tri.faces)
    corner_angle = {}
    for fi, (a, b, c) in enumerate(tri.faces):
        corner_angle[(a, fi)] = ang[fi, 0]
        corner_angle[(b, fi)] = ang[fi, 1]
        corner_angle[(c, fi)] = ang[fi, 2]
    z = np.full(n, np.nan + 0j, dtype=complex)
    placed = np.zeros(n, dtype=bool)
    z[root] = 0.0
    placed[root] = True
    from collections import deque

    if root_neighbor is None or tri.is_boundary[root_neighbor]:
        cand = [w for w in tri.rot[root] if interior[w]]
        root_neighbor = cand[0] if cand else None
    if root_neighbor is not None:
        z[root_neighbor] = math.tanh((rho[root] + rho[root_neighbor]) / 2.0)
        placed[root_neighbor] = True
        q = deque([root, root_neighbor])
    else:
        q = deque()  # lone interior vertex: only the root circle is placed
    while q:
        u = q.popleft()
        petals = tri.rot[u]
        k = len(petals)
        ref = None
        for i, p in enumerate(petals):
            if placed[p] and interior[p]:
                ref = i
                break
        if ref is None:
            continue
        theta_ref = float(np.angle(_mobius_to(z[u], z[petals[ref]])))
        # cumulative corner angles around u (interior: full closed fan)
        acc = theta_ref
        for j in range(1, k):
            a = petals[(ref + j - 1) % k]
            b = petals[(ref + j) % k]
            fi = tri.left_face(u, a)
            # face (u, a, b): angle at u between petals a and b
            if fi is None:
                break
            acc += corner_angle[(u, fi)]
            if interior[b] and not placed[b]:
                d = rho[u] + rho[b]
                zeta = math.tanh(d / 2.0) * np.exp(1j * acc)
                z[b] = _mobius_from(z[u], zeta)
                placed[b] = True
                q.append(b)
    # convert hyperbolic circles to euclidean data
    centers = np.full(n, np.nan + 0j, dtype=complex)
    radii = np.full(n, np.nan)
    idx = np.where(placed)[0]
    for v in idx:
        a = np.abs(z[v])
        d = 2.0 * math.atanh(min(a, 1.0 - 1e-16))
        lo = math.tanh((d - rho[v]) / 2.0)
        hi = math.tanh((d + rho[v]) / 2.0)
        direction = z[v] / a if a > 0 else 1.0
        centers[v] = 0.5 * (lo + hi) * direction
        radii[v] = 0.5 * (hi - lo)
    unplaced = [v for v in range(n) if not placed[v]]
    return centers, radii, unplaced


def layout(tri: Triangulation, solution: RadiiSolution, root=None,
           root_neighbor=None) -> CirclePacking:
    """Place circles by tangency.  Root at the origin, designated neighbor on
    the positive real axis; deterministic."""
    if root is None:
        root = int(tri.interior[0])
    if solution.kind == "euclidean":
        r = solution.values
        theta = euclid_angle_sums(r, tri)
        res = float(np.max(np.abs(theta[tri.interior] - 2 * math.pi)))
        if res > 1e-6:
            raise SolveError(f"radii do not solve the angle-sum equations (residual {res:.2e})")
        if root_neighbor is None:
            root_neighbor = tri.rot[root][0]
        pos, radii, unplaced = _euclid_layout(tri, r, root, root_neighbor)
        bc = FIXED
    else:
        x = solution.values
        theta = hyper_angle_sums(x, tri)
        res = float(np.max(np.abs(theta[tri.interior] - 2 * math.pi)))
        if res > 1e-6:
            raise SolveError(f"radii do not solve the angle-sum equations (residual {res:.2e})")
        pos, radii, unplaced = _hyper_layout(tri, x, root, root_neighbor)
        bc = MAXIMAL
    return CirclePacking(tri, pos, radii, bc, root, solution, unplaced)


def pack(tri: Triangulation, boundary=FIXED, boundary_radii=1.0, root=None,
         tol=1e-12) -> CirclePacking:
    """Convenience: solve radii and lay out in one call."""
    sol = solve_radii(tri, boundary, boundary_radii, tol=tol)
    return layout(tri, sol, root=root)


def natural_boundary_radii(tri: Triangulation, positions):
    """Boundary radii matched to the embedded hull spacing: half the mean
    length of the two boundary-cycle edges at each hull vertex.

    Constant boundary radii squeeze the packing of a large point cloud (the
    hull has few vertices), which distorts everything inward; these radii
    keep the packed geometry close to the source coordinates."""
    pos = np.asarray(positions, dtype=complex)
    cyc = tri.boundary_cycle
    if not cyc:
        raise TriangulationError("triangulation has no boundary")
    k = len(cyc)
    by_vertex = {}
    for i, b in enumerate(cyc):
        prv, nxt = cyc[i - 1], cyc[(i + 1) % k]
        by_vertex[b] = 0.25 * (abs(pos[b] - pos[prv]) + abs(pos[b] - pos[nxt]))
    return np.array([by_vertex[int(b)] for b in tri.boundary])


# ---------------------------------------------------------------------------
# Descartes circle theorem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FourthCircle:
    kind: str       # "circle" | "line" | "enclosing"
    curvature: float

    @property
    def radius(self):
        if self.kind == "circle":
            return 1.0 / self.curvature
        if self.kind == "line":
            return math.inf
        return -1.0 / self.curvature  # enclosing circle, reported positive


def descartes_fourth(r1, r2, r3, sign="inner") -> FourthCircle:
    """Radius of a fourth circle tangent to three mutually tangent circles.

    Infinite radius encodes a line (curvature 0).  The ``inner`` sign gives
    the circle contained in the bounded interstice; ``outer`` may produce a
    line or an enclosing circle, reported as such rather than an error.
    """
    ks = []
    for r in (r1, r2, r3):
        if math.isinf(r):
            ks.append(0.0)
        elif r > 0:
            ks.append(1.0 / r)
        else:
            raise ValueError("radii must be positive (or infinite for lines)")
    k1, k2, k3 = ks
    cross = k1 * k2 + k2 * k3 + k3 * k1
    if cross < 0:
        raise ValueError("circles are not mutually tangent with disjoint interiors")
    root = 2.0 * math.sqrt(cross)
    k4 = k1 + k2 + k3 + (root if sign == "inner" else -root)
    if sign not in ("inner", "outer"):
        raise ValueError("sign must be 'inner' or 'outer'")
    if k4 > 0:
        return FourthCircle("circle", k4)
    if k4 == 0:
        return FourthCircle("line", 0.0)
    return FourthCircle("enclosing", k4)


# ---------------------------------------------------------------------------
# flower checks (Ring Lemma / three-circle bound)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowerReport:
    vertex: int
    degree: int
    min_petal_ratio: float       # min_j r_j / r_0
    min_three_circle_ratio: float  # min over consecutive petal pairs of r2/min(r0,r1)
    three_circle_bound: float    # 0.01 / d^2
    passes: bool


def flower_checks(packing: CirclePacking, v) -> FlowerReport:
    tri = packing.tri
    if tri.is_boundary[v]:
        raise ValueError(f"vertex {v} is on the boundary; no full flower")
    petals = tri.rot[v]
    r = packing.radii
    if np.isnan(r[v]) or any(np.isnan(r[p]) for p in petals):
        raise ValueError(f"flower of {v} not fully placed")
    r0 = r[v]
    d = len(petals)
    min_petal = min(r[p] / r0 for p in petals)
    bound = 0.01 / (d * d)
    min_tc = math.inf
    for i in range(d):
        a, b = petals[i], petals[(i + 1) % d]
        for (p1, p2) in ((a, b), (b, a)):
            min_tc = min(min_tc, r[p2] / min(r0, r[p1]))
    return FlowerReport(v, d, min_petal, min_tc, bound, min_tc >= bound)


def scan_flowers(packing: CirclePacking):
    """Flower reports for every fully placed interior vertex."""
    out = []
    ok = packing.placed_mask()
    for v in packing.tri.interior:
        petals = packing.tri.rot[v]
        if ok[v] and all(ok[p] for p in petals):
            out.append(flower_checks(packing, int(v)))
    return out


# ---------------------------------------------------------------------------
# nested truncation stability
# ---------------------------------------------------------------------------


def _graph_ball(tri, root, k):
    """Vertices at graph distance <= k from root, via the tangency graph."""
    from collections import deque

    dist = {root: 0}
    q = deque([root])
    while q:
        v = q.popleft()
        if dist[v] == k:
            continue
        for w in tri.rot[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return sorted(dist)


def nested_radii_stability(tris, root, k, maps=None):
    """Pack each truncation maximally in the unit disk, renormalize so the
    root circle has unit radius, and tabulate the B_k radii.

    ``maps`` optionally gives, per truncation, an array sending its local
    vertex ids to shared global ids (identity if omitted).  The truncations
    must realize the same global ball B_k(root), root given globally."""
    if maps is None:
        maps = [np.arange(t.n_vertices) for t in tris]
    locals_ = []
    ball_global = None
    for tri, mp in zip(tris, maps):
        mp = np.asarray(mp)
        inv = {int(g): i for i, g in enumerate(mp)}
        if root not in inv:
            raise ValueError("root missing from a truncation")
        bl = _graph_ball(tri, inv[root], k)
        bg = sorted(int(mp[v]) for v in bl)
        if ball_global is None:
            ball_global = bg
        elif bg != ball_global:
            raise ValueError("truncations do not agree on the ball B_k of the root")
        locals_.append((inv[root], [inv[g] for g in ball_global]))
    table = []
    for tri, (rloc, ball_loc) in zip(tris, locals_):
        p = pack(tri, boundary=MAXIMAL, root=rloc, tol=1e-12)
        rr = p.radii[ball_loc] / p.radii[rloc]
        if np.any(np.isnan(rr)):
            raise SolveError("ball vertex unplaced in maximal packing")
        table.append(rr)
    diffs = []
    for a, b in zip(table, table[1:]):
        diffs.append(float(np.max(np.abs(a - b) / np.abs(a))))
    return table, diffs
