"""Weighted random walks on packings and cell configurations.

Conductance-weighted nearest-neighbor walks with counter-based per-walk
random streams, curve distance for walk paths, ensemble statistics (drift,
covariance, mean-squared displacement, exit isotropy), and vertex extremal
length diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class WalkError(ValueError):
    pass


class VelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# weighted graphs
# ---------------------------------------------------------------------------


class WeightedGraph:
    """Immutable conductance-weighted graph with embedded vertex positions.

    ``interior`` marks vertices walks may occupy; stepping onto a vertex
    outside it is a hard error (walk domains are pre-sized, never reflected).
    """

    def __init__(self, positions, neighbors, conductances, interior=None,
                 flagged_edges=None):
        self.positions = np.asarray(positions, dtype=complex)
        n = len(self.positions)
        self.neighbors = [np.asarray(nb, dtype=np.int64) for nb in neighbors]
        self.conductances = [np.asarray(c, dtype=float) for c in conductances]
        if len(self.neighbors) != n or len(self.conductances) != n:
            raise WalkError("per-vertex adjacency and weights required")
        for nb, c in zip(self.neighbors, self.conductances):
            if len(nb) != len(c):
                raise WalkError("weights misaligned with adjacency")
            if len(c) and (not np.all(np.isfinite(c)) or np.any(c <= 0)):
                raise WalkError("conductances must be positive and finite")
        self.pi = np.array([c.sum() for c in self.conductances])
        if interior is None:
            interior = np.ones(n, dtype=bool)
        self.interior = np.asarray(interior, dtype=bool)
        self.flagged_edges = flagged_edges or set()
        # padded transition tables for vectorized stepping
        maxd = max((len(nb) for nb in self.neighbors), default=0)
        self._nbr = np.zeros((n, maxd), dtype=np.int64)
        self._cum = np.ones((n, maxd))
        for v, (nb, c) in enumerate(zip(self.neighbors, self.conductances)):
            if len(nb) == 0:
                continue
            self._nbr[v, :len(nb)] = nb
            self._nbr[v, len(nb):] = nb[-1] if len(nb) else 0
            cum = np.cumsum(c) / c.sum()
            self._cum[v, :len(nb)] = cum

    @property
    def n_vertices(self):
        return len(self.positions)

    def step_all(self, vs, u):
        """Next vertex for each current vertex in vs given uniforms u."""
        idx = (u[:, None] > self._cum[vs]).sum(axis=1)
        return self._nbr[vs, idx]

    def conductance(self, u, v):
        nb = self.neighbors[u]
        hits = np.nonzero(nb == v)[0]
        if not len(hits):
            raise WalkError(f"no edge {u}-{v}")
        return float(self.conductances[u][hits[0]])


def dubejko_conductance(r_u, r_v, opposite_radii):
    """Conductance of a tangency edge from the two circle radii and the radii
    of the circles opposite the edge."""
    first = math.sqrt(r_u * r_v) / (r_u + r_v)
    s = sum(math.sqrt(r_w / (r_w + r_u + r_v)) for r_w in opposite_radii)
    return first * s


def dubejko_weights(packing) -> WeightedGraph:
    """Conductances making the circle-center walk a martingale.

    Edges lying on fewer than two triangles are flagged and their endpoints
    excluded from walk domains.
    """
    tri = packing.tri
    r = packing.radii
    n = tri.n_vertices
    nbrs = [[] for _ in range(n)]
    conds = [[] for _ in range(n)]
    flagged = set()
    for (u, v) in tri.edges:
        opp = [w for w in tri.opposite_vertices(u, v) if w is not None]
        c = dubejko_conductance(r[u], r[v], [r[w] for w in opp])
        nbrs[u].append(v)
        conds[u].append(c)
        nbrs[v].append(u)
        conds[v].append(c)
        if len(opp) < 2:
            flagged.add((min(u, v), max(u, v)))
    interior = packing.placed_mask() if hasattr(packing, "placed_mask") else \
        np.ones(n, dtype=bool)
    interior = interior.copy()
    bnd = set(int(b) for b in tri.boundary)
    for v in range(n):
        if v in bnd:
            interior[v] = False
    pos = packing.centers.copy()
    return WeightedGraph(pos, nbrs, conds, interior=interior,
                         flagged_edges=flagged)


def config_graph(config, unit_conductance=False) -> WeightedGraph:
    """Walk graph of a cell configuration: embedded positions + map adjacency,
    weighted by the configuration's conductances (or all ones)."""
    m = config.map
    n = m.n_vertices
    cond_of = {}
    for i, (u, v, h) in enumerate(config.edge_list):
        cond_of[h] = float(config.conductances[i])
    nbrs = []
    conds = []
    for v in range(n):
        nb = []
        cc = []
        for h in m.rot[v]:
            nb.append(m.target(h))
            key = min(h, m.twin[h])
            cc.append(1.0 if unit_conductance else cond_of[key])
        nbrs.append(nb)
        conds.append(cc)
    interior = np.array([config.cells[v] is not None for v in range(n)])
    return WeightedGraph(config.positions, nbrs, conds, interior=interior)


# ---------------------------------------------------------------------------
# walks
# ---------------------------------------------------------------------------


@dataclass
class WalkPath:
    vertices: np.ndarray
    curve: np.ndarray  # complex polyline through embedded positions
    seed: int
    stopped_by: str = "steps"  # "steps" | "exit"


def _walk_rng(seed, walk_index):
    return np.random.Generator(
        np.random.Philox(key=[np.uint64(seed), np.uint64(walk_index)])
    )


def random_walk(graph: WeightedGraph, start, n_steps=None, exit_radius=None,
                seed=0, walk_index=0) -> WalkPath:
    """Single conductance-weighted walk, deterministic under (seed, index).

    Stops after n_steps, or once the position leaves the disk of radius
    exit_radius around the starting position (whichever comes first).
    Touching a non-interior vertex before stopping is a hard error.
    """
    if n_steps is None and exit_radius is None:
        raise WalkError("a stop rule is required")
    if not graph.interior[start]:
        raise WalkError("start vertex is not in the walk domain")
    rng = _walk_rng(seed, walk_index)
    verts = [start]
    v = start
    z0 = graph.positions[start]
    stopped_by = "steps"
    t = 0
    while True:
        if exit_radius is not None and abs(graph.positions[v] - z0) >= exit_radius:
            stopped_by = "exit"
            break
        if n_steps is not None and t >= n_steps:
            break
        if not graph.interior[v]:
            raise WalkError("domain too small: walk reached the graph boundary")
        u = rng.random()
        v = int(graph.step_all(np.array([v]), np.array([u]))[0])
        verts.append(v)
        t += 1
    verts = np.array(verts)
    return WalkPath(verts, graph.positions[verts], seed, stopped_by)


def _run_ensemble(graph, start, n_walks, n_steps, seed, exit_radius=None,
                  n_checkpoints=60):
    """Vectorized ensemble with per-walk substreams.

    Returns dict with endpoints, steps taken, stop causes, MSD checkpoints
    and per-direction step counts.
    """
    # pre-draw each walk's uniforms from its own stream (order-independent)
    U = np.empty((n_walks, n_steps))
    for i in range(n_walks):
        U[i] = _walk_rng(seed, i).random(n_steps)
    vs = np.full(n_walks, start, dtype=np.int64)
    z0 = graph.positions[start]
    alive = np.ones(n_walks, dtype=bool)
    steps = np.zeros(n_walks, dtype=np.int64)
    cause = np.array(["steps"] * n_walks, dtype=object)
    cps = np.unique(np.linspace(1, n_steps, n_checkpoints).astype(int))
    msd = np.zeros(len(cps))
    alive_at_cp = np.zeros(len(cps), dtype=np.int64)
    cp_i = 0
    for t in range(1, n_steps + 1):
        idx = np.nonzero(alive)[0]
        if not len(idx):
            break
        nxt = graph.step_all(vs[idx], U[idx, t - 1])
        if not np.all(graph.interior[nxt]):
            raise WalkError("domain too small: a walk reached the graph boundary")
        vs[idx] = nxt
        steps[idx] = t
        if exit_radius is not None:
            out = np.abs(graph.positions[vs[idx]] - z0) >= exit_radius
            if np.any(out):
                stopped = idx[out]
                alive[stopped] = False
                cause[stopped] = "exit"
        while cp_i < len(cps) and cps[cp_i] == t:
            disp = graph.positions[vs[alive]] - z0
            if np.any(alive):
                msd[cp_i] = np.mean(np.abs(disp) ** 2)
            alive_at_cp[cp_i] = alive.sum()
            cp_i += 1
    endpoints = graph.positions[vs]
    return {
        "endpoints": endpoints, "steps": steps, "cause": cause,
        "checkpoints": cps[:cp_i], "msd": msd[:cp_i],
        "alive_at_cp": alive_at_cp[:cp_i], "start": z0,
    }


@dataclass
class WalkReport:
    n_walks: int
    n_steps: int
    seed: int
    exit_radius: float
    mean_displacement: complex
    se_displacement: float
    drift_sigmas: float
    covariance: np.ndarray  # per-step 2x2
    msd_r2: float
    msd_slope: float
    exit_angle_pvalue: float
    n_exited: int
    endpoints: np.ndarray = field(repr=False, default=None)
    steps: np.ndarray = field(repr=False, default=None)
    exit_angles: np.ndarray = field(repr=False, default=None)

    def to_text(self):
        c = self.covariance
        lines = [
            f"walks {self.n_walks} steps {self.n_steps} seed {self.seed}",
            f"exit_radius {self.exit_radius}",
            f"mean_displacement {self.mean_displacement.real:.6g} "
            f"{self.mean_displacement.imag:.6g}",
            f"se {self.se_displacement:.6g} drift_sigmas {self.drift_sigmas:.4g}",
            f"covariance {c[0, 0]:.6g} {c[0, 1]:.6g} {c[1, 1]:.6g}",
            f"msd_r2 {self.msd_r2:.6g} msd_slope {self.msd_slope:.6g}",
            f"exit_angle_pvalue {self.exit_angle_pvalue:.4g} "
            f"n_exited {self.n_exited}",
        ]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        rows = ["walk,end_x,end_y,steps,exit_angle"]
        for i in range(self.n_walks):
            ang = "" if self.exit_angles is None or np.isnan(self.exit_angles[i]) \
                else f"{self.exit_angles[i]:.9g}"
            rows.append(f"{i},{self.endpoints[i].real:.9g},"
                        f"{self.endpoints[i].imag:.9g},{self.steps[i]},{ang}")
        return "\n".join(rows) + "\n"


def walk_statistics(graph: WeightedGraph, start, n_walks, n_steps, seed,
                    exit_radius=None, n_checkpoints=60) -> WalkReport:
    """Ensemble statistics: drift with standard error, per-step covariance,
    mean-squared-displacement linearity, exit-angle isotropy.

    With exit_radius set, walks are stopped once they leave the disk of that
    radius around the start; the stopped ensemble keeps the martingale
    (mean-zero) property by optional stopping and the rule is recorded.  The
    MSD regression only uses checkpoints where at least 95% of walks are
    still alive, so a stopped ensemble needs n_checkpoints dense enough to
    resolve the pre-exit regime.
    """
    from scipy import stats

    data = _run_ensemble(graph, start, n_walks, n_steps, seed,
                         exit_radius=exit_radius,
                         n_checkpoints=n_checkpoints)
    disp = data["endpoints"] - data["start"]
    xy = np.column_stack([disp.real, disp.imag])
    mean = complex(xy[:, 0].mean(), xy[:, 1].mean())
    se = float(np.sqrt((xy.var(axis=0).sum()) / n_walks))
    drift_sigmas = abs(mean) / se if se > 0 else math.inf
    total_steps = data["steps"].sum()
    cov = xy.T @ xy / total_steps
    # regression of MSD on steps over checkpoints where most walks are alive
    cps, msd, alive = data["checkpoints"], data["msd"], data["alive_at_cp"]
    # restrict to the bias-free range: once any walk has been stopped, the
    # surviving ensemble is conditioned on staying inside and MSD bends down
    mask = alive >= n_walks
    if mask.sum() >= 3:
        res = stats.linregress(cps[mask], msd[mask])
        r2, slope = float(res.rvalue**2), float(res.slope)
    else:
        r2, slope = float("nan"), float("nan")
    exited = data["cause"] == "exit"
    angles = np.full(n_walks, np.nan)
    if np.any(exited):
        angles[exited] = np.angle(disp[exited])
        k = 12
        hist, _ = np.histogram(angles[exited], bins=k, range=(-math.pi, math.pi))
        chi = ((hist - exited.sum() / k) ** 2 / (exited.sum() / k)).sum()
        pval = float(stats.chi2.sf(chi, k - 1))
    else:
        pval = float("nan")
    return WalkReport(
        n_walks=n_walks, n_steps=n_steps, seed=seed,
        exit_radius=float("nan") if exit_radius is None else exit_radius,
        mean_displacement=mean, se_displacement=se, drift_sigmas=drift_sigmas,
        covariance=cov, msd_r2=r2, msd_slope=slope, exit_angle_pvalue=pval,
        n_exited=int(exited.sum()), endpoints=data["endpoints"],
        steps=data["steps"], exit_angles=angles,
    )


def martingale_residuals(graph: WeightedGraph):
    """Per-vertex |Σ_v (𝔠(u,v)/π(u))(pos_v − pos_u)| over walkable vertices
    all of whose incident edges are unflagged; normalized by local scale."""
    out = {}
    for u in range(graph.n_vertices):
        if not graph.interior[u]:
            continue
        nb = graph.neighbors[u]
        if any((min(u, int(v)), max(u, int(v))) in graph.flagged_edges
               for v in nb):
            continue
        w = graph.conductances[u] / graph.pi[u]
        res = np.sum(w * (graph.positions[nb] - graph.positions[u]))
        scale = np.mean(np.abs(graph.positions[nb] - graph.positions[u]))
        out[u] = abs(res) / scale
    return out


# ---------------------------------------------------------------------------
# curve distance
# ---------------------------------------------------------------------------


def cmp_distance(curve_a, curve_b):
    """Distance between polylines modulo increasing reparameterization:
    dynamic programming over monotone vertex alignments (discrete Fréchet).
    Upper-bounds the continuous infimum; exact up to vertex granularity."""
    a = np.asarray(curve_a, dtype=complex)
    b = np.asarray(curve_b, dtype=complex)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty curve")
    d = np.abs(a[:, None] - b[None, :])
    n, m = d.shape
    f = np.empty((n, m))
    f[0, 0] = d[0, 0]
    for j in range(1, m):
        f[0, j] = max(f[0, j - 1], d[0, j])
    for i in range(1, n):
        f[i, 0] = max(f[i - 1, 0], d[i, 0])
        prev = f[i - 1]
        cur = f[i]
        for j in range(1, m):
            cur[j] = max(d[i, j], min(prev[j], prev[j - 1], cur[j - 1]))
    return float(f[-1, -1])


# ---------------------------------------------------------------------------
# vertex extremal length
# ---------------------------------------------------------------------------


def vel_exact_small(n_vertices, paths, tol=1e-6):
    """Extremal length of a finite path family over vertex metrics.

    sup_m (min_path Σ_{v∈path} m_v)² / Σ_v m_v², computed as the reciprocal
    of the quadratic program min Σ m² subject to unit path lengths.
    """
    from scipy.optimize import minimize

    if not paths:
        raise VelError("empty path family")
    if n_vertices > 12:
        raise VelError("exact computation limited to 12 vertices")
    for p in paths:
        if len(p) < 2:
            raise VelError("degenerate single-vertex path in family")
    A = np.zeros((len(paths), n_vertices))
    for i, p in enumerate(paths):
        for v in p:
            A[i, v] += 1.0
    cons = [{"type": "ineq", "fun": lambda m, Ai=A[i]: Ai @ m - 1.0}
            for i in range(len(paths))]
    bounds = [(0.0, None)] * n_vertices
    x0 = np.full(n_vertices, 1.0 / max(len(p) for p in paths))
    res = minimize(lambda m: m @ m, x0, jac=lambda m: 2 * m,
                   constraints=cons, bounds=bounds, method="SLSQP",
                   options={"ftol": 1e-12, "maxiter": 500})
    if not res.success:
        raise VelError(f"optimization failed: {res.message}")
    return 1.0 / float(res.fun)


def _shortest_separating_cycle(graph_nbrs, metric, positions, center_a,
                               center_b, ray_dir, starts=None):
    """Min vertex-metric length of a cycle encircling exactly one of the two
    centers.  Quadrupled graph: two parity bits track crossings of the rays
    from each center (both in direction ray_dir); a closed walk separates the
    centers iff exactly one parity is odd.

    With starts given, only cycles through at least one start vertex are
    considered (sound whenever every candidate cycle must meet that set)."""
    import heapq

    def cross_bit(a, b, zc):
        za, zb = positions[a] - zc, positions[b] - zc
        ra, rb = za / ray_dir, zb / ray_dir
        if (ra.imag > 0) == (rb.imag > 0):
            return 0
        t = ra.imag / (ra.imag - rb.imag)
        return 1 if ra.real + t * (rb.real - ra.real) > 0 else 0

    n = len(graph_nbrs)
    best = math.inf
    for s in (range(n) if starts is None else starts):
        if not len(graph_nbrs[s]):
            continue
        dist = {(s, 0, 0): metric[s]}
        pq = [(metric[s], s, 0, 0)]
        while pq:
            d, v, pa, pb = heapq.heappop(pq)
            if d > dist.get((v, pa, pb), math.inf) or d >= best:
                continue
            for u in graph_nbrs[v]:
                na = pa ^ cross_bit(v, u, center_a)
                nb = pb ^ cross_bit(v, u, center_b)
                nd = d + metric[u]
                if nd < dist.get((u, na, nb), math.inf):
                    dist[(u, na, nb)] = nd
                    heapq.heappush(pq, (nd, u, na, nb))
        for key in ((s, 1, 0), (s, 0, 1)):
            if key in dist:
                best = min(best, dist[key] - metric[s])  # s counted once
    return best


def vel_bound_check(packing, v, v0, annuli=4):
    """Lower-bound the extremal length of loops separating v from v0 and
    compare with the geometric bound 4|z_v|/r_v.

    The packing must be laid out with v0's circle centered at the origin.
    Candidate metrics are circle radii restricted to tubes around the
    segment from v0 to v; each gives (shortest separating loop
    length)²/area as a lower bound.
    """
    tri = packing.tri
    centers = packing.centers
    radii = packing.radii
    if v == v0:
        raise ValueError("need distinct vertices")
    if abs(centers[v0]) > 1e-9 * max(1.0, abs(centers[v])):
        raise ValueError("packing must be normalized with v0 at the origin")
    z_v = centers[v]
    paper_bound = 4.0 * abs(z_v) / radii[v]
    nbrs = [[] for _ in range(tri.n_vertices)]
    placed = packing.placed_mask()
    for (a, b) in tri.edges:
        if placed[a] and placed[b]:
            nbrs[a].append(b)
            nbrs[b].append(a)
    # loops may not pass through v or v0 themselves
    sub = [list(w for w in nbrs[u] if w not in (v, v0))
           if u not in (v, v0) else [] for u in range(tri.n_vertices)]

    def ray_for_both():
        rel = np.concatenate([centers[placed] - 0j, centers[placed] - z_v])
        rel = rel[np.abs(rel) > 1e-12]
        ang = 0.5613  # arbitrary; rotated until clear of every vertex
        for _ in range(100):
            d = np.exp(1j * ang)
            q = rel / d
            if not np.any((np.abs(q.imag) < 1e-9 * np.abs(q)) & (q.real > 0)):
                return d
            ang += 0.1711
        raise VelError("could not find a vertex-free ray")

    ray = ray_for_both()
    best = 0.0
    R = abs(z_v)

    def seg_dist(z):
        # distance from z to the segment [0, z_v]
        t = min(max((z * np.conj(z_v)).real / (R * R), 0.0), 1.0)
        return abs(z - t * z_v)

    for k in range(annuli):
        # tube supports around the segment v0 -> v: a loop encircling exactly
        # one endpoint crosses the segment, so it always meets the support
        # and the shortest-loop infimum is a genuine lower bound
        width = R * (k + 1.5) / (annuli + 1)
        metric = np.zeros(tri.n_vertices)
        for u in range(tri.n_vertices):
            if not placed[u] or u == v or u == v0:
                continue
            if seg_dist(centers[u]) <= width + radii[u]:
                metric[u] = radii[u]
        if metric.sum() == 0:
            continue
        # a separating loop crosses the segment inside the tube, so it always
        # passes through a support vertex: those suffice as search starts
        starts = [u for u in range(tri.n_vertices) if metric[u] > 0]
        length = _shortest_separating_cycle(sub, metric, centers, 0j, z_v, ray,
                                            starts=starts)
        if math.isfinite(length) and length > 0:
            area = float(np.sum(metric**2))
            best = max(best, length**2 / area)
    if best == 0.0:
        raise VelError("ball too small: no separating loop found")
    return best, paper_bound, best <= paper_bound * (1 + 1e-9)


# ---------------------------------------------------------------------------
# disk scan
# ---------------------------------------------------------------------------


def macroscopic_disk_scan(packing, radii):
    """Max circle diameter meeting B(0;r) over r, as a fraction of r."""
    scalar = np.isscalar(radii)
    rs = [radii] if scalar else list(radii)
    placed = packing.placed_mask()
    c = packing.centers[placed]
    rad = packing.radii[placed]
    tri = packing.tri
    # covered radius: nearest placed vertex that is on the boundary or
    # touches an unplaced circle — beyond it coverage is not certified
    bnd = set(int(b) for b in tri.boundary)
    edge_of_domain = set(bnd)
    for (a, b) in tri.edges:
        if placed[a] != placed[b]:
            edge_of_domain.add(a if placed[a] else b)
    frontier = min((abs(packing.centers[u]) for u in edge_of_domain
                    if placed[u]), default=math.inf)
    dists = np.abs(c)
    out = []
    maxdiam = 2 * rad.max()
    for r in rs:
        if r > frontier and r > maxdiam:
            raise WalkError(f"packing does not cover radius {r}")
        meet = dists - rad <= r
        out.append(float(2 * rad[meet].max() / r))
    return out[0] if scalar else out
