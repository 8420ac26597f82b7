"""Experiment orchestration: configs, the packing / uniformization
comparison pipelines, covariance gauges, and the self-verification suite.

Comparisons are finite surrogates of limit statements: each metric is
evaluated on an increasing radius (or window-exponent) grid and the verdict
is a monotone-trend plus ratio test, voted over seeds by the callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point

from .cell_config import CarrierError
from .corrector import CorrectorError, GaugeFit, fit_linear_gauge
from .surface import build_M_S


class CompareError(ValueError):
    pass


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

_INT = int
_FLOAT = float
_STR = str


def _int_list(s):
    return [int(t) for t in str(s).split()]


def _float_list(s):
    return [float(t) for t in str(s).split()]


_CONFIG_KEYS = {
    "generator": _STR,
    "pipeline": _STR,
    "window": _FLOAT,
    "intensity": _FLOAT,
    "p": _FLOAT,
    "seeds": _int_list,
    "radii": _float_list,
    "k_grid": _int_list,
    "calibration_inner": _FLOAT,
    "calibration_outer": _FLOAT,
    "mesh_level": _INT,
    "mass_cap": _FLOAT,
    "n_walks": _INT,
    "n_steps": _INT,
    "exit_radius": _FLOAT,
    "ratio_threshold": _FLOAT,
    "out": _STR,
    "scope": _STR,
    "budget": _STR,
}

_PIPELINES = ("pack", "uniformize", "walk", "verify")


@dataclass
class ExperimentConfig:
    """Flat key-value experiment description; unknown keys are rejected."""

    generator: str = "poisson-voronoi"
    pipeline: str = "pack"
    window: float = 64.0
    intensity: float = 1.0
    p: float = 0.2
    seeds: list = field(default_factory=lambda: [1])
    radii: list = field(default_factory=lambda: [8.0, 16.0, 32.0, 64.0])
    k_grid: list = field(default_factory=lambda: [3, 4, 5, 6])
    calibration_inner: float = 1.0
    calibration_outer: float = 6.0
    mesh_level: int = 2
    mass_cap: float = 8.0
    n_walks: int = 1000
    n_steps: int = 10_000
    exit_radius: float = float("nan")
    ratio_threshold: float = 0.5
    out: str = "out"
    scope: str = "all"
    budget: str = "full"

    def __post_init__(self):
        if self.pipeline not in _PIPELINES:
            raise CompareError(f"unknown pipeline {self.pipeline!r}")
        if not self.seeds:
            raise CompareError("at least one seed is required")
        if list(self.radii) != sorted(self.radii) or \
                len(set(self.radii)) != len(self.radii):
            raise CompareError("radii grid must be strictly increasing")
        if list(self.k_grid) != sorted(set(self.k_grid)):
            raise CompareError("k grid must be strictly increasing")

    @staticmethod
    def from_text(text) -> "ExperimentConfig":
        values = {}
        section = None
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in _PIPELINES:
                    raise CompareError(
                        f"line {ln}: unknown section [{section}]")
                continue
            if "=" not in line:
                raise CompareError(f"line {ln}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_KEYS:
                raise CompareError(f"line {ln}: unknown key {key!r}")
            # sectioned keys only apply to their pipeline
            if section is None or section == values.get("pipeline", section):
                values[key] = _CONFIG_KEYS[key](val)
        return ExperimentConfig(**values)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        with open(path) as fh:
            return ExperimentConfig.from_text(fh.read())

    def generator_spec(self, seed):
        from .generators import GeneratorSpec

        kw = {"window": self.window, "seed": seed}
        if self.generator == "poisson-voronoi":
            kw["intensity"] = self.intensity
        elif self.generator == "hex-percolation":
            kw["p"] = self.p
        return GeneratorSpec(self.generator, **kw)

    def to_text(self):
        lines = []
        for key in _CONFIG_KEYS:
            val = getattr(self, key)
            if isinstance(val, list):
                val = " ".join(str(t) for t in val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# comparison reports
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    """Metric values over a grid with trend verdicts and full provenance.

    Every row carries a backlink naming the seed, module, and operation that
    produced the number.  Timestamps live only in the ``timestamp`` field so
    the rendered report is byte-deterministic for a fixed config.
    """

    kind: str
    rows: list
    gauge: GaugeFit = None
    verdicts: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    timestamp: str = None

    @property
    def passed(self):
        return all(self.verdicts.values())

    def to_csv(self):
        out = ["seed,metric,x,value,backlink"]
        for r in self.rows:
            out.append(f"{r['seed']},{r['metric']},{r['x']:.9g},"
                       f"{r['value']:.12g},{r['backlink']}")
        return "\n".join(out) + "\n"

    def to_text(self):
        lines = [f"report {self.kind}"]
        if self.gauge is not None:
            g = self.gauge
            lines.append(
                f"gauge scale {g.scale:.12g} theta {g.theta:.12g} "
                f"A {g.A[0, 0]:.12g} {g.A[0, 1]:.12g} "
                f"{g.A[1, 0]:.12g} {g.A[1, 1]:.12g} residual {g.residual:.6g}")
        for key in sorted(self.verdicts):
            lines.append(f"verdict {key} {'pass' if self.verdicts[key] else 'FAIL'}")
        for key in sorted(self.provenance):
            val = self.provenance[key]
            if np.isscalar(val):
                lines.append(f"provenance {key} {val}")
        lines.append(self.to_csv().rstrip("\n"))
        return "\n".join(lines) + "\n"


def _trend_verdicts(values, ratio_threshold, prefix):
    ok_dec = all(b < a for a, b in zip(values, values[1:]))
    ok_ratio = values[-1] < ratio_threshold * values[0]
    return {f"{prefix}-decreasing": ok_dec, f"{prefix}-ratio": ok_ratio}


# ---------------------------------------------------------------------------
# packing comparison
# ---------------------------------------------------------------------------


def packing_gauge(config, packing, r_inner, r_outer) -> GaugeFit:
    """Gauge fitted on the cells of an inner calibration annulus: sources are
    cell centroids, targets circle centers."""
    placed = packing.placed_mask()
    pairs = []
    for v, cell in enumerate(config.cells):
        if cell is None or not placed[v]:
            continue
        c = cell.centroid
        if r_inner <= abs(c) <= r_outer:
            pairs.append((c, packing.centers[v]))
    if len(pairs) < 3:
        raise CompareError("calibration annulus holds fewer than 3 cells")
    return fit_linear_gauge(pairs)


def compare_packing(config, packing, gauge, radii, ratio_threshold=0.5,
                    calibration=None, seed=None) -> ComparisonReport:
    """Scaled worst-case distance between gauge-transformed cell centroids
    and their circle centers over a grid of disks."""
    radii = [float(r) for r in radii]
    if radii != sorted(radii):
        raise CompareError("radius grid must be increasing")
    if calibration is not None and calibration[1] > min(radii):
        raise CompareError(
            "calibration annulus overlaps the evaluation radii")
    placed = packing.placed_mask()
    rows = []
    values = []
    for r in radii:
        try:
            ids = config.cells_meeting(Point(0.0, 0.0).buffer(r, quad_segs=64))
        except CarrierError as exc:
            raise CompareError(f"carrier does not cover B(0;{r})") from exc
        worst = 0.0
        for v in ids:
            if not placed[v]:
                raise CompareError(
                    f"packing does not place vertex {v} inside B(0;{r})")
            c = config.cells[v].centroid
            worst = max(worst, abs(gauge.apply(c) - packing.centers[v]))
        values.append(worst / r)
        rows.append({"seed": seed, "metric": "packing", "x": r,
                     "value": worst / r,
                     "backlink": f"seed={seed};compare.compare_packing;r={r:g}"})
    verdicts = _trend_verdicts(values, ratio_threshold, "packing")
    prov = {"calibration": calibration, "n_radii": len(radii), "seed": seed}
    return ComparisonReport("packing", rows, gauge=gauge, verdicts=verdicts,
                            provenance=prov)


# ---------------------------------------------------------------------------
# uniformization comparison
# ---------------------------------------------------------------------------


def uniformization_gauge(config, dmap, radius, inner=0.0) -> GaugeFit:
    """Gauge fitted on tracked vertices whose cells sit in the calibration
    annulus (disk when inner is zero) around the origin."""
    portion = dmap.subdivision.portion
    pairs = []
    for v in portion.vertices:
        cell = config.cells[int(v)]
        if cell is None:
            continue
        c = cell.centroid
        if inner <= abs(c) <= radius:
            pairs.append((c, dmap.vertex_image(int(v))))
    if len(pairs) < 3:
        raise CompareError("calibration disk holds fewer than 3 vertices")
    return fit_linear_gauge(pairs)


def _portion_edges(portion):
    surf = portion.surface
    seen = set()
    for fi in portion.face_ids:
        fv = surf.faces[int(fi)]
        for i in range(len(fv)):
            u, v = fv[i], fv[(i + 1) % len(fv)]
            seen.add((min(u, v), max(u, v)))
    return sorted(seen)


def _edge_image_diameter(dmap, u, v, samples=None, local_of=None):
    surf = dmap.subdivision.portion.surface
    if local_of is None:
        face_ids = dmap.subdivision.portion.face_ids
        local_of = {int(g): i for i, g in enumerate(face_ids)}
    fi = None
    for (a, b) in ((u, v), (v, u)):
        hit = surf._left.get((a, b))
        if hit is not None and hit[0] in local_of:
            fi, (a0, b0) = hit[0], (a, b)
            break
    if fi is None:
        raise CompareError(f"edge ({u},{v}) not inside the mapped portion")
    za = surf.corner_coord(fi, a0)
    zb = surf.corner_coord(fi, b0)
    n = samples if samples is not None else dmap.subdivision.n
    ts = np.linspace(0.0, 1.0, n + 1)
    pts = np.array([dmap.eval(local_of[fi], za + t * (zb - za)) for t in ts])
    return float(max(abs(p - q) for i, p in enumerate(pts)
                     for q in pts[i + 1:]))


def compare_uniformization(config, dmap, gauge, k_grid, ratio_threshold=0.5,
                           calibration_radius=None, calibration_inner=0.0,
                           seed=None) -> ComparisonReport:
    """Scaled sup distance between gauge-transformed centroids and vertex
    images, and scaled sup edge-image diameter, over window exponents k."""
    k_grid = [int(k) for k in k_grid]
    if k_grid != sorted(set(k_grid)):
        raise CompareError("k grid must be strictly increasing")
    if calibration_radius is not None and any(
            calibration_inner < 2.0 ** k < calibration_radius
            for k in k_grid):
        raise CompareError(
            "calibration annulus overlaps the evaluation radii")
    surface = dmap.subdivision.portion.surface
    local_of = {int(g): i
                for i, g in enumerate(dmap.subdivision.portion.face_ids)}
    rows = []
    vvals, evals_ = [], []
    for k in k_grid:
        r = 2.0 ** k
        # the square sub-surface certifies that everything within the ball
        # of radius 2^k is actually covered by the map
        sub = build_M_S(config, surface, (0.0, 0.0, 2.0 * r))
        if sub.empty:
            raise CompareError(
                f"no disk-like sub-surface for k={k}: {sub.diagnostic}")
        covered = set(int(v) for v in dmap.subdivision.portion.vertices)
        missing = [int(v) for v in sub.vertices if int(v) not in covered]
        if missing:
            raise CompareError(
                f"map does not cover the k={k} sub-surface "
                f"(first missing vertex {missing[0]})")
        try:
            ids = set(config.cells_meeting(Point(0.0, 0.0)
                                           .buffer(r, quad_segs=64)))
        except CarrierError as exc:
            raise CompareError(f"carrier does not cover B(0;{r:g})") from exc
        worst_v = 0.0
        for v in sorted(ids):
            cell = config.cells[int(v)]
            if cell is None:
                raise CompareError(f"vertex {v} has no certified cell")
            try:
                img = dmap.vertex_image(int(v))
            except Exception as exc:
                raise CompareError(
                    f"map does not cover vertex {v} for k={k}") from exc
            worst_v = max(worst_v, abs(gauge.apply(cell.centroid) - img))
        worst_e = 0.0
        for (u, v) in _portion_edges(sub):
            if u not in ids and v not in ids:
                continue
            worst_e = max(worst_e,
                          _edge_image_diameter(dmap, u, v,
                                               local_of=local_of))
        vvals.append(worst_v / 2.0 ** k)
        evals_.append(worst_e / 2.0 ** k)
        base = f"seed={seed};compare.compare_uniformization;k={k}"
        rows.append({"seed": seed, "metric": "vertex", "x": k,
                     "value": vvals[-1], "backlink": base})
        rows.append({"seed": seed, "metric": "edge", "x": k,
                     "value": evals_[-1], "backlink": base})
    verdicts = {}
    verdicts.update(_trend_verdicts(vvals, ratio_threshold, "vertex"))
    verdicts.update(_trend_verdicts(evals_, ratio_threshold, "edge"))
    prov = {"calibration_radius": calibration_radius, "seed": seed}
    return ComparisonReport("uniformization", rows, gauge=gauge,
                            verdicts=verdicts, provenance=prov)


# ---------------------------------------------------------------------------
# covariance gauge
# ---------------------------------------------------------------------------


def covariance_gauge(report) -> GaugeFit:
    """Det-1 normalization of the inverse square root of the per-step walk
    covariance; the natural candidate for the packing gauge's linear part."""
    sigma = np.asarray(report.covariance, dtype=float)
    sigma = (sigma + sigma.T) / 2
    w, V = np.linalg.eigh(sigma)
    if np.any(w <= 0):
        raise CompareError("covariance estimate is not positive definite")
    inv_sqrt = V @ np.diag(w ** -0.5) @ V.T
    A = inv_sqrt * float(np.prod(w)) ** 0.25
    return GaugeFit(A, 0.0, 1.0)


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------


def _dubejko_swapped(r_u, r_v, opposite_radii):
    # deliberately wrong pairing of the two factors, used by the mutation test
    total = 0.0
    for r_w in opposite_radii:
        total += math.sqrt(r_u * r_v / ((r_u + r_w) * (r_v + r_w)))
    return (math.sqrt(r_u * r_v) / (r_u + max(opposite_radii))) * total


def _check(checks, name, fn, budget_ok=True):
    if not budget_ok:
        checks.append({"name": name, "status": "underpowered",
                       "detail": "skipped under reduced budget"})
        return
    try:
        detail = fn()
        checks.append({"name": name, "status": "pass",
                       "detail": detail or ""})
    except AssertionError as exc:
        checks.append({"name": name, "status": "fail", "detail": str(exc)})
    except Exception as exc:  # propagate context, still red
        checks.append({"name": name, "status": "fail",
                       "detail": f"{type(exc).__name__}: {exc}"})


def run_verify_suite(scope="all", mutate=(), budget="full", seed=0):
    """Invariant scans across the modules; returns a machine-readable summary.

    ``mutate`` names deliberate bug injections (currently "dubejko-swap")
    whose purpose is to prove the suite can go red.  ``budget="reduced"``
    downgrades the statistical checks to "underpowered" instead of running
    them at full size.
    """
    from scipy.spatial import Delaunay

    from . import circle_pack as cp
    from . import walks as wk
    from .cell_config import hat_square, sample_dyadic_system, moment_statistic
    from .corrector import decompose_linear, _rotation
    from .generators import (GeneratorSpec, poisson_voronoi,
                             config_triangulation,
                             triangular_patch_triangulation)

    scopes = ("pack", "walk", "config", "surface", "gauge")
    if scope != "all" and scope not in scopes:
        raise CompareError(f"unknown verify scope {scope!r}")
    active = scopes if scope == "all" else (scope,)
    full = budget != "reduced"
    checks = []

    cfg = surf_tri = packing = None
    if {"pack", "walk", "config", "surface"} & set(active):
        cfg = poisson_voronoi(GeneratorSpec("poisson-voronoi", window=20,
                                            seed=seed))
        surf_tri = config_triangulation(cfg)
        packing = cp.pack(surf_tri, cp.FIXED,
                          boundary_radii=cp.natural_boundary_radii(
                              surf_tri, cfg.positions))

    if "pack" in active:
        def fib_chain():
            def fib(n):
                a, b = 0, 1
                for _ in range(n):
                    a, b = b, a + b
                return a
            radii = {0: 1.0, 1: math.inf, 2: math.inf}
            radii[3] = cp.descartes_fourth(1.0, math.inf, math.inf).radius
            for d in range(4, 11):
                radii[d] = cp.descartes_fourth(
                    radii[0], radii[d - 2], radii[d - 1]).radius
            for d in range(3, 11):
                expect = 1.0 / (fib(2 * d - 3) - 1)
                assert abs(radii[d] - expect) <= 1e-12 * expect, f"d={d}"
            return "d=3..10 within 1e-12"
        _check(checks, "pack/descartes-fibonacci", fib_chain)

        def residuals():
            res = np.max(np.abs(cp.euclid_angle_sums(packing.radii,
                                                     surf_tri)[surf_tri.interior]
                                - 2 * math.pi))
            assert res < 1e-10, f"angle residual {res:.3g}"
            tan = packing.tangency_residuals()
            assert np.max(tan) < 1e-8, f"tangency residual {np.max(tan):.3g}"
            return f"angle {res:.2g}"
        _check(checks, "pack/solver-residuals", residuals)

        def flowers():
            reps = cp.scan_flowers(packing)
            bad = [r.vertex for r in reps if not r.passes]
            assert not bad, f"three-circle violations at {bad[:5]}"
            return f"{len(reps)} flowers"
        _check(checks, "pack/three-circle", flowers)

    if "walk" in active:
        def equal_radii():
            val = wk.dubejko_conductance(1.0, 1.0, [1.0, 1.0])
            assert abs(val - 1 / math.sqrt(3)) < 1e-12
            return "1/sqrt(3)"
        _check(checks, "walk/dubejko-equal-radii", equal_radii)

        def martingale():
            if "dubejko-swap" in mutate:
                tri, r = packing.tri, packing.radii
                nbrs = [[] for _ in range(tri.n_vertices)]
                conds = [[] for _ in range(tri.n_vertices)]
                for (u, v) in tri.edges:
                    opp = [w for w in tri.opposite_vertices(u, v)
                           if w is not None]
                    c = _dubejko_swapped(r[u], r[v], [r[w] for w in opp])
                    nbrs[u].append(v)
                    conds[u].append(c)
                    nbrs[v].append(u)
                    conds[v].append(c)
                interior = np.zeros(tri.n_vertices, dtype=bool)
                interior[tri.interior] = True
                g = wk.WeightedGraph(packing.centers, nbrs, conds,
                                     interior=interior)
            else:
                g = wk.dubejko_weights(packing)
            res = wk.martingale_residuals(g)
            worst = max(res.values())
            assert worst < 1e-6, f"martingale residual {worst:.3g}"
            return f"max residual {worst:.2g}"
        _check(checks, "walk/martingale-identity", martingale)

        def drift():
            g = wk.dubejko_weights(packing)
            v0 = int(np.argmin(np.abs(cfg.positions)))
            # stay inside the inner edge of every boundary circle
            b = packing.tri.boundary
            reach = (np.abs(packing.centers[b] - packing.centers[v0])
                     - packing.radii[b])
            safe = 0.85 * float(np.min(reach))
            rep = wk.walk_statistics(g, v0, n_walks=600, n_steps=400,
                                     seed=seed + 1, exit_radius=safe,
                                     n_checkpoints=400)
            assert rep.drift_sigmas < 4.0, f"drift {rep.drift_sigmas:.2f} sigma"
            assert rep.msd_r2 > 0.98, f"msd r2 {rep.msd_r2:.4f}"
            return f"drift {rep.drift_sigmas:.2f} sigma"
        _check(checks, "walk/drift-statistics", drift, budget_ok=full)

    if "config" in active:
        def hat_maximality():
            dy = sample_dyadic_system(seed + 3)
            from .cell_config import square_mass
            sq, mass = hat_square(cfg, dy, 0.3 + 0.2j, 4.0)
            assert mass <= 4.0
            par = dy.parent(sq)
            assert square_mass(cfg, par, exact=False) > 4.0
            return f"side {sq.side:.3g}"
        _check(checks, "config/hat-square-maximality", hat_maximality)

        def moments():
            val = moment_statistic(cfg, (-4, -4, 4, 4), 4)
            assert np.isfinite(val) and val > 0
            return f"moment {val:.3g}"
        _check(checks, "config/moment-statistic", moments)

    if "surface" in active:
        def surface_flat():
            from .surface import (_face_subset_portion, build_surface,
                                  gauss_bonnet_defect, uniformize_approx)
            tri, _ = triangular_patch_triangulation(3)
            surf = build_surface(tri)
            portion = _face_subset_portion(surf, range(surf.n_faces))
            defect = gauss_bonnet_defect(portion)
            assert abs(defect) < 1e-9, f"defect {defect:.3g}"
            m = uniformize_approx(portion, 2)
            assert m.orientation_violations() == []
            return "flat patch uniformized"
        _check(checks, "surface/flat-patch", surface_flat)

    if "gauge" in active:
        def round_trip():
            L = 2.5 * _rotation(1.1) @ np.array([[1.5, 0.3], [0.1, 0.6866]])
            fit = decompose_linear(L)
            assert np.allclose(fit.matrix(), L, atol=1e-10)
            assert abs(np.linalg.det(fit.A) - 1) < 1e-12
            return "round trip 1e-10"
        _check(checks, "gauge/round-trip", round_trip)

        def cov_identity():
            from types import SimpleNamespace

            g = covariance_gauge(SimpleNamespace(covariance=np.eye(2)))
            assert np.allclose(g.A, np.eye(2), atol=1e-14)
            return "identity"
        _check(checks, "gauge/covariance-identity", cov_identity)

    failed = [c["name"] for c in checks if c["status"] == "fail"]
    return {"status": "fail" if failed else "pass",
            "failed": failed, "checks": checks,
            "scope": scope, "budget": budget, "mutate": list(mutate)}


def verify_summary_text(summary):
    lines = [f"verify scope={summary['scope']} budget={summary['budget']} "
             f"status={summary['status']}"]
    for c in summary["checks"]:
        lines.append(f"{c['status']:>12}  {c['name']}  {c['detail']}")
    return "\n".join(lines) + "\n"
