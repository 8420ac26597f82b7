import math

import numpy as np
import pytest

from cellpack.circle_pack import FIXED, pack
from cellpack.compare import (
    CompareError,
    ComparisonReport,
    ExperimentConfig,
    compare_packing,
    compare_uniformization,
    covariance_gauge,
    packing_gauge,
    run_verify_suite,
    uniformization_gauge,
    verify_summary_text,
)
from cellpack.corrector import GaugeFit
from cellpack.generators import config_triangulation, lattice_config
from cellpack.surface import (
    DiscreteConformalMap,
    build_M_S,
    build_surface,
    subdivide,
)


def lattice_instance(radius=12):
    # hexagon-shaped patch: every interior vertex has degree 6, so the
    # packing with unit boundary radii is the lattice itself
    from cellpack.cell_config import Cell, CellConfiguration
    from cellpack.generators import (
        _hexagon,
        triangular_lattice_patch,
        triangular_patch_triangulation,
    )

    hmap, coords = triangular_lattice_patch(radius)
    cells = [Cell(v, _hexagon(coords[v])) for v in range(len(coords))]
    half = radius * math.sqrt(3) / 2 - 1.0
    cfg = CellConfiguration(cells, hmap, (-half, -half, half, half),
                            positions=coords)
    tri, _ = triangular_patch_triangulation(radius)
    root = int(np.argmin(np.abs(coords)))
    packing = pack(tri, FIXED, boundary_radii=1.0, root=root)
    return cfg, packing


# -- experiment config ------------------------------------------------------


def test_config_parse_round_trip():
    exp = ExperimentConfig.from_text(
        "pipeline = pack\nwindow = 32\nseeds = 1 2 3\nradii = 4 8 16\n")
    assert exp.pipeline == "pack"
    assert exp.seeds == [1, 2, 3]
    assert exp.radii == [4.0, 8.0, 16.0]
    again = ExperimentConfig.from_text(exp.to_text())
    assert again.to_text() == exp.to_text()


def test_config_rejects_unknown_keys_and_bad_grids():
    with pytest.raises(CompareError):
        ExperimentConfig.from_text("radi = 4 8\n")
    with pytest.raises(CompareError):
        ExperimentConfig.from_text("radii = 8 4\n")
    with pytest.raises(CompareError):
        ExperimentConfig.from_text("seeds =\n")
    with pytest.raises(CompareError):
        ExperimentConfig.from_text("[nosuch]\nwindow = 4\n")
    with pytest.raises(CompareError):
        ExperimentConfig.from_text("window 32\n")


def test_config_sections_select_pipeline():
    text = ("pipeline = walk\n"
            "[walk]\nn_walks = 7\n"
            "[pack]\nradii = 1 2\n")
    exp = ExperimentConfig.from_text(text)
    assert exp.n_walks == 7
    # the [pack] section is ignored for the walk pipeline
    assert exp.radii == [8.0, 16.0, 32.0, 64.0]


# -- packing comparison -----------------------------------------------------


def test_compare_packing_lattice_self():
    cfg, packing = lattice_instance()
    gauge = packing_gauge(cfg, packing, 1.0, 3.0)
    rep = compare_packing(cfg, packing, gauge, [4.0, 8.0],
                          calibration=(1.0, 3.0), seed=0)
    # a lattice is its own packing up to similarity: the metric vanishes
    for row in rep.rows:
        assert row["value"] < 1e-6
        assert "compare_packing" in row["backlink"]
    assert rep.gauge is gauge


def test_compare_packing_misrotated_gauge_worse():
    cfg, packing = lattice_instance()
    fitted = packing_gauge(cfg, packing, 1.0, 3.0)
    bad = GaugeFit(fitted.A, fitted.theta + math.radians(10), fitted.scale)
    rep_good = compare_packing(cfg, packing, fitted, [8.0], seed=0)
    rep_bad = compare_packing(cfg, packing, bad, [8.0], seed=0)
    assert rep_bad.rows[0]["value"] > 10 * rep_good.rows[0]["value"]
    # lower bound from rotating every centroid in the disk
    assert rep_bad.rows[0]["value"] > math.sin(math.radians(10)) * 0.5


def test_compare_packing_guard_rails():
    cfg, packing = lattice_instance()
    gauge = packing_gauge(cfg, packing, 1.0, 3.0)
    with pytest.raises(CompareError):
        compare_packing(cfg, packing, gauge, [4.0, 8.0],
                        calibration=(1.0, 6.0), seed=0)
    with pytest.raises(CompareError):
        compare_packing(cfg, packing, gauge, [1000.0], seed=0)
    with pytest.raises(CompareError):
        packing_gauge(cfg, packing, 0.0, 0.01)


def test_report_text_deterministic_and_csv():
    cfg, packing = lattice_instance()
    gauge = packing_gauge(cfg, packing, 1.0, 3.0)
    a = compare_packing(cfg, packing, gauge, [4.0, 8.0], seed=3)
    b = compare_packing(cfg, packing, gauge, [4.0, 8.0], seed=3)
    assert a.to_text() == b.to_text()
    assert a.to_csv().splitlines()[0] == "seed,metric,x,value,backlink"
    a.timestamp = "2020-01-01T00:00:00"
    assert a.to_text() == b.to_text()  # timestamps stay out of the report


# -- uniformization comparison ----------------------------------------------


def flat_affine_map(window=24, side=10.0):
    cfg = lattice_config("triangular", window)
    surf = build_surface(config_triangulation(cfg))
    portion = build_M_S(cfg, surf, (0.0, 0.0, side))
    assert not portion.empty
    sub = subdivide(portion, 1)
    images = np.zeros(sub.tri.n_vertices, dtype=complex)
    for v, idx in sub.original_vertex.items():
        images[idx] = cfg.positions[v]
    dmap = DiscreteConformalMap(sub, images, radii=None,
                                scale=float(np.max(np.abs(images))),
                                root_sub=0)
    return cfg, dmap


def test_compare_uniformization_flat_affine():
    cfg, dmap = flat_affine_map()
    ident = GaugeFit(np.eye(2), 0.0, 1.0)
    rep = compare_uniformization(cfg, dmap, ident, [1, 2], seed=0)
    vertex = {r["x"]: r["value"] for r in rep.rows if r["metric"] == "vertex"}
    edge = {r["x"]: r["value"] for r in rep.rows if r["metric"] == "edge"}
    # hexagon centroids are the lattice sites, so the vertex metric vanishes
    assert vertex[1] < 1e-9 and vertex[2] < 1e-9
    # unit lattice edges map to themselves: diameter 1, scaled by 1/2^k
    assert edge[1] == pytest.approx(0.5, rel=1e-6)
    assert edge[2] == pytest.approx(0.25, rel=1e-6)
    assert rep.verdicts["edge-decreasing"]


def test_compare_uniformization_guards():
    cfg, dmap = flat_affine_map()
    ident = GaugeFit(np.eye(2), 0.0, 1.0)
    with pytest.raises(CompareError):
        compare_uniformization(cfg, dmap, ident, [2, 1], seed=0)
    with pytest.raises(CompareError):
        compare_uniformization(cfg, dmap, ident, [1, 2],
                               calibration_radius=4.0, seed=0)
    with pytest.raises(CompareError):
        uniformization_gauge(cfg, dmap, 0.01)


# -- covariance gauge -------------------------------------------------------


class _Rep:
    def __init__(self, cov):
        self.covariance = np.asarray(cov, dtype=float)


def test_covariance_gauge_cases():
    assert np.allclose(covariance_gauge(_Rep(np.eye(2))).A, np.eye(2))
    g = covariance_gauge(_Rep(np.diag([4.0, 1.0])))
    assert np.allclose(g.A, np.diag([1 / math.sqrt(2), math.sqrt(2)]))
    assert abs(np.linalg.det(g.A) - 1) < 1e-12
    with pytest.raises(CompareError):
        covariance_gauge(_Rep([[1.0, 2.0], [2.0, 1.0]]))


# -- verification suite -----------------------------------------------------


def test_verify_suite_green():
    summary = run_verify_suite(scope="all", seed=0)
    assert summary["status"] == "pass"
    names = {c["name"] for c in summary["checks"]}
    assert "walk/martingale-identity" in names
    assert "pack/descartes-fibonacci" in names
    text = verify_summary_text(summary)
    assert "status=pass" in text


def test_verify_suite_mutation_red():
    summary = run_verify_suite(scope="walk", mutate=("dubejko-swap",), seed=0)
    assert summary["status"] == "fail"
    assert "walk/martingale-identity" in summary["failed"]


def test_verify_suite_reduced_budget_underpowered():
    summary = run_verify_suite(scope="walk", budget="reduced", seed=0)
    statuses = {c["name"]: c["status"] for c in summary["checks"]}
    assert statuses["walk/drift-statistics"] == "underpowered"
    assert summary["status"] == "pass"


def test_verify_suite_unknown_scope():
    with pytest.raises(CompareError):
        run_verify_suite(scope="everything")
