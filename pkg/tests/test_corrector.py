import math

import numpy as np
import pytest
from shapely.geometry import Point, Polygon, box

from cellpack.cell_config import sample_dyadic_system
from cellpack.generators import (
    GeneratorSpec,
    config_triangulation,
    lattice_config,
    poisson_voronoi,
    triangular_patch_triangulation,
)
from cellpack.corrector import (
    CorrectorError,
    GaugeFit,
    PLMap,
    _rotation,
    _uniform_point,
    decompose_linear,
    dirichlet_energy,
    dirichlet_inner,
    face_energy,
    face_energy_quadrature,
    fit_linear_gauge,
    harmonic_extend,
    phi0_on_subdivision,
    sample_phi0,
    se_statistic,
    sublinearity_metric,
)
from cellpack.surface import (
    _face_subset_portion,
    build_M_S,
    build_surface,
    subdivide,
)

SQRT3 = math.sqrt(3.0)


def lattice_surface(radius=6):
    tri, coords = triangular_patch_triangulation(radius)
    surf = build_surface(tri)
    portion = _face_subset_portion(surf, range(surf.n_faces))
    return surf, portion, coords


def voronoi_setup(window=24, seed=5, side=10.0):
    cfg = poisson_voronoi(GeneratorSpec("poisson-voronoi", window=window,
                                        seed=seed))
    surf = build_surface(config_triangulation(cfg))
    portion = build_M_S(cfg, surf, (0.0, 0.0, side))
    assert not portion.empty
    return cfg, surf, portion


# -- per-face energy --------------------------------------------------------


def test_face_energy_congruent_and_collapsed():
    unit = (0.0, 1.0, complex(0.5, SQRT3 / 2))
    assert face_energy(unit) == pytest.approx(SQRT3 / 2, abs=1e-14)
    assert face_energy((1 + 1j, 1 + 1j, 1 + 1j)) == pytest.approx(0.0)


def test_face_energy_random_triangles():
    rng = np.random.default_rng(0)
    tris = rng.normal(size=(1000, 3)) + 1j * rng.normal(size=(1000, 3))
    e = face_energy(tris)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    l2 = (np.abs(b - a) ** 2 + np.abs(c - b) ** 2 + np.abs(a - c) ** 2)
    # independent closed form: sum of squared image sides over 2 sqrt 3
    assert np.allclose(e, l2 / (2 * SQRT3), rtol=1e-12)
    assert np.all(e <= 3 * l2 + 1e-12)


def test_face_energy_matches_quadrature():
    rng = np.random.default_rng(3)
    for _ in range(50):
        corners = tuple(rng.normal(size=2) @ [1, 1j] for _ in range(3))
        q = face_energy_quadrature(corners)
        assert q == pytest.approx(float(face_energy(corners)), abs=1e-10)


# -- a-priori embedding -----------------------------------------------------


def test_sample_phi0_deterministic_and_in_cell():
    cfg, surf, _ = voronoi_setup()
    a = sample_phi0(cfg, surf, 11)
    b = sample_phi0(cfg, surf, 11)
    assert np.array_equal(a.values, b.values)
    c = sample_phi0(cfg, surf, 12)
    assert not np.array_equal(a.values, c.values)
    for v, cell in enumerate(cfg.cells):
        if cell is not None:
            assert cell.polygon.covers(Point(a.values[v].real,
                                             a.values[v].imag))


def test_uniform_point_mean_near_centroid():
    # nonconvex polygon so rejection actually rejects
    poly = Polygon([(0, 0), (3, 0), (3, 1), (1, 1), (1, 3), (0, 3)])
    pts = np.array([
        _uniform_point(poly, np.random.Generator(np.random.Philox(key=[s, 7])))
        for s in range(10_000)
    ])
    se = pts.std() / math.sqrt(len(pts))
    cen = complex(poly.centroid.x, poly.centroid.y)
    assert abs(pts.mean() - cen) < 3 * se


def test_plmap_shape_check_and_degenerate_flag():
    surf, portion, coords = lattice_surface(2)
    with pytest.raises(CorrectorError):
        PLMap(surf, coords[:-1])
    squashed = PLMap(surf, np.zeros_like(coords))
    assert len(squashed.degenerate_faces()) == surf.n_faces
    assert PLMap(surf, coords).degenerate_faces() == []


def test_phi0_on_subdivision_interpolates_identity():
    surf, portion, coords = lattice_surface(3)
    phi = PLMap(surf, coords)
    sub = subdivide(portion, 3)
    fine = phi0_on_subdivision(phi, sub)
    # the lattice surface is flat, so PL interpolation of the coordinates is
    # the identity; energy density is exactly 2 per unit intrinsic area
    for v, idx in sub.original_vertex.items():
        assert fine.values[idx] == pytest.approx(coords[v], abs=1e-12)
    assert dirichlet_energy(fine) == pytest.approx(2 * portion.area(), rel=1e-12)


# -- harmonic extension -----------------------------------------------------


def test_harmonic_extend_affine_fixed_point():
    surf, portion, coords = lattice_surface(6)
    A = np.array([[1.1, 0.2], [-0.1, 0.9]])
    xy = np.column_stack([coords.real, coords.imag]) @ A.T
    phi = PLMap(surf, xy[:, 0] + 1j * xy[:, 1])
    cfg = lattice_config("triangular", 40)
    dy = sample_dyadic_system(2)
    ext = harmonic_extend(cfg, phi, dy, 6.0, n=4, portion=portion)
    base = phi0_on_subdivision(phi, ext.subdivision)
    assert ext.provenance["n_regions"] >= 1
    assert np.max(np.abs(ext.values - base.values)) < 1e-8


def test_harmonic_extend_lowers_energy():
    cfg, surf, portion = voronoi_setup()
    phi = sample_phi0(cfg, surf, 1)
    dy = sample_dyadic_system(4)
    ext = harmonic_extend(cfg, phi, dy, 8.0, n=4, portion=portion)
    base = phi0_on_subdivision(phi, ext.subdivision)
    assert dirichlet_energy(ext) <= dirichlet_energy(base) + 1e-9
    assert ext.provenance["n_regions"] >= 1
    for region in ext.provenance["regions"]:
        assert region["energy_after"] <= region["energy_before"] + 1e-9


def test_harmonic_extend_maximum_principle():
    cfg, surf, portion = voronoi_setup()
    phi = sample_phi0(cfg, surf, 2)
    dy = sample_dyadic_system(9)
    ext = harmonic_extend(cfg, phi, dy, 8.0, n=4, portion=portion)
    for region in ext.provenance["regions"]:
        ring = ext.values[region["ring"]]
        sol = ext.values[region["unknowns"]]
        assert sol.real.min() >= ring.real.min() - 1e-9
        assert sol.real.max() <= ring.real.max() + 1e-9
        assert sol.imag.min() >= ring.imag.min() - 1e-9
        assert sol.imag.max() <= ring.imag.max() + 1e-9


def test_harmonic_increments_orthogonal():
    cfg, surf, portion = voronoi_setup()
    phi = sample_phi0(cfg, surf, 3)
    dy = sample_dyadic_system(6)
    maps = {m: harmonic_extend(cfg, phi, dy, m, n=4, portion=portion)
            for m in (4.0, 8.0, 16.0)}
    delta = PLMap(surf, maps[8.0].values - maps[4.0].values,
                  subdivision=maps[8.0].subdivision)
    inner = dirichlet_inner(maps[16.0], delta)
    assert abs(inner) < 1e-8 * max(1.0, dirichlet_energy(maps[16.0]))


def test_harmonic_extend_requires_portion():
    cfg, surf, portion = voronoi_setup()
    phi = sample_phi0(cfg, surf, 1)
    with pytest.raises(CorrectorError):
        harmonic_extend(cfg, phi, sample_dyadic_system(1), 8.0)


# -- SE statistic -----------------------------------------------------------


def test_se_statistic_invariances_and_scaling():
    surf, portion, coords = lattice_surface(5)
    phi = PLMap(surf, coords)
    sub = subdivide(portion, 2)
    ident = phi0_on_subdivision(phi, sub)
    window = box(-1.5, -1.5, 1.5, 1.5)
    clip = box(-2, -2, 2, 2)
    assert se_statistic(ident, ident, window, clip) == 0.0
    shifted = PLMap(surf, ident.values + (0.3 - 0.7j), subdivision=sub)
    assert se_statistic(ident, shifted, window, clip) == pytest.approx(0.0)
    lam = 1.25
    scaled = PLMap(surf, lam * ident.values, subdivision=sub)
    # identity map has energy density 2, so SE = 2 (lam-1)^2 up to the
    # centroid-rule boundary error of the integration domain
    se = se_statistic(ident, scaled, window, clip)
    assert se == pytest.approx(2 * (lam - 1) ** 2, rel=0.1)


def test_se_statistic_errors():
    surf, portion, coords = lattice_surface(3)
    phi = PLMap(surf, coords)
    sub = subdivide(portion, 2)
    ident = phi0_on_subdivision(phi, sub)
    with pytest.raises(CorrectorError):
        se_statistic(phi, phi, box(0, 0, 1, 1), box(0, 0, 1, 1))
    with pytest.raises(CorrectorError):
        se_statistic(ident, ident, box(0, 0, 1, 1), box(5, 5, 6, 6))


# -- sublinearity metric ----------------------------------------------------


def test_sublinearity_trivial_cases():
    surf, portion, coords = lattice_surface(4)
    phi = PLMap(surf, coords)
    assert sublinearity_metric(phi, phi, 2, portion) == 0.0
    v = 0.6 - 0.2j
    moved = PLMap(surf, coords + v)
    assert sublinearity_metric(phi, moved, 2, portion) == pytest.approx(abs(v) / 4)
    ident = GaugeFit(np.eye(2), 0.0, 1.0)
    assert sublinearity_metric(phi, phi, 3, portion, gauge=ident) == 0.0


# -- linear gauge -----------------------------------------------------------


def test_gauge_pure_rotation():
    rng = np.random.default_rng(1)
    src = rng.normal(size=(12, 2))
    alpha = 0.7
    fit = fit_linear_gauge(zip(src, src @ _rotation(alpha).T))
    assert np.allclose(fit.A, np.eye(2), atol=1e-10)
    assert fit.theta == pytest.approx(alpha, abs=1e-10)
    assert fit.scale == pytest.approx(1.0, abs=1e-10)
    assert fit.residual < 1e-10


def test_gauge_diagonal_stretch():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(9, 2))
    D = np.diag([2.0, 0.5])
    fit = fit_linear_gauge(zip(src, src @ D.T))
    assert np.allclose(fit.A, D, atol=1e-10)
    assert fit.theta == pytest.approx(0.0, abs=1e-10)
    assert fit.scale == pytest.approx(1.0, abs=1e-10)


def test_gauge_composite_round_trip():
    rng = np.random.default_rng(3)
    src = rng.normal(size=(20, 2))
    L = 3.0 * _rotation(0.9) @ np.diag([2.0, 0.5])
    noisy = src @ L.T
    fit = fit_linear_gauge(zip(src, noisy))
    assert np.allclose(fit.matrix(), L, atol=1e-10)
    assert fit.scale == pytest.approx(3.0, abs=1e-9)
    assert abs(np.linalg.det(fit.A) - 1.0) < 1e-12
    # complex apply agrees with the matrix action
    z = 1.3 - 0.4j
    w = fit.apply(z)
    assert [w.real, w.imag] == pytest.approx(list(L @ [z.real, z.imag]))


def test_gauge_theta_canonical_halfturn():
    alpha = 3.5  # beyond pi: absorbed by the sign of A
    fit = decompose_linear(_rotation(alpha))
    assert 0.0 <= fit.theta < math.pi
    assert fit.theta == pytest.approx(alpha - math.pi, abs=1e-12)
    assert np.allclose(fit.matrix(), _rotation(alpha), atol=1e-12)


def test_gauge_errors():
    with pytest.raises(CorrectorError):
        fit_linear_gauge([((1, 0), (1, 0)), ((0, 1), (0, 1))])
    line = [((t, 2 * t), (t, -t)) for t in (1.0, 2.0, 3.0)]
    with pytest.raises(CorrectorError):
        fit_linear_gauge(line)
    with pytest.raises(CorrectorError):
        decompose_linear([[1, 0], [0, -1]])
    with pytest.raises(CorrectorError):
        GaugeFit(np.diag([2.0, 2.0]), 0.0, 1.0)
    with pytest.raises(CorrectorError):
        GaugeFit(np.eye(2), 0.0, -1.0)
