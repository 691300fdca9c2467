"""Charts, fields, discrete operators, graph geodesics, domains, measures, snapshots."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riccilab import exact as E
from riccilab import geometry as G

ARSINH1 = 0.88137358701954303


# ------------------------------------------------------------------ charts & fields

def test_chart_validation():
    with pytest.raises(ValueError):
        G.planar_chart(0, 1, 0, 1, 4, 16)
    with pytest.raises(ValueError):
        G.planar_chart(1, 0, 0, 1, 16, 16)
    with pytest.raises(ValueError):
        G.ConformalChart("cylindrical", 0, 1, 0.0, 6.0, 16, 16)
    with pytest.raises(ValueError):
        G.ConformalChart("spherical", 0, 1, 0, 1, 16, 16)
    with pytest.raises(ValueError):
        G.planar_chart(0, 1, 0, 1, 16, 16).__class__(
            "planar", 0, 1, 0, 1, 16, 16, tip_stub=1.0
        )
    with pytest.raises(ValueError):
        G.cylindrical_chart(0, 1, 16, 16, tip_stub=None).__class__(
            "cylindrical", 0, 1, 0, 2 * math.pi, 16, 16, tip_node=(0, 0)
        )


def test_chart_spacing():
    c = G.cylindrical_chart(-4.0, 4.0, 81, 24)
    assert c.hy == pytest.approx(2 * math.pi / 24)
    assert c.ys[-1] < 2 * math.pi  # no duplicated seam node
    p = G.planar_chart(0.0, 1.0, 0.0, 2.0, 11, 21)
    assert p.hx == pytest.approx(0.1)
    assert p.hy == pytest.approx(0.1)
    assert p.xs[-1] == pytest.approx(1.0)
    assert p.ys[-1] == pytest.approx(2.0)


def test_field_validation():
    c = G.planar_chart(0, 1, 0, 1, 8, 8)
    with pytest.raises(ValueError):
        G.ScalarField(c, np.zeros((8, 9)))
    with pytest.raises(ValueError):
        G.ScalarField(c, np.full((8, 8), np.nan))


def test_zgrid_cylindrical_matches_exponential():
    c = G.cylindrical_chart(-1.0, 1.0, 9, 8)
    z = c.zgrid()
    assert z[0, 0] == pytest.approx(math.exp(-1.0))
    ell, th = c.grid()
    assert np.allclose(np.abs(z), np.exp(ell))


# ------------------------------------------------------------------ stencils

def test_laplacian_exact_on_quadratics():
    c = G.planar_chart(-1, 2, 0, 1, 16, 12)
    x, y = c.grid()
    f = G.ScalarField(c, 3.0 + 2 * x - y + x**2 + 4 * y**2 - 2 * x * y)
    lap = G.laplacian(f).values
    assert np.allclose(lap, 10.0, atol=1e-10)  # exact incl. one-sided edge rows


def test_laplacian_theta_wraps():
    c = G.cylindrical_chart(0.0, 1.0, 8, 64)
    ell, th = c.grid()
    f = G.ScalarField(c, np.cos(th))
    lap = G.laplacian(f).values
    assert np.allclose(lap[2:-2], -np.cos(th)[2:-2], atol=2e-3)


def test_curvature_convergence_second_order():
    m = E.CigarModel()
    errs = []
    for n in (61, 121):
        c = G.planar_chart(-1.5, 1.5, -1.5, 1.5, n, n)
        z = c.zgrid()
        f = G.ScalarField(c, E.cigar_u(m, 0.3, z))
        K = G.gauss_curvature(f).values
        Kx = E.cigar_curvature(m, 0.3, z)
        errs.append(np.abs(K - Kx)[2:-2, 2:-2].max())
    order = math.log2(errs[0] / errs[1])
    assert 1.8 <= order <= 2.2


def test_curvature_cigar_cylindrical():
    c = G.cylindrical_chart(-4.0, 4.0, 241, 48)
    ell, _ = c.grid()
    f = G.ScalarField(c, E.cigar_u_cyl(0.0, ell))
    K = G.gauss_curvature(f).values
    Kx = E.cigar_curvature_cyl(0.0, ell)
    assert np.abs(K - Kx)[2:-2].max() < 1e-3
    assert np.abs(K - Kx).max() < 1e-2  # one-sided edge rows are still close


def test_curvature_round_sphere_is_one():
    c = G.planar_chart(-1.5, 1.5, -1.5, 1.5, 241, 241)
    f = G.ScalarField(c, E.sphere_u(E.SphereModel("round", 1.0), c.zgrid()))
    K = G.gauss_curvature(f).values
    assert np.abs(K - 1.0)[2:-2, 2:-2].max() < 1e-4


# ------------------------------------------------------------------ graph geodesics

def _flat_field(n=81, half=2.0):
    c = G.planar_chart(-half, half, -half, half, n, n)
    return G.ScalarField(c, np.zeros((n, n)))


def test_flat_distance_exact_on_stencil_directions():
    f = _flat_field()
    c = f.chart
    ctr = (40, 40)
    d = G.distance_field(f, ctr)
    h = c.hx
    assert d[40, 60] == pytest.approx(20 * h, abs=1e-12)        # axis
    assert d[60, 60] == pytest.approx(20 * h * math.sqrt(2), abs=1e-12)  # diagonal
    assert d[60, 50] == pytest.approx(10 * h * math.sqrt(5), abs=1e-12)  # knight


def test_flat_distance_overestimate_bounded():
    f = _flat_field(161)
    d = G.distance_field(f, (80, 80))
    x, y = f.chart.grid()
    eu = np.hypot(x, y)
    sel = eu > 0.5
    rel = (d[sel] - eu[sel]) / eu[sel]
    assert rel.min() > -1e-9          # graph paths never beat straight lines
    assert rel.max() < 0.028          # measured 16-neighbor worst case 2.75%
    assert rel.max() < 0.0824         # a fortiori under the octile-metric ceiling


def test_flat_ball_area_and_boundary():
    f = _flat_field(161)
    for r in (1.0, 1.5):
        dom = G.geodesic_ball(f, (80, 80), r)
        assert dom.simply_connected and not dom.truncated
        a = G.area(f, dom)
        assert a == pytest.approx(math.pi * r * r, rel=0.05)
        L = G.boundary_length(f, dom)
        assert L == pytest.approx(2 * math.pi * r, rel=0.02)


def test_distance_rolls_with_source_on_cylinder():
    c = G.cylindrical_chart(-2.0, 2.0, 41, 24)
    ell, _ = c.grid()
    f = G.ScalarField(c, E.cigar_u_cyl(0.0, ell))
    d0 = G.distance_field(f, (20, 0))
    d5 = G.distance_field(f, (20, 5))
    assert np.allclose(d5, np.roll(d0, 5, axis=1), atol=1e-12)


def test_cigar_tip_distance_matches_closed_form():
    stub = float(np.arcsinh(np.exp(-4.0)))
    c = G.cylindrical_chart(-4.0, 4.0, 241, 48, tip_stub=stub)
    ell, _ = c.grid()
    f = G.ScalarField(c, E.cigar_u_cyl(0.0, ell))
    d = G.distance_field(f, "tip")
    i0 = int(round((0.0 - c.x0) / c.hx))
    got = float(d[i0].mean())
    assert got == pytest.approx(ARSINH1, rel=1e-3)
    # whole-field comparison against arsinh(e^ell)
    dx = np.arcsinh(np.exp(ell))
    sel = ell > -2.0
    assert np.abs((d - dx) / dx)[sel].max() < 5e-3


def test_cigar_tip_ball_areas():
    stub = float(np.arcsinh(np.exp(-4.0)))
    c = G.cylindrical_chart(-4.0, 4.0, 241, 48, tip_stub=stub)
    ell, _ = c.grid()
    f = G.ScalarField(c, E.cigar_u_cyl(0.0, ell))
    for r in (1.0, 2.0):
        dom = G.geodesic_ball(f, "tip", r)
        assert dom.simply_connected and not dom.truncated
        assert G.area(f, dom) == pytest.approx(E.cigar_ball_area(r), rel=0.03)


def test_tip_requires_marking():
    f = _flat_field(16, 1.0)
    with pytest.raises(ValueError):
        G.distance_field(f, "tip")
    c = G.cylindrical_chart(-1.0, 1.0, 16, 16)  # no stub
    g = G.ScalarField(c, np.zeros((16, 16)))
    with pytest.raises(ValueError):
        G.distance_field(g, "tip")


def test_planar_tip_node_source():
    n = 81
    c = G.planar_chart(-2, 2, -2, 2, n, n, tip_node=(40, 40))
    z = c.zgrid()
    f = G.ScalarField(c, E.cigar_u(E.CigarModel(), 0.0, z))
    d = G.distance_field(f, "tip")
    dx = np.arcsinh(np.abs(z))
    sel = np.abs(z) > 0.5
    assert np.abs((d[sel] - dx[sel]) / dx[sel]).max() < 0.03


def test_sphere_pole_to_equator():
    c = G.planar_chart(-1.5, 1.5, -1.5, 1.5, 241, 241, tip_node=(120, 120))
    f = G.ScalarField(c, E.sphere_u(E.SphereModel("round", 1.0), c.zgrid()))
    d = G.distance_field(f, "tip")
    j1 = int(round((1.0 - c.y0) / c.hy))
    assert d[120, j1] == pytest.approx(math.pi / 2, rel=1e-3)


# ------------------------------------------------------------------ domains

def test_domain_flags_planar():
    c = G.planar_chart(0, 1, 0, 1, 21, 21)
    mask = np.zeros((21, 21), dtype=bool)
    mask[5:16, 5:16] = True
    dom = G.make_domain(c, mask)
    assert dom.simply_connected and not dom.truncated
    ring = mask.copy()
    ring[8:13, 8:13] = False
    dom = G.make_domain(c, ring)
    assert not dom.simply_connected and not dom.truncated
    two = np.zeros_like(mask)
    two[2:4, 2:4] = True
    two[10:12, 10:12] = True
    assert not G.make_domain(c, two).simply_connected
    edge = np.zeros_like(mask)
    edge[0:5, 5:10] = True
    dom = G.make_domain(c, edge)
    assert dom.truncated and dom.simply_connected


def test_domain_flags_tip_capped_cylinder():
    stub = float(np.arcsinh(np.exp(-4.0)))
    c = G.cylindrical_chart(-4.0, 4.0, 41, 16, tip_stub=stub)
    ell, _ = c.grid()
    sub = ell <= 0.0  # tip cap plus a collar: a disc
    dom = G.make_domain(c, sub)
    assert dom.simply_connected and not dom.truncated
    band = (ell >= -1.0) & (ell <= 1.0)  # encircles the tip cap
    dom = G.make_domain(c, band)
    assert not dom.simply_connected and not dom.truncated
    top = ell >= 2.0  # reaches the open end
    dom = G.make_domain(c, top)
    assert dom.truncated


def test_domain_flags_open_cylinder_band():
    c = G.cylindrical_chart(-4.0, 4.0, 41, 16)
    ell, _ = c.grid()
    band = (ell >= -1.0) & (ell <= 1.0)
    dom = G.make_domain(c, band)
    # both chart ends are open, so the band encloses nothing the chart can see
    assert dom.simply_connected and not dom.truncated
    low = ell <= 0.0
    assert G.make_domain(c, low).truncated


def test_domain_shape_check():
    c = G.planar_chart(0, 1, 0, 1, 8, 8)
    with pytest.raises(ValueError):
        G.make_domain(c, np.ones((8, 9), dtype=bool))
    with pytest.raises(ValueError):
        G.geodesic_ball(G.ScalarField(c, np.zeros((8, 8))), (4, 4), -1.0)


@settings(max_examples=60, deadline=None)
@given(
    i0=st.integers(2, 10), j0=st.integers(2, 10),
    w=st.integers(1, 8), h=st.integers(1, 8),
)
def test_rectangles_are_simply_connected(i0, j0, w, h):
    c = G.planar_chart(0, 1, 0, 1, 21, 21)
    mask = np.zeros((21, 21), dtype=bool)
    mask[i0:min(i0 + w, 19), j0:min(j0 + h, 19)] = True
    dom = G.make_domain(c, mask)
    assert dom.simply_connected and not dom.truncated
    # node-cell area away from chart edges: one full cell per node
    f = G.ScalarField(c, np.zeros((21, 21)))
    assert G.area(f, dom) == pytest.approx(mask.sum() * c.hx * c.hy, rel=1e-12)


# ------------------------------------------------------------------ measures

def test_unit_square_area_exact():
    c = G.planar_chart(0, 1, 0, 1, 17, 33)
    f = G.ScalarField(c, np.zeros((17, 33)))
    assert G.area(f, G.full_domain(c)) == pytest.approx(1.0, abs=1e-14)


def test_area_scales_with_metric():
    c = G.planar_chart(0, 1, 0, 1, 17, 17)
    f = G.ScalarField(c, np.full((17, 17), 0.5 * math.log(3.0)))
    assert G.area(f, G.full_domain(c)) == pytest.approx(3.0, rel=1e-13)


def test_boundary_rejects_truncated():
    c = G.planar_chart(0, 1, 0, 1, 17, 17)
    f = G.ScalarField(c, np.zeros((17, 17)))
    with pytest.raises(ValueError):
        G.boundary_length(f, G.full_domain(c))


def test_boundary_single_node():
    c = G.planar_chart(0, 1, 0, 1, 17, 17)
    f = G.ScalarField(c, np.log(2.0) * np.ones((17, 17)))
    mask = np.zeros((17, 17), dtype=bool)
    mask[8, 8] = True
    dom = G.make_domain(c, mask)
    assert G.boundary_length(f, dom) == pytest.approx(2.0 * 2 * (c.hx + c.hy))


def test_boundary_level_contour_euclidean_disc():
    c = G.planar_chart(-2, 2, -2, 2, 161, 161)
    x, y = c.grid()
    f = G.ScalarField(c, np.zeros((161, 161)))
    r = 1.5
    eu = np.hypot(x, y)
    dom = G.make_domain(c, eu <= r, level=(eu, r))
    assert G.boundary_length(f, dom) == pytest.approx(2 * math.pi * r, rel=1e-3)


def test_boundary_cylinder_circle_exact():
    c = G.cylindrical_chart(-4.0, 4.0, 121, 24, tip_stub=float(np.arcsinh(np.exp(-4.0))))
    ell, _ = c.grid()
    f = G.ScalarField(c, E.cigar_u_cyl(0.0, ell))
    dom = G.make_domain(c, ell <= 2.0, level=(ell, 2.0))
    want = 2 * math.pi * math.exp(float(E.cigar_u_cyl(0.0, 2.0)))
    assert G.boundary_length(f, dom) == pytest.approx(want, rel=1e-6)


def test_binary_mask_boundary_has_known_staircase_bias():
    c = G.planar_chart(-2, 2, -2, 2, 161, 161)
    x, y = c.grid()
    f = G.ScalarField(c, np.zeros((161, 161)))
    eu = np.hypot(x, y)
    dom = G.make_domain(c, eu <= 1.5)  # no level data: marching squares on 0/1
    L = G.boundary_length(f, dom)
    assert 1.0 < L / (2 * math.pi * 1.5) < 1.09


def test_sublevel_area_cylindrical():
    c = G.cylindrical_chart(-4.0, 4.0, 241, 48, tip_stub=float(np.arcsinh(np.exp(-4.0))))
    ell, _ = c.grid()
    f = G.ScalarField(c, E.cigar_u_cyl(0.0, ell))
    dom = G.make_domain(c, ell <= 2.0)
    assert G.area(f, dom) == pytest.approx(E.cigar_sublevel_area(2.0), rel=0.02)


# ------------------------------------------------------------------ snapshots

def test_snapshot_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    c = G.cylindrical_chart(-3.0, 5.0, 33, 16)
    f = G.ScalarField(c, rng.standard_normal((33, 16)) * 10.0**rng.integers(-8, 8))
    p = tmp_path / "snap.dat"
    G.save_field(f, p, time=0.1234567890123456789)
    g, t = G.load_field(p)
    assert np.array_equal(g.values, f.values)
    assert t == 0.1234567890123456789
    assert g.chart.kind == c.kind
    assert g.chart.nx == c.nx and g.chart.ny == c.ny
    assert (g.chart.x0, g.chart.x1) == (c.x0, c.x1)
    assert g.chart.y1 - g.chart.y0 == 2 * math.pi


def test_snapshot_round_trip_planar(tmp_path):
    rng = np.random.default_rng(11)
    c = G.planar_chart(-1.0, 1.0, -2.0, 2.0, 9, 12)
    f = G.ScalarField(c, rng.standard_normal((9, 12)))
    p = tmp_path / "p.dat"
    G.save_field(f, p, time=0.0)
    g, t = G.load_field(p)
    assert np.array_equal(g.values, f.values)
    assert (g.chart.y0, g.chart.y1) == (c.y0, c.y1)


def test_snapshot_rejects_other_files(tmp_path):
    p = tmp_path / "x.dat"
    p.write_text("something else\n")
    with pytest.raises(ValueError):
        G.load_field(p)
