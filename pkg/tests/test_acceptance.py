"""Acceptance gate: eleven checks, one printed verdict line each.

Every check pins its tolerance in the assertion; a failing check prints its
measured numbers so the verdict line is useful on its own (run with -s to see
the lines for passing checks too).
"""

import math
import time

import numpy as np
import pytest

from riccilab.cli import run_identity_suite
from riccilab.diagnostics import bol_residual
from riccilab.exact import SphereModel, cigar_u_cyl, sphere_u
from riccilab.flow import BoundaryCondition, FlowState, StepControl, run
from riccilab.geometry import ScalarField, cylindrical_chart, geodesic_ball, planar_chart
from riccilab.scenarios import (
    run_capped_sphere,
    run_construction,
    run_round_sphere,
    run_truncated_cigar,
    sample_ball_domains,
)


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


# ------------------------------------------------------------------ fixtures

@pytest.fixture(scope="session")
def convergence_study():
    """Cigar window, Dirichlet-exact, T = 1, three grids with dt scaled as h^2."""
    t0 = time.time()
    out = {}
    for nx, dt in ((61, 8e-3), (121, 2e-3), (241, 5e-4)):
        chart = cylindrical_chart(-4.0, 8.0, nx, 8)
        ells = chart.xs[:, None] * np.ones((1, 8))
        f0 = ScalarField(chart, cigar_u_cyl(0.0, ells))
        bc = BoundaryCondition("dirichlet_exact", lambda t, e=ells: cigar_u_cyl(t, e))
        rr = run(FlowState(f0, 0.0), bc, 1.0, StepControl(scheme="implicit", dt=dt),
                 snapshot_every=0.5)
        assert rr.status == "completed"
        snaps = {round(t, 9): f for t, f in rr.snapshots}
        err = float(np.abs(snaps[1.0].values[1:-1] - cigar_u_cyl(1.0, ells)[1:-1]).max())
        out[nx] = {"err": err, "snaps": snaps}
    out["elapsed"] = time.time() - t0
    return out


@pytest.fixture(scope="session")
def cigar_exact(tmp_path_factory):
    return run_truncated_cigar(out_dir=tmp_path_factory.mktemp("cig_exact"))


@pytest.fixture(scope="session")
def cigar_frozen(tmp_path_factory):
    return run_truncated_cigar(boundary="dirichlet_frozen",
                               out_dir=tmp_path_factory.mktemp("cig_frozen"))


@pytest.fixture(scope="session")
def cigar_half(tmp_path_factory):
    return run_truncated_cigar(alpha=0.5, T=0.25, snapshot_every=0.025,
                               out_dir=tmp_path_factory.mktemp("cig_half"))


@pytest.fixture(scope="session")
def round_run(tmp_path_factory):
    return run_round_sphere(out_dir=tmp_path_factory.mktemp("round"))


@pytest.fixture(scope="session")
def capped_run(tmp_path_factory):
    return run_capped_sphere(out_dir=tmp_path_factory.mktemp("capped"))


@pytest.fixture(scope="session")
def construction_run(tmp_path_factory):
    return run_construction(out_dir=tmp_path_factory.mktemp("constr"))


@pytest.fixture(scope="session")
def bol_suite():
    """100 seeded ball domains over the cigar and round-sphere exact fields."""
    cyl = cylindrical_chart(-4.0, 8.0, 241, 64, tip_stub=math.asinh(math.exp(-4.0)))
    ells = cyl.xs[:, None] * np.ones((1, 64))
    f_cigar = ScalarField(cyl, cigar_u_cyl(0.0, ells))

    pl = planar_chart(-2.2, 2.2, -2.2, 2.2, 193, 193)
    xs, ys = pl.grid()
    f_sphere = ScalarField(pl, sphere_u(SphereModel(kind="round", radius=1.0), xs + 1j * ys))

    pairs = [(f_cigar, d) for d, _ in sample_ball_domains(
        f_cigar, 50, seed=101, radius_range=(0.5, 1.2))]
    pairs += [(f_sphere, d) for d, _ in sample_ball_domains(
        f_sphere, 50, seed=202, radius_range=(0.3, 0.8))]
    fracs = []
    for f, dom in pairs:
        rep = bol_residual(f, dom)
        fracs.append(rep.margin / rep.details["length"] ** 2)
    return fracs


# ------------------------------------------------------------------ criteria

def test_criterion_1_identity_suite():
    t0 = time.time()
    rows = run_identity_suite(1000)
    elapsed = time.time() - t0
    worst = max(r["max_deviation"] for r in rows)
    ok = all(r["passed"] for r in rows) and len(rows) == 12 and elapsed < 1.0
    _verdict(1, ok, f"{len(rows)} identities x 1000 samples, worst deviation "
                    f"{worst:.2e} (<= 1e-12), {elapsed:.2f}s (< 1s)")


def test_criterion_2_solver_convergence(convergence_study):
    e = [convergence_study[nx]["err"] for nx in (61, 121, 241)]
    orders = [math.log2(e[0] / e[1]), math.log2(e[1] / e[2])]
    elapsed = convergence_study["elapsed"]
    ok = e[0] > e[1] > e[2] and min(orders) >= 1.8 and elapsed < 300.0
    _verdict(2, ok, f"L-inf errors {e[0]:.2e} > {e[1]:.2e} > {e[2]:.2e}, orders "
                    f"{orders[0]:.2f}, {orders[1]:.2f} (>= 1.8), {elapsed:.1f}s (< 5min)")


def test_criterion_3_translation_law(convergence_study):
    snaps = convergence_study[241]["snaps"]
    u_half = snaps[0.5].values
    u_zero = snaps[0.0].values
    shift = 20  # 1.0 length unit at h = 0.05
    err = float(np.abs(u_half[shift:] - u_zero[:-shift]).max())
    ok = err <= 5e-3
    _verdict(3, ok, f"t=0.5 profile vs t=0 shifted by 1.0: L-inf {err:.2e} (<= 5e-3)")


def test_criterion_4_lifespans(round_run, capped_run):
    r_ext = round_run.measured["extinction_time"]
    c_ext = capped_run.measured["extinction_time"]
    r_rel = abs(r_ext / 0.5 - 1.0)
    c_rel = abs(c_ext / 1.0 - 1.0)
    r_slope = abs(round_run.measured["area_decay_slope"] / (-8 * math.pi) - 1.0)
    c_slope = abs(capped_run.measured["area_decay_slope"] / (-8 * math.pi) - 1.0)
    ok = r_rel <= 0.02 and c_rel <= 0.02 and r_slope <= 0.01 and c_slope <= 0.01
    _verdict(4, ok, f"round extinction {r_ext:.4f} ({r_rel:.2%} of 0.5), capped "
                    f"{c_ext:.4f} ({c_rel:.2%} of 1.0); dA/dt off -8pi by "
                    f"{r_slope:.2%}, {c_slope:.2%} (<= 1%)")


def test_criterion_5_chen_bound(cigar_exact, cigar_frozen, cigar_half, round_run, capped_run):
    runs = {
        "cigar_exact": cigar_exact, "cigar_frozen": cigar_frozen,
        "cigar_half": cigar_half, "round": round_run, "capped": capped_run,
    }
    margins = {name: res.report("chen_bound") for name, res in runs.items()}
    ok = all(rep.passed for rep in margins.values())
    worst_name = min(margins, key=lambda n: margins[n].margin)
    _verdict(5, ok, f"min K + 1/(2t) within budget at every snapshot of "
                    f"{len(runs)} scenarios; tightest: {worst_name} "
                    f"margin {margins[worst_name].margin:+.3e}")


def test_criterion_6_bol_inequality(bol_suite):
    worst = min(bol_suite)

    flat = planar_chart(-1.2, 1.2, -1.2, 1.2, 161, 161)
    f_flat = ScalarField(flat, np.zeros((161, 161)))
    rep = bol_residual(f_flat, geodesic_ball(f_flat, (80, 80), 0.8))
    disc_frac = abs(rep.margin) / rep.details["length"] ** 2

    pl = planar_chart(-1.6, 1.6, -1.6, 1.6, 193, 193)
    xs, ys = pl.grid()
    f_hemi = ScalarField(pl, sphere_u(SphereModel(kind="round", radius=1.0), xs + 1j * ys))
    rep = bol_residual(f_hemi, geodesic_ball(f_hemi, (96, 96), math.pi / 2))
    hemi_frac = abs(rep.margin) / rep.details["length"] ** 2

    ok = worst >= -0.03 and disc_frac <= 0.03 and hemi_frac <= 0.03
    _verdict(6, ok, f"100 domains worst residual/L^2 {worst:+.4f} (>= -0.03); "
                    f"flat disc {disc_frac:.4f}, hemisphere {hemi_frac:.4f} (<= 0.03)")


def test_criterion_7_barrier_sandwich(cigar_exact, cigar_frozen):
    sandwich = cigar_exact.report("barrier_sandwich")
    bstar = cigar_frozen.measured["beta_star"]
    ok = sandwich.passed and bstar is not None and 1.0 < bstar <= 4.0
    _verdict(7, ok, f"exact run (R=20, T=1) holds at beta=1.1 with margin "
                    f"{sandwich.margin:+.3e}; frozen run beta* = {bstar} "
                    f"(bisected to 1e-2)")


def test_criterion_8_scaling_covariance(cigar_exact, cigar_half):
    s_unit = {round(r["t"], 9): r["eps_hat"] for r in cigar_exact.measured["eps_hat"]}
    s_half = {round(r["t"], 9): r["eps_hat"] for r in cigar_half.measured["eps_hat"]}
    devs = []
    for t_half, eps in sorted(s_half.items()):
        t_unit = round(t_half / 0.25, 9)  # same t / alpha^2
        devs.append(abs(eps / s_unit[t_unit] - 1.0))
    min_eps = min(min(s_unit.values()), min(s_half.values()))
    ok = len(devs) == 11 and max(devs) <= 0.03 and min_eps > 0.0
    _verdict(8, ok, f"eps_hat for alpha in {{1, 1/2}} at matching t/alpha^2: "
                    f"max rel dev {max(devs):.2e} (<= 3%); min eps_hat "
                    f"{min_eps:.4f} (> 0)")


def test_criterion_9_construction_suite(construction_run):
    init = construction_run.report("initial_maxima")
    mono = construction_run.report("monotone_maxima")
    sums = construction_run.report("series_partial_sums")
    worst_err = 0.05 - init.margin
    worst_excess = max(construction_run.measured["partial_sums"][k]
                       / construction_run.measured["series_bounds"][k] - 1.0
                       for k in range(3))
    ok = init.passed and mono.passed and sums.passed
    _verdict(9, ok, f"k_max=3: initial maxima within {worst_err:.2%} of 2k^2 (<= 5%); "
                    f"maxima strictly increasing at t=0.5; partial sums exceed the "
                    f"series bound by at most {worst_excess:.2%} (<= 10%)")


def test_criterion_10_collapsing_ball(capped_run):
    ball = capped_run.report("collapsed_ball")
    t_ext = capped_run.measured["extinction_time"]
    ok = ball.passed and ball.details["t_area"] < t_ext and ball.details["t_uhat"] < t_ext
    _verdict(10, ok, f"capped r=1 tracked ball: area < 0.05 at t={ball.details['t_area']:.4f}, "
                     f"sup u < -3 at t={ball.details['t_uhat']:.4f}, both before "
                     f"extinction at {t_ext:.4f}")


def test_criterion_11_determinism(cigar_exact, capped_run, tmp_path_factory):
    redo_cigar = run_truncated_cigar(out_dir=tmp_path_factory.mktemp("cig_redo"))
    redo_capped = run_capped_sphere(out_dir=tmp_path_factory.mktemp("cap_redo"))
    a = (cigar_exact.out_dir / "run.csv").read_bytes()
    b = (redo_cigar.out_dir / "run.csv").read_bytes()
    c = (capped_run.out_dir / "run.csv").read_bytes()
    d = (redo_capped.out_dir / "run.csv").read_bytes()
    ok = a == b and c == d
    _verdict(11, ok, f"repeated runs bit-identical: cigar run.csv ({len(a)} bytes), "
                     f"capped run.csv ({len(c)} bytes)")
