"""Command-line front end: validate closed forms, run scenarios, print reports.

Exit codes: 0 success, 1 a check failed (identity or hard diagnostic),
2 configuration or file problems, 3 the solver gave up mid-run.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import inspect
import json
import math
import sys
from pathlib import Path

import numpy as np

from .exact import (
    CigarModel,
    SphereModel,
    cigar_ball_area,
    cigar_curvature,
    cigar_curvature_cyl,
    cigar_dist_from_tip,
    cigar_sublevel_area,
    cigar_timed_ball_area,
    cigar_timed_dist,
    cigar_u,
    cigar_u_cyl,
    sphere_lifespan,
    sphere_u,
)
from .scenarios import (
    run_capped_sphere,
    run_construction,
    run_round_sphere,
    run_truncated_cigar,
)

IDENTITY_TOLERANCE = 1e-12
IDENTITY_SEED = 1789


class ConfigError(Exception):
    """A problem with the run configuration; location goes first."""

    def __init__(self, location: str, message: str) -> None:
        super().__init__(f"{location}: {message}")
        self.location = location


# ------------------------------------------------------------------ identities
# Every entry samples its inputs and returns the worst scale-free deviation of
# a closed-form identity (or one-sided bound).  All of them hold to rounding.

def _alphas(rng, n):
    return rng.uniform(0.3, 3.0, n)


def _ident_tip_curvature(rng, n):
    a = _alphas(rng, n)
    t = rng.uniform(0.0, 5.0, n)
    dev = [abs(cigar_curvature(CigarModel(alpha=ai), ti, 0j) * ai**2 / 2.0 - 1.0)
           for ai, ti in zip(a, t)]
    return float(max(dev))


def _ident_soliton_translation(rng, n):
    ell = rng.uniform(-40.0, 40.0, n)
    t = rng.uniform(0.0, 10.0, n)
    lhs = np.array([cigar_u_cyl(ti, li) for li, ti in zip(ell, t)])
    rhs = np.array([cigar_u_cyl(0.0, li - 2.0 * ti) for li, ti in zip(ell, t)])
    return float(np.abs(lhs - rhs).max())


def _ident_parabolic_scaling(rng, n):
    a = _alphas(rng, n)
    ell = rng.uniform(-30.0, 30.0, n)
    t = rng.uniform(0.0, 3.0, n)
    lhs = np.array([cigar_u_cyl(ti, li, alpha=ai) for ai, li, ti in zip(a, ell, t)])
    rhs = np.array([math.log(ai) + cigar_u_cyl(ti / ai**2, li)
                    for ai, li, ti in zip(a, ell, t)])
    return float(np.abs(lhs - rhs).max())


def _ident_chart_change(rng, n):
    a = _alphas(rng, n)
    ell = rng.uniform(-200.0, 200.0, n)
    th = rng.uniform(0.0, 2.0 * math.pi, n)
    t = rng.uniform(0.0, 3.0, n)
    dev = 0.0
    for ai, li, hi, ti in zip(a, ell, th, t):
        z = np.exp(li + 1j * hi)
        dev = max(dev, abs(cigar_u(CigarModel(alpha=ai), ti, z) + li
                           - cigar_u_cyl(ti, li, alpha=ai)))
    return float(dev)


def _ident_profile_curvature(rng, n):
    a = _alphas(rng, n)
    t = rng.uniform(0.0, 3.0, n)
    s = rng.uniform(-80.0, 80.0, n)
    dev = 0.0
    for ai, ti, si in zip(a, t, s):
        ell = si + 2.0 * ti / ai**2
        k = cigar_curvature_cyl(ti, ell, alpha=ai)
        dev = max(dev, abs(k * (1.0 + math.exp(2.0 * si)) * ai**2 / 2.0 - 1.0))
    return float(dev)


def _ident_metric_slope(rng, n):
    ell = rng.uniform(-30.0, 30.0, n)
    lhs = np.array([cigar_u_cyl(0.0, li) for li in ell])
    rhs = ell - 0.5 * np.log1p(np.exp(np.minimum(2.0 * ell, 700.0)))
    rhs = np.where(2.0 * ell > 700.0, -np.log1p(0.5 * np.exp(-2.0 * ell)), rhs)
    return float(np.abs(lhs - rhs).max())


def _ident_ball_area_forms(rng, n):
    ell = rng.uniform(-20.0, 20.0, n)
    lhs = cigar_sublevel_area(ell)
    rhs = cigar_ball_area(cigar_dist_from_tip(ell))
    return float((np.abs(lhs - rhs) / (1.0 + np.abs(rhs))).max())


def _ident_area_lower_estimate(rng, n):
    r = rng.uniform(0.0, 40.0, n)
    area = cigar_ball_area(r)
    bound = 2.0 * math.pi * (r - 1.0)
    return float(np.maximum(0.0, (bound - area) / (1.0 + area)).max())


def _ident_ball_transport(rng, n):
    r = rng.uniform(0.0, 30.0, n)
    d1 = np.abs(np.asarray(cigar_timed_dist(r, 0.0)) - r)
    d2 = np.abs(np.asarray(cigar_timed_ball_area(r, 0.0)) - cigar_ball_area(r))
    return float(max(d1.max(), (d2 / (1.0 + cigar_ball_area(r))).max()))


def _ident_curvature_upper_bound(rng, n):
    a = _alphas(rng, n)
    t = rng.uniform(0.0, 3.0, n)
    z = rng.uniform(-20.0, 20.0, n) + 1j * rng.uniform(-20.0, 20.0, n)
    dev = 0.0
    for ai, ti, zi in zip(a, t, z):
        k = cigar_curvature(CigarModel(alpha=ai), ti, zi)
        dev = max(dev, max(0.0, k * ai**2 / 2.0 - 1.0))
    return float(dev)


def _ident_round_sphere_curvature(rng, n):
    rho = rng.uniform(0.2, 3.0, n)
    z = rng.uniform(-10.0, 10.0, n) + 1j * rng.uniform(-10.0, 10.0, n)
    dev = 0.0
    for ri, zi in zip(rho, z):
        u = sphere_u(SphereModel(kind="round", radius=ri), zi)
        dev = max(dev, abs(math.exp(2.0 * u) * (1.0 + abs(zi) ** 2) ** 2
                           / (4.0 * ri**2) - 1.0))
    return float(dev)


def _ident_sphere_lifespan_area(rng, n):
    dev = 0.0
    for ri in rng.uniform(0.1, 3.0, n):
        for kind in ("round", "capped"):
            m = SphereModel(kind=kind, radius=ri)
            dev = max(dev, abs(8.0 * math.pi * sphere_lifespan(m) / m.total_area() - 1.0))
    return float(dev)


IDENTITIES = [
    ("tip_curvature", _ident_tip_curvature),
    ("soliton_translation", _ident_soliton_translation),
    ("parabolic_scaling", _ident_parabolic_scaling),
    ("chart_change", _ident_chart_change),
    ("profile_curvature", _ident_profile_curvature),
    ("metric_slope", _ident_metric_slope),
    ("ball_area_forms", _ident_ball_area_forms),
    ("area_lower_estimate", _ident_area_lower_estimate),
    ("ball_transport", _ident_ball_transport),
    ("curvature_upper_bound", _ident_curvature_upper_bound),
    ("round_sphere_curvature", _ident_round_sphere_curvature),
    ("sphere_lifespan_area", _ident_sphere_lifespan_area),
]


def run_identity_suite(sample_density: int = 1000, seed: int = IDENTITY_SEED) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for name, fn in IDENTITIES:
        dev = fn(rng, sample_density)
        rows.append({
            "identity": name,
            "samples": sample_density,
            "max_deviation": dev,
            "passed": dev <= IDENTITY_TOLERANCE,
        })
    return rows


def cmd_validate(args) -> int:
    rows = run_identity_suite(args.sample_density)
    width = max(len(r["identity"]) for r in rows)
    print(f"{'identity':<{width}}  {'samples':>7}  max deviation")
    for r in rows:
        print(f"{r['identity']:<{width}}  {r['samples']:>7}  {r['max_deviation']:.3e}")
    failing = [r for r in rows if not r["passed"]]
    if failing:
        print(f"FAIL: identity {failing[0]['identity']} deviates by "
              f"{failing[0]['max_deviation']:.3e} (tolerance {IDENTITY_TOLERANCE:g})",
              file=sys.stderr)
        return 1
    print(f"all {len(rows)} identities within {IDENTITY_TOLERANCE:g}")
    return 0


# ------------------------------------------------------------------ simulate

SCENARIOS = {
    "truncated_cigar": run_truncated_cigar,
    "round_sphere": run_round_sphere,
    "capped_sphere": run_capped_sphere,
    "construction": run_construction,
}


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(str(p), "config file not found")
    try:
        with open(p) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{p}:{err.lineno}:{err.colno}", err.msg) from err
    if not isinstance(cfg, dict):
        raise ConfigError(str(p), "top level must be an object")
    return cfg


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"--set {text}", "expected key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare words pass through as strings
    return key, value


def _apply_overrides(cfg: dict, overrides) -> dict:
    for text in overrides or []:
        key, value = _parse_override(text)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                except (ValueError, IndexError):
                    raise ConfigError(f"--set {key}", f"no such element {part!r}")
                continue
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}", f"{part!r} is not an object")
            node = node.setdefault(part, {})
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = value
            except (ValueError, IndexError):
                raise ConfigError(f"--set {key}", f"no such element {last!r}")
        elif isinstance(node, dict):
            node[last] = value
        else:
            raise ConfigError(f"--set {key}", "cannot assign into a scalar")
    return cfg


def _check_run_entry(location: str, entry: dict) -> tuple[str, dict]:
    if not isinstance(entry, dict):
        raise ConfigError(location, "run entry must be an object")
    scenario = entry.get("scenario")
    if scenario is None:
        raise ConfigError(f"{location}.scenario", "missing scenario name")
    if scenario not in SCENARIOS:
        known = ", ".join(sorted(SCENARIOS))
        raise ConfigError(f"{location}.scenario", f"unknown scenario {scenario!r} (known: {known})")
    params = entry.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{location}.parameters", "parameters must be an object")
    allowed = set(inspect.signature(SCENARIOS[scenario]).parameters) - {"out_dir", "force"}
    for key in params:
        if key not in allowed:
            raise ConfigError(f"{location}.parameters.{key}",
                              f"unknown parameter for scenario {scenario!r}")
    params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in params.items()}
    return scenario, params


def _dispatch_run(scenario: str, params: dict, out_dir: str, force: bool) -> dict:
    res = SCENARIOS[scenario](**params, out_dir=out_dir, force=force)
    failed_checks = [r.name for r in res.reports if not r.passed]
    return {
        "scenario": res.kind,
        "status": res.status,
        "passed": res.passed,
        "failed_checks": failed_checks,
        "message": res.message,
        "out": str(out_dir),
    }


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args.set)
    out_root = Path(args.out)
    if "runs" in cfg:
        if not isinstance(cfg["runs"], list) or not cfg["runs"]:
            raise ConfigError("runs", "must be a non-empty array of run entries")
        jobs = []
        seen = set()
        for k, entry in enumerate(cfg["runs"]):
            scenario, params = _check_run_entry(f"runs[{k}]", entry)
            name = entry.get("name", f"run{k:02d}")
            if name in seen:
                raise ConfigError(f"runs[{k}].name", f"duplicate run name {name!r}")
            seen.add(name)
            jobs.append((scenario, params, str(out_root / name)))
    else:
        scenario, params = _check_run_entry("config", cfg)
        jobs = [(scenario, params, str(out_root))]

    n_workers = max(1, int(args.jobs))
    summaries = []
    try:
        if n_workers == 1 or len(jobs) == 1:
            for scenario, params, out in jobs:
                summaries.append(_dispatch_run(scenario, params, out, args.force))
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as pool:
                futures = [pool.submit(_dispatch_run, s, p, o, args.force) for s, p, o in jobs]
                summaries = [f.result() for f in futures]
    except FileExistsError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as err:
        print(f"error: parameters: {err}", file=sys.stderr)
        return 2

    status = 0
    for s in summaries:
        line = f"{s['scenario']}: {s['status']}"
        if s["failed_checks"]:
            line += " (failed checks: " + ", ".join(s["failed_checks"]) + ")"
        print(line + f" -> {s['out']}")
        if s["status"] == "failed":
            print(f"solver failure in {s['scenario']}: {s['message']}", file=sys.stderr)
            status = max(status, 3)
        elif not s["passed"]:
            status = max(status, 1)
    return status


# ------------------------------------------------------------------ report

def _series_columns(name: str, row: dict) -> tuple[float, float]:
    """(value, bound) to plot for one series row of a diagnostic."""
    if "min_K" in row and "bound" in row:
        return row["min_K"], row["bound"]
    if "eps_hat" in row:
        return row["eps_hat"], row.get("bound", 0.0)
    return row.get("margin", 0.0), -row.get("tolerance", 0.0)


def _emit_plot_csv(run_dir: Path, rep: dict) -> Path | None:
    details = rep.get("details") or {}
    series = details.get("series")
    if not series:
        return None
    plots = run_dir / "plots"
    plots.mkdir(exist_ok=True)
    path = plots / f"{rep['name']}.csv"
    if rep["name"] == "chen_bound":
        header = "t,min_K,bound"
    elif rep["name"] == "curvature_persistence":
        header = "t,eps_hat,bound"
    else:
        header = "t,value,bound"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in series:
            if rep["name"] == "curvature_persistence":
                value, bound = row["eps_hat"], details.get("bound", 0.0)
            else:
                value, bound = _series_columns(rep["name"], row)
            fh.write(",".join(f"{v:.17g}" for v in (row.get("t", 0.0), value, bound)) + "\n")
    return path


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    path = run_dir / "reports.json"
    if not path.exists():
        print(f"error: {path} not found", file=sys.stderr)
        return 2
    with open(path) as fh:
        payload = json.load(fh)
    reports = payload.get("reports", [])
    print(f"scenario: {payload.get('scenario', '?')}  status: {payload.get('status', '?')}")
    if reports:
        width = max(len(r["name"]) for r in reports)
        print(f"{'check':<{width}}  {'margin':>12}  {'tolerance':>10}  verdict")
        for r in reports:
            verdict = "pass" if r["passed"] else "FAIL"
            print(f"{r['name']:<{width}}  {r['margin']:>12.4e}  {r['tolerance']:>10.3g}  {verdict}")
    else:
        print("no checks recorded")
    written = [p for r in reports if (p := _emit_plot_csv(run_dir, r)) is not None]
    for p in written:
        print(f"wrote {p}")
    constants = payload.get("measured_constants", {})
    scalars = {k: v for k, v in constants.items() if isinstance(v, (int, float)) or v is None}
    if scalars:
        print("measured constants:")
        for k in sorted(scalars):
            v = scalars[k]
            print(f"  {k} = {v if v is None else f'{v:.6g}'}")
    return 0


def cmd_diagnose(args) -> int:
    run_dir = Path(args.run)
    path = run_dir / "reports.json"
    if not path.exists():
        print(f"error: {path} not found", file=sys.stderr)
        return 2
    with open(path) as fh:
        payload = json.load(fh)
    bad = [r for r in payload.get("reports", []) if not r["passed"]]
    for r in bad:
        print(f"FAIL {r['name']}: margin {r['margin']:.4e} at t={r['t']:.4g}")
    if payload.get("status") == "failed":
        print(f"solver failed: {payload.get('message', '')}", file=sys.stderr)
        return 3
    if bad:
        return 1
    print(f"ok: {len(payload.get('reports', []))} checks passed")
    return 0


def cmd_construct(args) -> int:
    try:
        res = run_construction(k_max=args.k_max, out_dir=args.out, force=args.force)
    except FileExistsError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"error: parameters: {err}", file=sys.stderr)
        return 2
    for r in res.reports:
        verdict = "pass" if r.passed else "FAIL"
        print(f"{r.name}: margin {r.margin:+.4e} {verdict}")
    return 0 if res.passed else 1


# ------------------------------------------------------------------ parser

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riccilab",
                                description="conformal-gauge curvature flow laboratory")
    sub = p.add_subparsers(dest="verb", required=True)

    v = sub.add_parser("validate", help="check the closed-form identity suite")
    v.add_argument("--sample-density", type=int, default=1000,
                   help="samples per identity (default 1000)")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="run a configured scenario")
    s.add_argument("--config", required=True, help="JSON run configuration")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--jobs", type=int, default=1, help="parallel runs for batch configs")
    s.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted path, JSON value)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="print margins and plot-ready CSV for a finished run")
    r.add_argument("--run", required=True, help="run directory holding reports.json")
    r.set_defaults(func=cmd_report)

    d = sub.add_parser("diagnose", help="verdict-only view of a finished run")
    d.add_argument("--run", required=True, help="run directory holding reports.json")
    d.set_defaults(func=cmd_diagnose)

    c = sub.add_parser("construct", help="measure the patched-metric family")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--k-max", type=int, default=3, help="number of patches")
    c.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    c.set_defaults(func=cmd_construct)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
