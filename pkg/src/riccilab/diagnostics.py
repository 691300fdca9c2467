"""Quantitative checks on flow snapshots.

Every check returns a DiagnosticReport: a named scalar margin that is
nonnegative when the corresponding inequality holds exactly, together with
the tolerance the check is judged against (pass means margin >= -tolerance).
Margins keep their sign and size so near-equality cases stay visible
instead of collapsing into a boolean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from . import exact
from .geometry import (
    Domain,
    ScalarField,
    area,
    boundary_length,
    gauss_curvature,
    make_domain,
    _shift_or,
)

__all__ = [
    "DiagnosticReport",
    "BarrierConfig",
    "chen_bound",
    "bol_residual",
    "dilate_mask",
    "barrier_sandwich",
    "beta_star",
    "pseudolocality_precheck",
    "pseudolocality_conclusion",
    "bol_chain_bound",
    "curvature_persistence",
]


@dataclass
class DiagnosticReport:
    name: str
    margin: float
    tolerance: float
    t: float
    worst_node: Optional[tuple] = None
    details: dict = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "margin": float(self.margin),
            "tolerance": float(self.tolerance),
            "passed": bool(self.passed),
            "t": float(self.t),
            "worst_node": _jsonify(list(self.worst_node)) if self.worst_node is not None else None,
            "details": _jsonify(self.details),
        }


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _interior(f: ScalarField) -> np.ndarray:
    m = np.zeros((f.chart.nx, f.chart.ny), dtype=bool)
    if f.chart.periodic_y:
        m[1:-1, :] = True
    else:
        m[1:-1, 1:-1] = True
    return m


# ------------------------------------------------------------------ Chen lower bound

def chen_bound(f: ScalarField, t: float) -> DiagnosticReport:
    """Curvature stays above -1/(2t): margin = min K + 1/(2t) over interior nodes.

    The tolerance combines a 1% fraction of the bound with the O(h^2)
    curvature discretization error.
    """
    if t <= 0:
        raise ValueError("the lower curvature barrier needs t > 0")
    K = gauss_curvature(f).values
    sel = _interior(f)
    vals = np.where(sel, K, np.inf)
    idx = np.unravel_index(np.argmin(vals), vals.shape)
    margin = float(vals[idx] + 1.0 / (2.0 * t))
    h = max(f.chart.hx, f.chart.hy)
    tol = 0.01 / (2.0 * t) + 32.0 * h * h
    return DiagnosticReport(
        "chen_bound", margin, tol, t, tuple(int(i) for i in idx),
        {"min_K": float(vals[idx]), "bound": -1.0 / (2.0 * t)},
    )


# ------------------------------------------------------------------ Bol inequality

def dilate_mask(chart, mask: np.ndarray) -> np.ndarray:
    """Mask grown by its 8-neighborhood (wrapping in theta on cylinders)."""
    allowed = np.ones_like(mask)
    return _shift_or(mask.copy(), allowed, chart.periodic_y, conn8=True)


def bol_residual(f: ScalarField, dom: Domain, tolerance: Optional[float] = None) -> DiagnosticReport:
    """Isoperimetric defect L^2 - 4 pi A + (sup K) A^2 for a simply connected domain.

    sup K is taken over the domain plus a one-cell dilation so that boundary
    curvature between nodes is not missed.  Nonnegative in the continuum.
    """
    if dom.truncated:
        raise ValueError("domain touches the chart boundary; lengths would be wrong")
    if not dom.simply_connected:
        raise ValueError("the inequality needs a simply connected domain")
    A = area(f, dom)
    L = boundary_length(f, dom)
    K = gauss_curvature(f).values
    sup_K = float(K[dilate_mask(f.chart, dom.mask)].max())
    margin = L * L - 4.0 * math.pi * A + sup_K * A * A
    tol = 0.03 * L * L if tolerance is None else tolerance
    return DiagnosticReport(
        "bol_residual", float(margin), float(tol), 0.0, None,
        {"length": float(L), "area": float(A), "sup_K": sup_K},
    )


# ------------------------------------------------------------------ barrier sandwich

@dataclass(frozen=True)
class BarrierConfig:
    alpha: float = 1.0
    beta: float = 1.1
    horizon: float = 1.0  # the upper barrier is the exact profile delayed by this much

    def __post_init__(self) -> None:
        if self.beta <= 1.0:
            raise ValueError("the squeeze parameter must exceed 1")
        if self.alpha <= 0 or self.horizon <= 0:
            raise ValueError("alpha and horizon must be positive")


def _cigar_on_chart(chart, t: float, alpha: float) -> np.ndarray:
    if chart.kind == "cylindrical":
        ell = chart.xs[:, None] * np.ones((1, chart.ny))
        return exact.cigar_u_cyl(t, ell, alpha=alpha)
    return exact.cigar_u(exact.CigarModel(alpha=alpha), t, chart.zgrid())


def barrier_profiles(chart, t: float, cfg: BarrierConfig) -> tuple[np.ndarray, np.ndarray]:
    """(lower, upper) comparison solutions squeezing the exact profile by log beta."""
    lower = _cigar_on_chart(chart, t, cfg.alpha / cfg.beta)
    upper = _cigar_on_chart(chart, t - cfg.horizon, cfg.alpha * cfg.beta)
    return lower, upper


def barrier_sandwich(
    f: ScalarField, t: float, cfg: BarrierConfig, patch: Optional[np.ndarray] = None
) -> DiagnosticReport:
    """Squeeze check: lower and upper comparison solutions must bracket the field.

    margin = min over the patch of min(u - lower, upper - u); the exact
    profile sits a full log(beta) inside the bracket, so zero tolerance
    still leaves room for discretization error.
    """
    lower, upper = barrier_profiles(f.chart, t, cfg)
    gap = np.minimum(f.values - lower, upper - f.values)
    sel = np.ones_like(gap, dtype=bool) if patch is None else np.asarray(patch, bool)
    if not sel.any():
        raise ValueError("empty patch")
    vals = np.where(sel, gap, np.inf)
    idx = np.unravel_index(np.argmin(vals), vals.shape)
    return DiagnosticReport(
        "barrier_sandwich", float(vals[idx]), 0.0, t,
        tuple(int(i) for i in idx),
        {"beta": cfg.beta, "slack_at_exact_data": math.log(cfg.beta)},
    )


def beta_star(
    margin_fn: Callable[[float], float],
    lo: float = 1.0,
    hi: float = 4.0,
    resolution: float = 1e-2,
) -> Optional[float]:
    """Smallest squeeze parameter the margin function accepts, by bisection.

    Assumes the margin grows with beta (wider brackets can only help); the
    answer is located to within `resolution`.  None when even `hi` fails.
    """
    if margin_fn(hi) < 0.0:
        return None
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if margin_fn(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


# ------------------------------------------------------------------ pseudolocality

def pseudolocality_precheck(
    f: ScalarField,
    ball: Domain,
    r0: float,
    v0: float,
    tolerance: float = 0.05,
) -> DiagnosticReport:
    """Hypotheses at the initial time on a metric ball of radius r0.

    Three normalized slacks, all of which must clear -tolerance:
      curvature:   1 - r0^2 max |K|        (|K| <= r0^-2 on the ball)
      area:        A / (v0 r0^2) - 1        (noncollapsed: A >= v0 r0^2)
      containment: 1 if the ball stayed inside the chart, else -1
    """
    if not (0.0 < v0 <= math.pi):
        raise ValueError("the area ratio v0 must lie in (0, pi]")
    K = gauss_curvature(f).values
    max_abs_K = float(np.abs(K[ball.mask]).max())
    slack_curv = 1.0 - r0 * r0 * max_abs_K
    A = area(f, ball)
    slack_area = A / (v0 * r0 * r0) - 1.0
    slack_contain = -1.0 if ball.truncated else 1.0
    margin = min(slack_curv, slack_area, slack_contain)
    return DiagnosticReport(
        "pseudolocality_precheck", float(margin), tolerance, 0.0, None,
        {
            "slack_curvature": float(slack_curv),
            "slack_area": float(slack_area),
            "slack_containment": float(slack_contain),
            "max_abs_K": max_abs_K,
            "ball_area": float(A),
        },
    )


def pseudolocality_conclusion(
    f: ScalarField, t: float, half_ball: Domain, r0: float
) -> DiagnosticReport:
    """Later-time conclusion: |K| <= 2 r0^-2 on the half ball.

    margin = 2 r0^-2 - max |K| over the half ball at time t; the measured
    window t / r0^2 is recorded alongside.
    """
    K = gauss_curvature(f).values
    vals = np.where(half_ball.mask, np.abs(K), -np.inf)
    idx = np.unravel_index(np.argmax(vals), vals.shape)
    margin = 2.0 / (r0 * r0) - float(vals[idx])
    return DiagnosticReport(
        "pseudolocality_conclusion", float(margin), 0.0, t,
        tuple(int(i) for i in idx),
        {"max_abs_K": float(vals[idx]), "window": t / (r0 * r0)},
    )


# ------------------------------------------------------------------ curvature persistence

def bol_chain_bound(beta: float) -> float:
    """Curvature scale guaranteed by chaining the squeeze with the isoperimetric
    inequality: the dimensionless peak can drop at most by the squeeze factor
    squared from the exact value 2."""
    return 2.0 / (beta * beta)


def curvature_persistence(
    snapshots: Sequence, ell_ref: float, beta: float, alpha: float = 1.0
) -> DiagnosticReport:
    """Dimensionless curvature peak eps_hat(t) = (max K) (L_ref / 2 pi)^2 over a run.

    L_ref is the metric circumference of the reference circle {ell = ell_ref};
    for exact profiles eps_hat stays pinned near 2 for all time.  margin =
    min_t eps_hat - bol_chain_bound(beta).
    """
    series = []
    for t, f in snapshots:
        chart = f.chart
        if chart.kind != "cylindrical":
            raise ValueError("persistence tracking expects a cylindrical chart")
        ell = chart.xs[:, None] * np.ones((1, chart.ny))
        dom = make_domain(chart, ell <= ell_ref, level=(ell, ell_ref))
        L = boundary_length(f, dom)
        rho = L / (2.0 * math.pi)
        K = gauss_curvature(f).values
        max_K = float(K[1:-1].max())
        series.append({"t": float(t), "max_K": max_K, "rho": float(rho),
                       "eps_hat": float(max_K * rho * rho)})
    eps = [row["eps_hat"] for row in series]
    bound = bol_chain_bound(beta)
    margin = min(eps) - bound
    worst_t = series[int(np.argmin(eps))]["t"]
    return DiagnosticReport(
        "curvature_persistence", float(margin), 0.0, worst_t, None,
        {"bound": bound, "beta": beta, "alpha": alpha, "series": series},
    )
