"""Rotationally symmetric spheres: a 1D solver sharp enough for extinction timing.

The surface is split at its symmetry circle (the equator of a round sphere,
the mid-cylinder of a capped one).  One half is discretized on a composite
grid: the polar cap in disc gauge U(s) on uniform s in [0, 1], everything
past the cap joint in log gauge v(xi) = U + xi on uniform xi = log s.  The
log gauge is what keeps long thin necks representable: a cylinder of length
2/r occupies xi in [0, 2/r] with an O(1) field, where a disc-gauge grid
would need e^{2/r} nodes.

Both gauges obey dx/dt = e^{-2x} (row operator), so one sparse operator L
plus a constant vector c drives the shared backward-Euler Newton core.  The
grid extends a short band past the symmetry circle; the last node closes the
system through a reflection ghost, and the band doubles as an overlap on
which the two mirror-image charts can be checked against each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .. import exact
from ..flow import StepFailure, backward_euler_newton

__all__ = [
    "RadialSystem",
    "RadialResult",
    "run_radial",
    "disc_ball_observables",
    "area_decay_slope",
]

EIGHT_PI = 8.0 * math.pi


class RadialSystem:
    """Operator, quadrature, and initial data for one symmetric sphere profile."""

    def __init__(self, model: exact.SphereModel, n_cap: int = 160,
                 h_xi: Optional[float] = None, overlap: int = 20) -> None:
        self.model = model
        self.n_cap = int(n_cap)
        if self.n_cap < 16:
            raise ValueError("cap grid too coarse")
        self.h_s = 1.0 / self.n_cap
        h_xi = self.h_s if h_xi is None else float(h_xi)
        if model.kind == "round":
            self.xi_sym = 0.0
            n_neck = 0
        else:
            self.xi_sym = 1.0 / model.radius  # mid-cylinder
            n_neck = max(1, round(self.xi_sym / h_xi))
        self.h_xi = self.xi_sym / n_neck if n_neck else h_xi
        self.overlap = int(overlap)
        if self.overlap < 2:  # the ghost row and twin checks need a real band
            raise ValueError("overlap band needs at least two nodes")
        self.n_xi = n_neck + self.overlap
        self.s = self.h_s * np.arange(self.n_cap + 1)
        self.xi = self.h_xi * np.arange(1, self.n_xi + 1)
        self.n = self.n_cap + 1 + self.n_xi
        self.i_sym = self.n_cap + n_neck  # node sitting on the symmetry circle
        self.L, self.c = self._assemble()
        self.cache: dict = {}

    # -------------------------------------------------------------- assembly

    def _interp_row(self, s_target: float) -> tuple[list[int], list[float]]:
        """Linear interpolation of the disc-gauge value at s_target from cap nodes."""
        pos = s_target / self.h_s
        i0 = min(int(pos), self.n_cap - 1)
        w1 = pos - i0
        return [i0, i0 + 1], [1.0 - w1, w1]

    def _assemble(self) -> tuple[sp.csr_matrix, np.ndarray]:
        n, h, hx = self.n, self.h_s, self.h_xi
        rows, cols, data = [], [], []
        c = np.zeros(n)

        def add(i, j, w):
            rows.append(i)
            cols.append(j)
            data.append(w)

        # pole: the radial Laplacian limit 2 U'' doubles the second difference
        add(0, 0, -4.0 / h**2)
        add(0, 1, 4.0 / h**2)
        # cap interior: U'' + U'/s
        for i in range(1, self.n_cap):
            si = self.s[i]
            add(i, i - 1, 1.0 / h**2 - 1.0 / (2.0 * si * h))
            add(i, i, -2.0 / h**2)
            add(i, i + 1, 1.0 / h**2 + 1.0 / (2.0 * si * h))
        # cap joint s=1: right neighbor lives on the xi grid at s = e^{hx},
        # carrying u = v - xi; three-point stencil on unequal spacings
        i = self.n_cap
        a, b = h, math.exp(hx) - 1.0
        # second derivative
        add(i, i - 1, 2.0 * b / (a * b * (a + b)))
        add(i, i, -2.0 * (a + b) / (a * b * (a + b)))
        add(i, i + 1, 2.0 * a / (a * b * (a + b)))
        c[i] += 2.0 * a / (a * b * (a + b)) * (-hx)
        # first derivative / s at s=1
        add(i, i - 1, -(b / a) / (a + b))
        add(i, i, (b / a - a / b) / (a + b))
        add(i, i + 1, (a / b) / (a + b))
        c[i] += (a / b) / (a + b) * (-hx)
        # xi rows: v_xixi, left neighbor of the first one is the joint (xi=0, v=U)
        for k in range(self.n_xi - 1):
            j = self.n_cap + 1 + k
            add(j, j - 1, 1.0 / hx**2)
            add(j, j, -2.0 / hx**2)
            add(j, j + 1, 1.0 / hx**2)
        # last node: ghost one step beyond, filled by reflection across xi_sym
        j = self.n - 1
        add(j, j - 1, 1.0 / hx**2)
        add(j, j, -2.0 / hx**2)
        xi_r = 2.0 * self.xi_sym - (self.xi[-1] + hx)
        w_ghost = 1.0 / hx**2
        if xi_r >= self.xi[0] - 1e-12:
            k = round((xi_r - self.xi[0]) / hx)
            if abs(self.xi[k] - xi_r) > 1e-9:
                raise AssertionError("reflected ghost missed the xi grid")
            add(j, self.n_cap + 1 + k, w_ghost)
        else:
            # reflection lands on the cap: v(xi_r) = U(e^{xi_r}) + xi_r
            idxs, ws = self._interp_row(math.exp(xi_r))
            for ii, ww in zip(idxs, ws):
                add(j, ii, w_ghost * ww)
            c[j] += w_ghost * xi_r
        L = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        return L, c

    # -------------------------------------------------------------- field views

    def initial(self) -> np.ndarray:
        x = np.empty(self.n)
        x[: self.n_cap + 1] = exact.sphere_u(self.model, self.s)
        if self.n_xi:
            x[self.n_cap + 1:] = exact.sphere_u(self.model, np.exp(self.xi)) + self.xi
        return x

    def cap_values(self, x: np.ndarray) -> np.ndarray:
        return x[: self.n_cap + 1]

    def xi_values(self, x: np.ndarray) -> np.ndarray:
        return x[self.n_cap + 1:]

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return np.exp(-2.0 * x) * (self.L @ x + self.c)

    def max_abs_K(self, x: np.ndarray) -> float:
        return float(np.abs(self.rhs(x)).max())  # K = -e^{-2x} (Lx+c) nodewise

    def area(self, x: np.ndarray) -> float:
        """Total surface area: twice the half up to the symmetry circle."""
        cap = np.trapezoid(np.exp(2.0 * self.cap_values(x)) * self.s, dx=self.h_s)
        if self.i_sym > self.n_cap:
            m = self.i_sym - self.n_cap  # neck nodes up to and including xi_sym
            vals = np.concatenate(([x[self.n_cap]], self.xi_values(x)[:m]))
            neck = np.trapezoid(np.exp(2.0 * vals), dx=self.h_xi)
        else:
            neck = 0.0
        return 2.0 * 2.0 * math.pi * (cap + neck)

    def twin_consistency(self, x: np.ndarray) -> float:
        """Mismatch between the evolved overlap band and the mirror chart's view.

        The band past the symmetry circle should equal the reflection of the
        band before it; the max difference measures cross-chart consistency.
        """
        worst = 0.0
        for k in range(self.n_cap + 1 + max(0, self.i_sym - self.n_cap), self.n):
            xi_k = self.xi[k - self.n_cap - 1]
            xi_r = 2.0 * self.xi_sym - xi_k
            if xi_r >= self.xi[0] - 1e-12:
                pos = (xi_r - self.xi[0]) / self.h_xi
                k0 = min(int(pos), self.n_xi - 2)
                w = pos - k0
                v_r = (1 - w) * self.xi_values(x)[k0] + w * self.xi_values(x)[k0 + 1]
            else:
                idxs, ws = self._interp_row(math.exp(xi_r))
                v_r = ws[0] * x[idxs[0]] + ws[1] * x[idxs[1]] + xi_r
            worst = max(worst, abs(float(x[k]) - float(v_r)))
        return worst

    def step(self, x: np.ndarray, dt: float, newton_tol: float = 1e-10) -> np.ndarray:
        return backward_euler_newton(
            x, self.L, self.c, dt, tol=newton_tol, max_newton=12, cache=self.cache
        )


# ------------------------------------------------------------------ observables

def disc_ball_observables(system: RadialSystem, x: np.ndarray) -> dict:
    """Unit ball (in the initial metric) around the mid-cylinder point.

    Valid for capped models: the ball is {r^2((xi - xi_m)^2 + theta^2) <= 1},
    which stays inside the cylinder.  Returns its current area and the sup of
    the pull-back log-factor uhat = v - log r relative to the initial neck.
    """
    if system.model.kind != "capped":
        raise ValueError("the sucked-out-disc observables need a capped model")
    r = system.model.radius
    xi_m = system.xi_sym
    m = system.i_sym - system.n_cap
    xi = np.concatenate(([0.0], system.xi[:m]))
    v = np.concatenate(([x[system.n_cap]], system.xi_values(x)[:m]))
    gap2 = 1.0 / r**2 - (xi - xi_m) ** 2
    width = 2.0 * np.minimum(math.pi, np.sqrt(np.maximum(gap2, 0.0)))
    half_area = float(np.trapezoid(np.exp(2.0 * v) * width, dx=system.h_xi))
    inside = gap2 > 0.0
    sup_uhat = float((v[inside] - math.log(r)).max()) if inside.any() else -math.inf
    return {"area": 2.0 * half_area, "sup_uhat": sup_uhat}


# ------------------------------------------------------------------ run loop

@dataclass
class RadialResult:
    system: RadialSystem
    times: np.ndarray
    areas: np.ndarray
    max_K: np.ndarray
    min_K: np.ndarray
    snapshots: list
    status: str  # "extinct" | "completed" | "failed"
    extinction_time: Optional[float] = None
    ball_series: Optional[list] = None
    final: Optional[np.ndarray] = None
    message: str = ""


def run_radial(
    system: RadialSystem,
    x0: Optional[np.ndarray] = None,
    t_end: Optional[float] = None,
    rel_target: float = 0.01,
    stop_area_fraction: float = 1e-3,
    snapshot_every: Optional[float] = None,
    track_ball: bool = False,
    max_steps: int = 200_000,
) -> RadialResult:
    """March the profile with curvature-adaptive implicit steps.

    Stops when the area falls under stop_area_fraction of its initial value
    (status "extinct"; the extinction time is completed by the exact area
    decay rate, dA/dt = -8 pi) or at t_end (status "completed").
    """
    x = system.initial() if x0 is None else np.asarray(x0, dtype=float).copy()
    t = 0.0
    a0 = system.area(x)
    K = -system.rhs(x)
    times, areas = [0.0], [a0]
    maxk, mink = [float(np.abs(K).max())], [float(K.min())]
    snaps = [(0.0, x.copy())]
    next_snap = snapshot_every
    balls = [dict(t=0.0, **disc_ball_observables(system, x))] if track_ball else None
    status, message, t_ext = "completed", "", None
    for _ in range(max_steps):
        if t_end is not None and t >= t_end - 1e-12 * max(1.0, abs(t_end)):
            break
        dt = rel_target / maxk[-1]
        if t_end is not None:
            dt = min(dt, t_end - t)
        if next_snap is not None:
            dt = min(dt, next_snap - t) if next_snap > t else dt
        try:
            x = system.step(x, dt)
        except StepFailure as err:
            status, message = "failed", str(err)
            break
        if not np.all(np.isfinite(x)):
            status, message = "failed", "non-finite profile"
            break
        t += dt
        a = system.area(x)
        times.append(t)
        areas.append(a)
        K = -system.rhs(x)
        maxk.append(float(np.abs(K).max()))
        mink.append(float(K.min()))
        if track_ball:
            balls.append(dict(t=t, **disc_ball_observables(system, x)))
        if next_snap is not None and t >= next_snap - 1e-12:
            snaps.append((t, x.copy()))
            next_snap += snapshot_every
        if a < stop_area_fraction * a0:
            status = "extinct"
            t_ext = t + a / EIGHT_PI  # finish off by the exact decay rate
            break
    else:
        status, message = "failed", "step budget exceeded"
    if snaps[-1][0] != t:
        snaps.append((t, x.copy()))
    return RadialResult(
        system, np.asarray(times), np.asarray(areas), np.asarray(maxk),
        np.asarray(mink), snaps, status, t_ext, balls, x, message,
    )


def area_decay_slope(result: RadialResult) -> float:
    """Least-squares slope of area versus time over the middle half of the run."""
    t, a = result.times, result.areas
    t1, t2 = t[-1] * 0.25, t[-1] * 0.75
    sel = (t >= t1) & (t <= t2)
    if sel.sum() < 2:
        raise ValueError("not enough samples in the middle of the run")
    coef = np.polyfit(t[sel], a[sel], 1)
    return float(coef[0])
