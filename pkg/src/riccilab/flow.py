"""Time integration of the conformal-gauge flow du/dt = e^{-2u} (coordinate Laplacian of u).

Two steppers share one boundary treatment: boundary nodes are pinned each
step (to an exact reference trajectory or to their initial values), or the
chart wraps in both axes and nothing is pinned (flat-torus runs).  The
explicit scheme is forward Euler under a diffusion CFL bound that shrinks
with min e^{2u}; the implicit scheme is backward Euler solved by damped
Newton with a sparse direct factorization, and is the only practical choice
on charts that reach deep into a tip region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import ConformalChart, ScalarField, full_domain, area, gauss_curvature

__all__ = [
    "BoundaryCondition",
    "FlowState",
    "StepControl",
    "StepFailure",
    "RunResult",
    "RunLogger",
    "boundary_mask",
    "stable_dt",
    "backward_euler_newton",
    "run",
]

_BC_KINDS = ("dirichlet_exact", "dirichlet_frozen", "periodic_only")


class StepFailure(RuntimeError):
    """A time step could not be completed (divergent Newton, NaN, vanishing dt)."""


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str
    # dirichlet_exact: full-grid reference values as a function of time
    reference: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self) -> None:
        if self.kind not in _BC_KINDS:
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "dirichlet_exact" and self.reference is None:
            raise ValueError("dirichlet_exact needs a reference trajectory")


@dataclass
class FlowState:
    field: ScalarField
    time: float = 0.0

    def copy(self) -> "FlowState":
        return FlowState(self.field.copy(), self.time)


@dataclass
class StepControl:
    scheme: str = "explicit"  # "explicit" | "implicit"
    dt: Optional[float] = None  # fixed step; None picks one per step
    cfl_safety: float = 0.8
    rel_target: float = 0.02  # implicit auto step: dt = rel_target / max |K|
    newton_tol: float = 1e-10
    max_newton: int = 12
    max_steps: int = 2_000_000

    def __post_init__(self) -> None:
        if self.scheme not in ("explicit", "implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class RunResult:
    state: FlowState
    status: str  # "completed" | "extinct" | "failed"
    snapshots: list
    steps: int
    message: str = ""


def boundary_mask(chart: ConformalChart, bc: BoundaryCondition) -> np.ndarray:
    """Nodes pinned by the boundary condition."""
    m = np.zeros((chart.nx, chart.ny), dtype=bool)
    if bc.kind == "periodic_only":
        return m
    m[0, :] = True
    m[-1, :] = True
    if not chart.periodic_y:
        m[:, 0] = True
        m[:, -1] = True
    return m


def stable_dt(f: ScalarField, safety: float = 0.8) -> float:
    """Largest forward-Euler step kept stable by the diffusion CFL condition."""
    c = f.chart
    denom = 2.0 * (c.hx**-2 + c.hy**-2)
    return safety * float(np.exp(2.0 * f.values.min())) / denom


def _wrap_x(bc: BoundaryCondition) -> bool:
    return bc.kind == "periodic_only"


def _rhs(values: np.ndarray, chart: ConformalChart, bc: BoundaryCondition) -> np.ndarray:
    """e^{-2u} * 5-point Laplacian; garbage on pinned rows is overwritten later."""
    hx2, hy2 = chart.hx**2, chart.hy**2
    with np.errstate(over="ignore", invalid="ignore"):
        lap = (np.roll(values, 1, 0) - 2 * values + np.roll(values, -1, 0)) / hx2
        lap += (np.roll(values, 1, 1) - 2 * values + np.roll(values, -1, 1)) / hy2
        return np.exp(-2.0 * values) * lap


def _apply_bc(values: np.ndarray, bmask: np.ndarray, bc: BoundaryCondition,
              t: float, frozen: np.ndarray) -> None:
    if bc.kind == "dirichlet_exact":
        values[bmask] = np.asarray(bc.reference(t), dtype=float)[bmask]
    elif bc.kind == "dirichlet_frozen":
        values[bmask] = frozen[bmask]


# ------------------------------------------------------------------ implicit machinery

def _assemble_laplacian(chart: ConformalChart, wrap_x: bool) -> sp.csr_matrix:
    nx, ny = chart.nx, chart.ny
    hx2, hy2 = chart.hx**2, chart.hy**2
    n = nx * ny
    ii = np.repeat(np.arange(nx), ny)
    jj = np.tile(np.arange(ny), nx)
    rows, cols, data = [np.arange(n)], [np.arange(n)], [np.full(n, -2.0 / hx2 - 2.0 / hy2)]
    for di, dj, w in ((1, 0, 1 / hx2), (-1, 0, 1 / hx2), (0, 1, 1 / hy2), (0, -1, 1 / hy2)):
        i2 = ii + di
        j2 = jj + dj
        if di != 0 and wrap_x:
            i2 = i2 % nx
        if dj != 0 and chart.periodic_y:
            j2 = j2 % ny
        ok = (i2 >= 0) & (i2 < nx) & (j2 >= 0) & (j2 < ny)
        rows.append((ii * ny + jj)[ok])
        cols.append((i2 * ny + j2)[ok])
        data.append(np.full(ok.sum(), w))
    return sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


class _ImplicitWorkspace:
    def __init__(self, chart: ConformalChart, bc: BoundaryCondition) -> None:
        bmask = boundary_mask(chart, bc)
        flat_b = bmask.ravel()
        L = _assemble_laplacian(chart, _wrap_x(bc))
        self.int_idx = np.flatnonzero(~flat_b)
        self.bnd_idx = np.flatnonzero(flat_b)
        self.L_ii = L[self.int_idx][:, self.int_idx].tocsr()
        self.L_ib = L[self.int_idx][:, self.bnd_idx].tocsr()
        self.bmask = bmask
        self.shape = (chart.nx, chart.ny)
        self.cache: dict = {}


def backward_euler_newton(
    u_old: np.ndarray,
    L: sp.csr_matrix,
    b: np.ndarray,
    dt: float,
    tol: float = 1e-10,
    max_newton: int = 12,
    b_old: Optional[np.ndarray] = None,
    cache: Optional[dict] = None,
) -> np.ndarray:
    """Solve u = u_old + dt e^{-2u} (L u + b) by damped Newton.

    L acts on the unknown vector; b collects pinned-node contributions at the
    new time.  The forward predictor must see the pinned values u_old was
    computed with (b_old) or it manufactures a spurious boundary spike.
    A caller-held cache reuses the Jacobian factorization across steps; the
    residual test keeps that an optimization, never an accuracy change.
    """
    n = len(u_old)
    eye = sp.identity(n, format="csr")

    def residual(v):
        with np.errstate(over="ignore", invalid="ignore"):
            return v - u_old - dt * np.exp(-2.0 * v) * (L @ v + b)

    def factor(v):
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(-2.0 * v)
            Lv = L @ v + b
        J = eye + sp.diags(2.0 * dt * e * Lv) - sp.diags(dt * e) @ L
        try:
            return splu(J.tocsc())
        except RuntimeError as err:
            raise StepFailure(f"linear solve failed: {err}") from err

    # evaluating dt e^{-2u}(Lu+b) carries rounding noise of order
    # dt e^{-2u} eps (|L||u| + |b|); below that scale the residual is not
    # meaningful, so the convergence target must not sit under it
    with np.errstate(over="ignore", invalid="ignore"):
        absL = L.copy()
        absL.data = np.abs(absL.data)
        floor = float(
            np.max(np.exp(-2.0 * u_old) * (absL @ np.abs(u_old) + np.abs(b)))
        )
    floor *= 8.0 * dt * np.finfo(float).eps
    tol_eff = max(tol, floor) if np.isfinite(floor) else tol

    g = residual(u_old)
    r = float(np.abs(g).max())
    if r < tol_eff:  # keep exact fixed points bitwise
        return u_old
    g0, r0 = g, r
    bp = b if b_old is None else b_old
    u = u_old + dt * np.exp(-2.0 * u_old) * (L @ u_old + bp)  # forward predictor
    g = residual(u)
    r = float(np.abs(g).max())
    if not np.isfinite(r) or r >= r0:  # stiff step: predictor can overshoot badly
        u, g, r = u_old.copy(), g0, r0

    lu = cache.get("lu") if cache is not None else None
    lu_current = False  # whether lu was factored at the present iterate
    if lu is None:
        lu = factor(u)
        lu_current = True
    solves = 0
    while solves < max_newton + 4:
        if r < tol_eff:
            break
        delta = lu.solve(-g)
        solves += 1
        if not np.all(np.isfinite(delta)):
            raise StepFailure("linear solve returned non-finite update")
        # deep-tip residuals bottom out at dt e^{-2u} times rounding noise in
        # Lu, which can exceed tol; a negligible increment is also convergence
        if (
            float(np.abs(delta).max()) <= 1e-13 * (1.0 + float(np.abs(u).max()))
            and r < 1e-6
        ):
            break
        lam = 1.0
        accepted = False
        for _ in range(10):
            cand = u + lam * delta
            gc = residual(cand)
            rc = float(np.abs(gc).max())
            if np.isfinite(rc) and rc < r:
                slow = rc > 0.2 * r
                u, g, r = cand, gc, rc
                accepted = True
                lu_current = False
                break
            lam *= 0.5
        if not accepted:
            if lu_current:
                raise StepFailure("Newton line search stalled")
            lu, lu_current = factor(u), True  # stale factorization: rebuild
            continue
        if slow:  # contraction degraded: refresh at the new iterate
            lu, lu_current = factor(u), True
    else:
        if r >= tol_eff:
            raise StepFailure(
                f"Newton did not converge: residual {r:.3e} after {solves} solves"
            )
    if cache is not None:
        cache["lu"] = lu
    return u


def _step_explicit(values, chart, bc, dt, t_new, frozen):
    out = values + dt * _rhs(values, chart, bc)
    _apply_bc(out, boundary_mask(chart, bc), bc, t_new, frozen)
    return out


def _step_implicit(values, ws: _ImplicitWorkspace, bc, dt, t_new, frozen, control):
    flat = values.ravel()
    if bc.kind == "dirichlet_exact":
        full_new = np.asarray(bc.reference(t_new), dtype=float).ravel()
        u_bnd = full_new[ws.bnd_idx]
    elif bc.kind == "dirichlet_frozen":
        u_bnd = frozen.ravel()[ws.bnd_idx]
    else:
        u_bnd = np.empty(0)
    if len(u_bnd):
        b = ws.L_ib @ u_bnd
        b_old = ws.L_ib @ flat[ws.bnd_idx]
    else:
        b = np.zeros(len(ws.int_idx))
        b_old = b
    u_int = backward_euler_newton(
        flat[ws.int_idx], ws.L_ii, b, dt, control.newton_tol, control.max_newton,
        b_old=b_old, cache=ws.cache,
    )
    out = flat.copy()
    out[ws.int_idx] = u_int
    out[ws.bnd_idx] = u_bnd
    return out.reshape(ws.shape)


# ------------------------------------------------------------------ run loop

class RunLogger:
    """Appends one CSV row per logged step: bookkeeping scalars of the field."""

    HEADER = "step,t,dt,min_u,max_u,area,min_K,max_K"

    def __init__(self, path, every: int = 1) -> None:
        self.every = max(1, int(every))
        self._fh = open(path, "w")
        self._fh.write(self.HEADER + "\n")
        self._last_step = None

    def log(self, step: int, t: float, dt: float, f: ScalarField, force: bool = False) -> None:
        if not force and step % self.every != 0:
            return
        if step == self._last_step:
            return
        self._last_step = step
        K = gauss_curvature(f).values
        a = area(f, full_domain(f.chart))
        row = [step, t, dt, f.values.min(), f.values.max(), a, K.min(), K.max()]
        self._fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row))
        self._fh.write("\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _event_times(t0: float, t_end: float, every: Optional[float]) -> list[float]:
    if every is None or every <= 0:
        return [t_end]
    out = []
    k = 1
    while t0 + k * every < t_end - 1e-12 * max(1.0, abs(t_end)):
        out.append(t0 + k * every)
        k += 1
    out.append(t_end)
    return out


def run(
    state: FlowState,
    bc: BoundaryCondition,
    t_end: float,
    control: Optional[StepControl] = None,
    snapshot_every: Optional[float] = None,
    extinction_threshold: Optional[float] = None,
    logger: Optional[RunLogger] = None,
    observer: Optional[Callable[[FlowState], None]] = None,
) -> RunResult:
    """March the flow from state.time to t_end.

    Snapshots (copies of the field) are taken at the start, at every multiple
    of snapshot_every, and at the end.  The run stops early with status
    "extinct" when min e^{2u} falls below the extinction threshold, and with
    status "failed" when a step cannot be completed.
    """
    control = control or StepControl()
    st = state.copy()
    chart = st.field.chart
    if t_end < st.time:
        raise ValueError("t_end precedes the initial time")
    frozen = st.field.values.copy()
    ws = _ImplicitWorkspace(chart, bc) if control.scheme == "implicit" else None

    snapshots = []
    if snapshot_every is not None:
        snapshots.append((st.time, st.field.copy()))
    if observer is not None:
        observer(st)
    if logger is not None:
        logger.log(0, st.time, 0.0, st.field, force=True)

    steps = 0
    status = "completed"
    message = ""
    for target in _event_times(st.time, t_end, snapshot_every):
        while st.time < target - 1e-12 * max(1.0, abs(target)):
            if control.dt is not None:
                dt = control.dt
            elif control.scheme == "explicit":
                dt = stable_dt(st.field, control.cfl_safety)
            else:
                kmax = float(np.abs(gauss_curvature(st.field).values).max())
                dt = control.rel_target / kmax if kmax > 0 else target - st.time
            dt = min(dt, target - st.time)
            if target - st.time - dt < 1e-12 * max(1.0, dt):
                dt = target - st.time
            if dt < 1e-14:
                status, message = "failed", "time step underflow"
                break
            t_new = st.time + dt
            try:
                if control.scheme == "explicit":
                    new_vals = _step_explicit(st.field.values, chart, bc, dt, t_new, frozen)
                else:
                    new_vals = _step_implicit(st.field.values, ws, bc, dt, t_new, frozen, control)
            except StepFailure as err:
                status, message = "failed", str(err)
                break
            if not np.all(np.isfinite(new_vals)):
                status, message = "failed", "non-finite field values"
                break
            st.field.values = new_vals
            st.time = t_new
            steps += 1
            if logger is not None:
                logger.log(steps, st.time, dt, st.field)
            if (
                extinction_threshold is not None
                and float(np.exp(2.0 * st.field.values.min())) < extinction_threshold
            ):
                status = "extinct"
                break
            if steps >= control.max_steps:
                status, message = "failed", "step budget exceeded"
                break
        if status != "completed":
            break
        if abs(st.time - target) <= 1e-12 * max(1.0, abs(target)):
            st.time = target
        if snapshot_every is not None:
            snapshots.append((st.time, st.field.copy()))
        if observer is not None:
            observer(st)
    if logger is not None:
        logger.log(steps, st.time, 0.0, st.field, force=True)
    if status in ("extinct", "failed") and snapshot_every is not None:
        snapshots.append((st.time, st.field.copy()))
    return RunResult(st, status, snapshots, steps, message)
