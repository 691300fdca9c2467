"""Discrete conformal geometry on rectangular charts.

A chart is a uniform grid on [x0, x1] x [y0, y1]; planar charts are bounded
rectangles of the z-plane, cylindrical charts identify y with the angle theta
(period exactly 2 pi, no duplicated seam node) and x with the log-radial
coordinate ell.  A scalar field u on a chart represents the metric
e^{2u} |dz|^2.  Everything downstream -- Laplacians, curvature, graph
geodesics, areas, contour lengths -- consumes these two types.

Cylindrical cigar charts are truncated at ell_min; the missing tip cap is
accounted for by a closed-form distance stub carried on the chart, and a
full ell_min row in a mask is read as "contains the tip".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra
from skimage.measure import find_contours

TWO_PI = 2.0 * math.pi

__all__ = [
    "ConformalChart",
    "ScalarField",
    "Domain",
    "DisconnectedChartError",
    "planar_chart",
    "cylindrical_chart",
    "laplacian",
    "gauss_curvature",
    "distance_field",
    "geodesic_distance",
    "geodesic_ball",
    "make_domain",
    "full_domain",
    "area",
    "boundary_length",
    "save_field",
    "load_field",
]


class DisconnectedChartError(RuntimeError):
    """Raised when a graph-distance target cannot be reached from the sources."""


@dataclass(frozen=True)
class ConformalChart:
    kind: str  # "planar" | "cylindrical"
    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int
    tip_node: Optional[tuple[int, int]] = None  # planar charts may mark the tip
    tip_stub: Optional[float] = None  # cylindrical: distance from tip to the ell_min edge

    def __post_init__(self) -> None:
        if self.kind not in ("planar", "cylindrical"):
            raise ValueError(f"unknown chart kind {self.kind!r}")
        if self.nx < 8 or self.ny < 8:
            raise ValueError("charts need at least 8 nodes per axis")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("chart bounds must be increasing")
        if self.kind == "cylindrical" and abs((self.y1 - self.y0) - TWO_PI) > 1e-12:
            raise ValueError("cylindrical charts must span exactly 2 pi in theta")
        if self.tip_node is not None and self.kind != "planar":
            raise ValueError("tip_node only applies to planar charts")
        if self.tip_stub is not None and self.kind != "cylindrical":
            raise ValueError("tip_stub only applies to cylindrical charts")

    @property
    def periodic_y(self) -> bool:
        return self.kind == "cylindrical"

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def hy(self) -> float:
        n = self.ny if self.periodic_y else self.ny - 1
        return (self.y1 - self.y0) / n

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def zgrid(self) -> np.ndarray:
        """Complex coordinates of the nodes; cylindrical charts map through e^{l+i theta}."""
        x, y = self.grid()
        if self.kind == "planar":
            return x + 1j * y
        return np.exp(x + 1j * y)


def planar_chart(x0, x1, y0, y1, nx, ny, tip_node=None) -> ConformalChart:
    return ConformalChart("planar", x0, x1, y0, y1, nx, ny, tip_node=tip_node)


def cylindrical_chart(ell_min, ell_max, nx, ny, tip_stub=None) -> ConformalChart:
    return ConformalChart(
        "cylindrical", ell_min, ell_max, 0.0, TWO_PI, nx, ny, tip_stub=tip_stub
    )


@dataclass
class ScalarField:
    chart: ConformalChart
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.chart.nx, self.chart.ny):
            raise ValueError(
                f"field shape {self.values.shape} does not match chart "
                f"({self.chart.nx}, {self.chart.ny})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def copy(self) -> "ScalarField":
        return ScalarField(self.chart, self.values.copy())


# ------------------------------------------------------------------ stencils

def _d2_axis(v: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    """Second derivative along one axis: centered inside, one-sided second order
    at non-periodic edges, wrap-around when periodic."""
    if periodic:
        return (np.roll(v, -1, axis) - 2.0 * v + np.roll(v, 1, axis)) / h**2
    out = np.empty_like(v)
    s = [slice(None)] * v.ndim

    def sl(a, b=None):
        t = list(s)
        t[axis] = slice(a, b) if b is not None or a is not None else slice(None)
        return tuple(t)

    def at(i):
        t = list(s)
        t[axis] = i
        return tuple(t)

    out[sl(1, -1)] = (v[sl(2, None)] - 2.0 * v[sl(1, -1)] + v[sl(None, -2)]) / h**2
    out[at(0)] = (2 * v[at(0)] - 5 * v[at(1)] + 4 * v[at(2)] - v[at(3)]) / h**2
    out[at(-1)] = (2 * v[at(-1)] - 5 * v[at(-2)] + 4 * v[at(-3)] - v[at(-4)]) / h**2
    return out


def laplacian(f: ScalarField) -> ScalarField:
    """Coordinate (flat) 5-point Laplacian of the field."""
    c = f.chart
    lap = _d2_axis(f.values, c.hx, 0, False) + _d2_axis(f.values, c.hy, 1, c.periodic_y)
    return ScalarField(c, lap)


def gauss_curvature(f: ScalarField) -> ScalarField:
    """Gauss curvature K = -e^{-2u} (coordinate Laplacian of u)."""
    lap = laplacian(f).values
    return ScalarField(f.chart, -np.exp(-2.0 * f.values) * lap)


# ------------------------------------------------------------------ graph geodesics

# axis, diagonal, and knight moves: the wider stencil cuts the worst-case
# metrication overestimate from 8.24% (8 neighbors) to 2.8%
_OFFSETS = (
    (1, 0), (0, 1), (1, 1), (1, -1),
    (1, 2), (2, 1), (1, -2), (2, -1),
)


def _metric_graph(f: ScalarField) -> sp.csr_matrix:
    c = f.chart
    nx, ny, hx, hy = c.nx, c.ny, c.hx, c.hy
    w_node = np.exp(f.values)
    rows, cols, data = [], [], []
    ii = np.arange(nx)[:, None]
    jj = np.arange(ny)[None, :]
    for di, dj in _OFFSETS:
        step = math.hypot(di * hx, dj * hy)
        i2 = ii + di
        j2 = jj + dj
        if c.periodic_y:
            j2 = j2 % ny
            valid = (i2 < nx) & np.ones_like(j2, dtype=bool)
        else:
            valid = (i2 < nx) & (j2 >= 0) & (j2 < ny)
        i2c = np.clip(i2, 0, nx - 1)
        j2c = np.clip(j2, 0, ny - 1)
        a = (ii * ny + jj) * np.ones_like(j2)
        b = i2c * ny + j2c
        wgt = 0.5 * (w_node[ii, jj] + w_node[i2c, j2c]) * step
        rows.append(a[valid])
        cols.append(b[valid])
        data.append(wgt[valid])
    n = nx * ny
    g = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return g.tocsr()


def _tip_sources(f: ScalarField) -> tuple[list[int], float]:
    c = f.chart
    if c.kind == "planar":
        if c.tip_node is None:
            raise ValueError("planar chart has no marked tip node")
        i, j = c.tip_node
        return [i * c.ny + j], 0.0
    if c.tip_stub is None:
        raise ValueError("cylindrical chart is not tip-capped (no tip_stub)")
    return [0 * c.ny + j for j in range(c.ny)], c.tip_stub


def distance_field(f: ScalarField, source) -> np.ndarray:
    """Graph geodesic distance from a node, a list of nodes, or "tip" to every node."""
    c = f.chart
    offset = 0.0
    if isinstance(source, str) and source == "tip":
        idx, offset = _tip_sources(f)
    elif isinstance(source, tuple) and len(source) == 2 and np.isscalar(source[0]):
        idx = [source[0] * c.ny + source[1]]
    else:
        idx = [i * c.ny + j for (i, j) in source]
    g = _metric_graph(f)
    d = _csgraph_dijkstra(g, directed=False, indices=idx, min_only=True)
    return d.reshape(c.nx, c.ny) + offset


def geodesic_distance(f: ScalarField, source, target: tuple[int, int]) -> float:
    """Metric length of the shortest grid path from source (node/list/"tip") to target."""
    d = distance_field(f, source)[target]
    if not np.isfinite(d):
        raise DisconnectedChartError("target is not reachable from the source set")
    return float(d)


# ------------------------------------------------------------------ domains

@dataclass
class Domain:
    chart: ConformalChart
    mask: np.ndarray
    simply_connected: bool
    truncated: bool
    # optional continuous indicator (values, iso) whose iso-level is the
    # domain boundary; gives a subgrid contour for boundary_length
    level: Optional[tuple[np.ndarray, float]] = None


def _shift_or(region: np.ndarray, allowed: np.ndarray, wrap_y: bool, conn8: bool) -> np.ndarray:
    grown = region.copy()
    # axis 0 (never wraps: cylinder ends / planar edges)
    grown[1:, :] |= region[:-1, :]
    grown[:-1, :] |= region[1:, :]
    if wrap_y:
        grown |= np.roll(region, 1, axis=1)
        grown |= np.roll(region, -1, axis=1)
    else:
        grown[:, 1:] |= region[:, :-1]
        grown[:, :-1] |= region[:, 1:]
    if conn8:
        if wrap_y:
            r = np.roll(region, 1, axis=1)
            grown[1:, :] |= r[:-1, :]
            grown[:-1, :] |= r[1:, :]
            r = np.roll(region, -1, axis=1)
            grown[1:, :] |= r[:-1, :]
            grown[:-1, :] |= r[1:, :]
        else:
            grown[1:, 1:] |= region[:-1, :-1]
            grown[1:, :-1] |= region[:-1, 1:]
            grown[:-1, 1:] |= region[1:, :-1]
            grown[:-1, :-1] |= region[1:, 1:]
    return grown & allowed


def _flood(seeds: np.ndarray, allowed: np.ndarray, wrap_y: bool, conn8: bool) -> np.ndarray:
    region = seeds & allowed
    while True:
        grown = _shift_or(region, allowed, wrap_y, conn8)
        if not np.any(grown & ~region):
            return region
        region |= grown


def _classify(chart: ConformalChart, mask: np.ndarray) -> tuple[bool, bool]:
    """(simply_connected, truncated) for a node mask.

    Tip-capped cylindrical charts treat the sub-chart cap as belonging to the
    mask when the whole ell_min row is masked, and to the complement otherwise.
    """
    wrap = chart.periodic_y
    nx, ny = chart.nx, chart.ny
    if not mask.any():
        return False, False
    tip_capped = chart.kind == "cylindrical" and chart.tip_stub is not None
    tip_row_full = tip_capped and bool(mask[0, :].all())

    edge = np.zeros_like(mask)
    edge[0, :] = True
    edge[-1, :] = True
    if not wrap:
        edge[:, 0] = True
        edge[:, -1] = True
    outer_edge = edge.copy()
    if tip_capped:
        outer_edge[0, :] = False  # the ell_min side is capped, not open

    truncated = bool((mask & outer_edge).any())

    # mask connectivity (8-connected)
    seed = np.zeros_like(mask)
    first = np.argwhere(mask)[0]
    seed[first[0], first[1]] = True
    comp = _flood(seed, mask, wrap, conn8=True)
    connected = bool(comp.sum() == mask.sum())

    # complement connectivity to the open boundary (4-connected)
    comp_mask = ~mask
    seeds = comp_mask & outer_edge
    reached = _flood(seeds, comp_mask, wrap, conn8=False)
    if tip_capped and not tip_row_full and (reached[0, :] & comp_mask[0, :]).any():
        # the cap joins every unmasked ell_min node into one complement piece
        row_seeds = np.zeros_like(mask)
        row_seeds[0, :] = comp_mask[0, :]
        reached = _flood(reached | row_seeds, comp_mask, wrap, conn8=False)
    no_holes = bool(reached.sum() == comp_mask.sum())
    return connected and no_holes, truncated


def make_domain(
    chart: ConformalChart,
    mask: np.ndarray,
    level: Optional[tuple[np.ndarray, float]] = None,
) -> Domain:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (chart.nx, chart.ny):
        raise ValueError("mask shape does not match chart")
    simply, trunc = _classify(chart, mask)
    return Domain(chart, mask, simply, trunc, level)


def full_domain(chart: ConformalChart) -> Domain:
    mask = np.ones((chart.nx, chart.ny), dtype=bool)
    return Domain(chart, mask, True, True, None)


def geodesic_ball(f: ScalarField, center, radius: float) -> Domain:
    """Nodes within graph distance radius of the center (a node or "tip")."""
    if radius <= 0:
        raise ValueError("ball radius must be positive")
    d = distance_field(f, center)
    mask = d <= radius
    dom = make_domain(f.chart, mask, level=(d, radius))
    return dom


# ------------------------------------------------------------------ measures

def area(f: ScalarField, dom: Domain) -> float:
    """Midpoint-rule area of the masked region: sum of e^{2u} over node cells.

    Nodes on non-periodic chart edges own half cells (quarter cells at
    corners) so that the full flat unit square integrates to exactly 1.
    """
    c = f.chart
    wx = np.ones(c.nx)
    wx[0] = wx[-1] = 0.5
    wy = np.ones(c.ny)
    if not c.periodic_y:
        wy[0] = wy[-1] = 0.5
    w = wx[:, None] * wy[None, :] * (c.hx * c.hy)
    return float(np.sum(np.exp(2.0 * f.values[dom.mask]) * w[dom.mask]))


def _pad_theta(arr: np.ndarray) -> np.ndarray:
    return np.concatenate([arr, arr[:, :1]], axis=1)


def boundary_length(f: ScalarField, dom: Domain) -> float:
    """Metric length of the domain boundary.

    The boundary polyline is the marching-squares contour of the domain's
    level function (its 0.5-level mask indicator when no level data is
    attached), and each segment is weighted by e^u at its midpoint.
    """
    if dom.truncated:
        raise ValueError("boundary_length needs a domain clear of the chart boundary")
    c = f.chart
    if dom.mask.sum() == 1:
        i, j = np.argwhere(dom.mask)[0]
        return float(np.exp(f.values[i, j]) * 2.0 * (c.hx + c.hy))
    if dom.level is not None:
        arr, iso = dom.level
        arr = np.asarray(arr, dtype=float)
        finite = np.isfinite(arr)
        if not finite.all():
            big = 10.0 * abs(iso) + 10.0 * np.abs(arr[finite]).max()
            arr = np.where(finite, arr, big)
    else:
        arr, iso = dom.mask.astype(float), 0.5
    u = f.values
    if c.periodic_y:
        arr = _pad_theta(arr)
        u = _pad_theta(u)
    total = 0.0
    for contour in find_contours(arr, iso):
        seg = np.diff(contour, axis=0)
        phys = np.hypot(seg[:, 0] * c.hx, seg[:, 1] * c.hy)
        mids = 0.5 * (contour[:-1] + contour[1:])
        umid = map_coordinates(u, [mids[:, 0], mids[:, 1]], order=1, mode="nearest")
        total += float(np.sum(phys * np.exp(umid)))
    return total


# ------------------------------------------------------------------ snapshots

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save_field(f: ScalarField, path, time: float) -> None:
    """Write the field as text: header (kind, bounds, shape, time) + row-major values.

    Values carry 17 significant digits, enough for a bit-exact round trip.
    """
    c = f.chart
    lines = [
        "riccilab field 1",
        f"kind {c.kind}",
        f"bounds {_fmt(c.x0)} {_fmt(c.x1)} {_fmt(c.y0)} {_fmt(c.y1)}",
        f"shape {c.nx} {c.ny}",
        f"time {_fmt(time)}",
    ]
    for row in f.values:
        lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path) -> tuple[ScalarField, float]:
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != "riccilab field 1":
            raise ValueError(f"not a field snapshot: {path}")
        kind = fh.readline().split()[1]
        x0, x1, y0, y1 = (float(t) for t in fh.readline().split()[1:])
        nx, ny = (int(t) for t in fh.readline().split()[1:])
        time = float(fh.readline().split()[1])
        values = np.loadtxt(fh, dtype=float, ndmin=2)
    if kind == "cylindrical":
        # reconstruct an exact 2 pi span in case of decimal round trip
        chart = ConformalChart(kind, x0, x1, y0, y0 + TWO_PI, nx, ny)
    else:
        chart = ConformalChart(kind, x0, x1, y0, y1, nx, ny)
    return ScalarField(chart, values), time
