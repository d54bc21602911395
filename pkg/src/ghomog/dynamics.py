"""Reachability of the differential inclusion ``x' in F(x)`` on the torus.

A cell ``c`` has an edge to ``c + o`` when the step ``o h`` is a feasible
direction of ``F_{1 -+ eta}`` at the centre of ``c``.  The inner graph
(radius ``1 - eta``) under-approximates what trajectories can do, the outer
graph (radius ``1 + eta``) over-approximates it.

A set is forward invariant exactly when no edge leaves it, so proper
invariant sets exist iff the digraph is not strongly connected.  Every
closed class (an SCC with no outgoing edge) is such a set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter
from scipy.sparse.csgraph import connected_components

from .fields import VectorField, field_constants
from .geometry import ControlSetQuery, control_gauge, gauge_membership, project_onto_control_set
from .torus import TorusGrid, stencil_offsets, torus_displacement, wrap_point

log = logging.getLogger(__name__)

__all__ = [
    "MarginError",
    "UnstableVerdictError",
    "MembershipError",
    "ReachabilityGraph",
    "InvariantSetReport",
    "BoundaryStats",
    "build_reachability_graph",
    "detect_invariant_sets",
    "integrate_trajectory",
    "boundary_normal_check",
    "verdict_stability",
]


class MarginError(ValueError):
    """The grid is too coarse for cell-centre evaluation to respect the margin."""


class UnstableVerdictError(RuntimeError):
    pass


class MembershipError(RuntimeError):
    """A selected velocity left the admissible set."""


@dataclass(frozen=True)
class ReachabilityGraph:
    grid: TorusGrid
    stencil: np.ndarray  # (E, N) offsets
    adjacency: np.ndarray  # (E, n) bool, indexed by source cell
    eta: float
    side: str

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum())

    def csr(self) -> sp.csr_matrix:
        grid = self.grid
        idx = grid.unravel(np.arange(grid.size))
        src, dst = [], []
        for e, o in enumerate(self.stencil):
            live = np.flatnonzero(self.adjacency[e])
            src.append(live)
            dst.append(grid.ravel(idx[live] + o))
        src = np.concatenate(src)
        dst = np.concatenate(dst)
        keep = src != dst
        data = np.ones(int(keep.sum()), dtype=np.int8)
        mat = sp.csr_matrix((data, (src[keep], dst[keep])), shape=(grid.size, grid.size))
        mat.sum_duplicates()
        return mat

    def successors(self, cell: int) -> np.ndarray:
        grid = self.grid
        c = grid.unravel(int(cell))
        live = self.stencil[self.adjacency[:, cell]]
        return grid.ravel(c + live)


def build_reachability_graph(vfield: VectorField, grid: TorusGrid, eta: float = 0.05,
                             side: str = "inner", stencil_radius: int = 2,
                             check_margin: bool = True) -> ReachabilityGraph:
    """Direction-feasibility digraph with radius ``1 - eta`` (inner) or ``1 + eta`` (outer).

    With ``check_margin`` the inner graph requires ``h R <= eta / L_V``;
    otherwise the edge set is still built but centre evaluation is only a
    heuristic along each edge.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if side not in ("inner", "outer"):
        raise ValueError("side must be 'inner' or 'outer'")
    if vfield.dimension != grid.dimension:
        raise ValueError("field and grid dimensions differ")
    if side == "inner":
        lip, _ = field_constants(vfield)
        reach = float(np.max(grid.spacing)) * stencil_radius
        if lip > 0 and reach > eta / lip:
            msg = f"h*R = {reach:.4g} exceeds eta/L_V = {eta / lip:.4g}"
            if check_margin:
                raise MarginError(msg + "; refine the grid or enlarge eta")
            log.warning("%s; edge feasibility is judged at cell centres only", msg)
    radius = 1.0 - eta if side == "inner" else 1.0 + eta
    offsets = stencil_offsets(grid.dimension, stencil_radius)
    V = vfield(grid.flat_centers())
    steps = offsets * grid.spacing
    adj = np.stack([np.isfinite(control_gauge(V, q, radius)) for q in steps])
    return ReachabilityGraph(grid, offsets, adj, float(eta), side)


@dataclass(frozen=True)
class InvariantSetReport:
    component_count: int
    labels: np.ndarray  # flat cell -> component id
    closed: tuple[int, ...]  # ids of components with no outgoing edge
    volumes: tuple[float, ...]
    weak_component_count: int
    grid: TorusGrid

    @property
    def proper_invariant_found(self) -> bool:
        return self.component_count >= 2

    @property
    def components(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        cuts = np.cumsum(np.bincount(self.labels, minlength=self.component_count))[:-1]
        return np.split(order, cuts)

    def component_of(self, x) -> int:
        return int(self.labels[self.grid.ravel(self.grid.cell_of(x))])

    def mask(self, component: int) -> np.ndarray:
        return (self.labels == component).reshape(self.grid.shape)

    def boundary_cells(self, component: int) -> np.ndarray:
        """Cells of the component with a face neighbour outside it (flat indices)."""
        m = self.mask(component)
        edge = np.zeros_like(m)
        for ax in range(m.ndim):
            for s in (1, -1):
                edge |= m & ~np.roll(m, s, axis=ax)
        return np.flatnonzero(edge.ravel())

    def to_dict(self) -> dict:
        return {
            "component_count": self.component_count,
            "weak_component_count": self.weak_component_count,
            "proper_invariant_found": self.proper_invariant_found,
            "closed_components": list(self.closed),
            "volumes": list(self.volumes),
        }


def detect_invariant_sets(graph: ReachabilityGraph) -> InvariantSetReport:
    """Strong components of the reachability digraph and which of them are closed."""
    mat = graph.csr()
    count, labels = connected_components(mat, directed=True, connection="strong")
    weak, _ = connected_components(mat, directed=True, connection="weak")
    # canonical numbering: components ordered by their smallest cell
    first = np.full(count, graph.grid.size)
    np.minimum.at(first, labels, np.arange(labels.size))
    relabel = np.empty(count, int)
    relabel[np.argsort(first)] = np.arange(count)
    labels = relabel[labels]
    coo = mat.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    has_exit = np.zeros(count, bool)
    has_exit[labels[coo.row[leaving]]] = True
    closed = tuple(int(c) for c in np.flatnonzero(~has_exit)) if count > 1 else ()
    volumes = tuple(float(v) for v in np.bincount(labels, minlength=count) / labels.size)
    return InvariantSetReport(int(count), labels, closed, volumes, int(weak), graph.grid)


# -- trajectories ------------------------------------------------------------------


def _drift_velocity(V: np.ndarray) -> np.ndarray:
    speed = np.linalg.norm(V)
    if speed == 0.0:
        e = np.zeros_like(V)
        e[0] = 1.0
        return e
    return V + V / speed


def _steered_velocity(V: np.ndarray, desired: np.ndarray) -> np.ndarray:
    nd = np.linalg.norm(desired)
    if nd == 0.0:
        return np.zeros_like(V)
    g = float(control_gauge(V, desired))
    if np.isfinite(g) and g > 0:
        return desired / g  # fastest admissible motion along the desired direction
    reach = desired * ((np.linalg.norm(V) + 1.0) / nd)
    return project_onto_control_set(V, reach)


def integrate_trajectory(vfield: VectorField, x0, selector="drift", T: float = 1.0,
                         dt: float = 1e-2, tol: float = 1e-6) -> np.ndarray:
    """Explicit Euler path of ``x' in F(x)``; returns unwrapped points, shape (steps+1, N).

    ``selector`` is ``"drift"`` (velocity ``V + V/|V|``) or ``("steered", target)``,
    which heads for the nearest periodic copy of ``target`` as fast as ``F``
    allows and projects onto ``F`` when the direction is infeasible.
    """
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    if isinstance(selector, str):
        if selector != "drift":
            raise ValueError(f"unknown selector {selector!r}")
        target = None
    else:
        kind, target = selector
        if kind != "steered":
            raise ValueError(f"unknown selector {kind!r}")
        target = np.asarray(target, float)
    steps = int(round(T / dt))
    x = np.asarray(x0, float).copy()
    path = np.empty((steps + 1, x.size))
    path[0] = x
    for i in range(steps):
        V = vfield(x)
        if target is None:
            v = _drift_velocity(V)
        else:
            d = torus_displacement(wrap_point(x), target)
            v = _steered_velocity(V, d)
            step_len = np.linalg.norm(v) * dt
            if step_len > np.linalg.norm(d):
                v = v * (np.linalg.norm(d) / step_len)  # F is star-shaped about 0
        # dt v in dt F(x) iff v in F(x); the unscaled test avoids cancellation
        if not gauge_membership(ControlSetQuery(V), v, tol):
            raise MembershipError(f"velocity {v} outside F at {x}")
        x = x + dt * v
        path[i + 1] = x
    return path


# -- boundary normals ----------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryStats:
    component: int
    cells: int
    normal_dot_v: np.ndarray  # per boundary cell
    speed: np.ndarray
    tol: float

    @property
    def fraction_inward(self) -> float:
        return float(np.mean(self.normal_dot_v <= -1.0 + self.tol))

    @property
    def fraction_fast(self) -> float:
        return float(np.mean(self.speed >= 1.0 - self.tol))

    def to_dict(self) -> dict:
        q = np.quantile(self.normal_dot_v, [0.0, 0.1, 0.5, 0.9, 1.0])
        return {
            "component": self.component,
            "boundary_cells": self.cells,
            "tol": self.tol,
            "fraction_normal_dot_v_le": self.fraction_inward,
            "fraction_speed_ge": self.fraction_fast,
            "normal_dot_v_quantiles": [float(v) for v in q],
        }


def boundary_normal_check(report: InvariantSetReport, vfield: VectorField, component: int | None = None,
                          tol: float = 0.25, smoothing: float = 1.5) -> BoundaryStats:
    """Outer normals of a closed component versus the flow on its boundary cells.

    The normal is ``-grad`` of the indicator after a periodic Gaussian blur of
    ``smoothing`` cells.  Defaults to the largest closed component.
    """
    if not report.proper_invariant_found:
        raise ValueError("no proper invariant set to check")
    if component is None:
        if not report.closed:
            raise ValueError("no closed component")
        component = max(report.closed, key=lambda c: (report.volumes[c], -c))
    grid = report.grid
    phi = gaussian_filter(report.mask(component).astype(float), smoothing, mode="wrap")
    h = grid.spacing
    grad = np.stack([(np.roll(phi, -1, axis=d) - np.roll(phi, 1, axis=d)) / (2 * h[d])
                     for d in range(grid.dimension)], axis=-1).reshape(grid.size, -1)
    cells = report.boundary_cells(component)
    g = grad[cells]
    norm = np.linalg.norm(g, axis=1)
    n = -g / np.where(norm > 0, norm, 1.0)[:, None]
    V = vfield(grid.flat_centers()[cells])
    return BoundaryStats(component, int(cells.size), np.sum(n * V, axis=1),
                         np.linalg.norm(V, axis=1), tol)


def verdict_stability(vfield: VectorField, resolutions=(64, 128, 256), eta: float = 0.05,
                      side: str = "inner", stencil_radius: int = 2,
                      check_margin: bool = True) -> dict[int, InvariantSetReport]:
    """Run detection on several grids; raise if the verdict changes."""
    reports = {}
    for n in resolutions:
        grid = TorusGrid(n, vfield.dimension)
        g = build_reachability_graph(vfield, grid, eta, side, stencil_radius, check_margin)
        reports[n] = detect_invariant_sets(g)
    verdicts = {n: r.proper_invariant_found for n, r in reports.items()}
    if len(set(verdicts.values())) > 1:
        raise UnstableVerdictError(f"invariant-set verdict changes with resolution: {verdicts}")
    return reports
