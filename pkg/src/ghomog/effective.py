"""Effective Hamiltonian of the G-equation through coercive truncations.

``Hbar_k(P)`` is the critical level of the truncated tilted metric: the
smallest ``a`` at which no torus cycle has negative tilted length.  It is
found by bisection over negative-cycle queries (primary route) and audited
against the large-time slope of the cell problem (PDE route).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection

from .fields import VectorField
from .geometry import coercive_hamiltonian_v, hamiltonian_v
from .metric import (CycleCertificate, EdgeWeighting, LevelFamily, bellman_ford,
                     build_weights)
from .torus import GridFunction, TorusGrid

log = logging.getLogger(__name__)

__all__ = [
    "BracketError",
    "NonMonotoneError",
    "CyclesValue",
    "PDEValue",
    "EffectiveResult",
    "WulffSet",
    "effective_bounds",
    "critical_level",
    "effective_k_cycles",
    "effective_k_pde",
    "effective_hamiltonian",
    "wulff_set",
    "sphere_fan",
    "corrector_field",
]


class BracketError(RuntimeError):
    pass


class NonMonotoneError(RuntimeError):
    pass


def effective_bounds(vfield: VectorField, P, grid: TorusGrid, k: float | None = None):
    """Grid extrema of ``H(x, P)`` (or of ``H_k`` when ``k`` is given)."""
    P = np.asarray(P, float)
    V = vfield(grid.flat_centers())
    h = hamiltonian_v(V, P) if k is None else coercive_hamiltonian_v(V, P, k)
    return float(h.min()), float(h.max())


@dataclass(frozen=True)
class CyclesValue:
    k: int
    value: float
    lo: float
    hi: float
    iterations: int
    certificate: CycleCertificate | None  # a negative cycle at ``lo``, if lo was tested
    bounded_at_top: bool

    @property
    def route(self) -> str:
        return "cycles"


def _has_negative_cycle(family: LevelFamily, level: float) -> CycleCertificate | None:
    return bellman_ford(family.table(level))[2]


def critical_level(family: LevelFamily, lo: float, hi: float, tol: float,
                   lo_cert: CycleCertificate | None = None):
    """Bisect ``[lo, hi]`` for the level where negative cycles disappear.

    Assumes a negative cycle at ``lo`` and none at ``hi``; returns
    ``(lo, hi, certificate_at_lo, iterations)``.
    """
    iters = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        iters += 1
        c = _has_negative_cycle(family, mid)
        if c is None:
            hi = mid
        else:
            lo, lo_cert = mid, c
    return lo, hi, lo_cert, iters


def effective_k_cycles(vfield: VectorField, P, k: int, grid: TorusGrid, tol: float | None = None,
                       stencil_radius: int = 2, upper: float | None = None) -> CyclesValue:
    """Bisection for the no-negative-cycle threshold of the truncated tilted metric.

    ``upper`` optionally overrides the top of the bracket (e.g. the previous
    ``Hbar_k`` in a doubling schedule).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    P = tuple(float(p) for p in P)
    low_h, up_h = effective_bounds(vfield, P, grid, k)
    if tol is None:
        tol = 1e-3 * (up_h - low_h + 1.0)
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo = max(low_h, 0.0)
    hi = up_h if upper is None else max(min(upper, up_h), lo)
    family = LevelFamily(EdgeWeighting(lo, grid, P, truncation=k, stencil_radius=stencil_radius),
                         vfield)
    iters = 1
    cert = _has_negative_cycle(family, lo)
    if cert is None:
        return CyclesValue(k, lo, lo, lo, iters, None, True)
    lo_cert = cert
    inflated = False
    while True:
        iters += 1
        if _has_negative_cycle(family, hi) is None:
            break
        if inflated and upper is None:
            raise BracketError(f"negative cycle persists at inflated level {hi:.6g}")
        if upper is not None and not inflated and hi < up_h:
            hi = up_h
        else:
            hi = hi + (hi - lo + 1.0)
        inflated = True
    lo, hi, lo_cert, n = critical_level(family, lo, hi, tol, lo_cert)
    iters += n
    top = family.table(hi)
    dist = bellman_ford(top, source=0)[0]
    return CyclesValue(k, 0.5 * (lo + hi), lo, hi, iters, lo_cert, bool(np.isfinite(dist).all()))


# -- PDE audit route -------------------------------------------------------------


@dataclass(frozen=True)
class PDEValue:
    k: int
    value: float
    spread: float
    converged: bool
    steps: int

    @property
    def route(self) -> str:
        return "pde"


def _llf_step(w, V, P, h, k):
    """Local Lax-Friedrichs numerical Hamiltonian of ``H_k(x, P + Dw)``.

    The per-axis dissipation bounds ``|dH_k/dp_i|`` over the box spanned by
    the one-sided momenta, which keeps the scheme monotone.
    """
    N = w.ndim
    pm, pp, hi, lo = [], [], [], []
    for i in range(N):
        fwd = (np.roll(w, -1, axis=i) - w) / h[i] + P[i]
        bwd = (w - np.roll(w, 1, axis=i)) / h[i] + P[i]
        pp.append(fwd)
        pm.append(bwd)
        a, b = np.abs(fwd), np.abs(bwd)
        hi.append(np.maximum(a, b))
        lo.append(np.where(fwd * bwd <= 0, 0.0, np.minimum(a, b)))
    pc = [0.5 * (pm[i] + pp[i]) for i in range(N)]
    norm_c = np.sqrt(sum(c * c for c in pc))
    ham = norm_c + sum(pc[i] * V[i] for i in range(N))
    ham = np.maximum(ham, -k) + np.maximum(norm_c - k, 0.0)
    hi2 = [x * x for x in hi]
    lo2 = [x * x for x in lo]
    factor = np.where(sum(hi2) >= k * k, 2.0, 1.0)
    lo_total = sum(lo2)
    diss = 0.0
    for i in range(N):
        den = np.sqrt(hi2[i] + lo_total - lo2[i])
        ratio = np.divide(hi[i], den, out=np.ones_like(den), where=den > 0)
        diss = diss + (np.abs(V[i]) + factor * ratio) * (pp[i] - pm[i])
    return ham - 0.5 * diss


def effective_k_pde(vfield: VectorField, P, k: int, grid: TorusGrid, T: float = 20.0,
                    cfl: float = 0.5, tol: float = 1e-2) -> PDEValue:
    """Large-time slope of ``w_t + H_k(x, P + Dw) = 0`` with ``w(., 0) = 0``.

    Returns ``-(w(T) - w(T/2)) / (T/2)`` averaged over cells; the spread of
    that slope over cells is the error bar.  The time step uses the global
    bound ``2 + max|V_i|`` on ``|dH_k/dp_i|``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if T < 10:
        raise ValueError("T must be at least 10")
    if not 0 < cfl < 1:
        raise ValueError("cfl must lie in (0, 1)")
    N = grid.dimension
    P = np.asarray(P, float)
    Vc = vfield(grid.centers())
    V = [np.ascontiguousarray(Vc[..., i]) for i in range(N)]
    h = grid.spacing
    amax = np.array([2.0 + np.abs(v).max() for v in V])
    dt = cfl / float(np.sum(amax / h))
    steps = int(np.ceil(T / dt))
    steps += steps % 2
    dt = T / steps
    w = np.zeros(grid.shape)
    half = None
    for step in range(1, steps + 1):
        w = w - dt * _llf_step(w, V, P, h, k)
        if step == steps // 2:
            if not np.isfinite(w).all():
                raise FloatingPointError("cell-problem iteration produced non-finite values")
            half = w.copy()
    if not np.isfinite(w).all():
        raise FloatingPointError("cell-problem iteration produced non-finite values")
    slope = -(w - half) / (0.5 * T)
    spread = float(slope.max() - slope.min())
    return PDEValue(k, float(slope.mean()), spread, spread <= 10 * tol, steps)


# -- the k -> infinity limit -----------------------------------------------------


@dataclass
class EffectiveResult:
    P: tuple[float, ...]
    lower: float
    upper: float
    sequence: list[CyclesValue] = field(default_factory=list)
    audits: list[PDEValue] = field(default_factory=list)
    limit: float = float("nan")
    converged: bool = False
    wulff_margin: float = 0.0  # max |cycles - pde| over audited k
    bisection_tol: float = 0.0

    def rows(self) -> list[dict]:
        out = []
        audit = {a.k: a for a in self.audits}
        for s in self.sequence:
            out.append({"k": s.k, "value": s.value, "route": "cycles", "iterations": s.iterations})
            if s.k in audit:
                out.append({"k": s.k, "value": audit[s.k].value, "route": "pde",
                            "iterations": audit[s.k].steps})
        return out


def effective_hamiltonian(vfield: VectorField, P, grid: TorusGrid, tol: float = 1e-2,
                          k_max: int = 32, bisection_tol: float | None = None,
                          stencil_radius: int = 2, audit: bool = False,
                          audit_T: float = 20.0) -> EffectiveResult:
    """``Hbar(P)`` as the limit of ``Hbar_k(P)`` over ``k = 1, 2, 4, ...``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = tuple(float(p) for p in P)
    lower, upper = effective_bounds(vfield, P, grid)
    if bisection_tol is None:
        bisection_tol = 1e-3 * (upper - lower + 1.0)
    res = EffectiveResult(P, lower, upper, bisection_tol=bisection_tol)
    k = 1
    prev: CyclesValue | None = None
    while k <= k_max:
        cur = effective_k_cycles(vfield, P, k, grid, bisection_tol, stencil_radius,
                                 upper=None if prev is None else prev.hi)
        if prev is not None and cur.value > prev.value + 2 * bisection_tol:
            raise NonMonotoneError(
                f"Hbar_{k}={cur.value:.6g} exceeds Hbar_{prev.k}={prev.value:.6g} beyond tolerance")
        res.sequence.append(cur)
        if audit:
            pde = effective_k_pde(vfield, P, k, grid, T=audit_T, tol=tol)
            res.audits.append(pde)
            res.wulff_margin = max(res.wulff_margin, abs(pde.value - cur.value))
        if prev is not None and abs(prev.value - cur.value) < tol:
            res.converged = True
            break
        prev = cur
        k *= 2
    res.limit = res.sequence[-1].value
    if not res.converged:
        log.warning("Hbar(%s) not stabilised by k=%d", P, res.sequence[-1].k)
    return res


# -- Wulff set -------------------------------------------------------------------


def sphere_fan(dimension: int, count: int) -> np.ndarray:
    """Equispaced unit directions (circle for N=2, Fibonacci sphere for N=3)."""
    if dimension == 1:
        return np.array([[1.0], [-1.0]])
    if dimension == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    phi = np.pi * (1 + 5**0.5) * i
    rho = np.sqrt(1 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


@dataclass(frozen=True)
class WulffSet:
    """``W = {v : v . P_j <= Hbar(P_j)}`` for sampled unit ``P_j``."""

    directions: np.ndarray
    values: np.ndarray

    def contains(self, v, tol: float = 1e-12) -> np.ndarray:
        v = np.asarray(v, float)
        return np.all(v @ self.directions.T <= self.values + tol, axis=-1)

    def _interior_point(self) -> np.ndarray:
        if np.all(self.values > 0):
            return np.zeros(self.directions.shape[1])
        # Chebyshev centre
        N = self.directions.shape[1]
        c = np.zeros(N + 1)
        c[-1] = -1.0
        A = np.hstack([self.directions, np.ones((len(self.values), 1))])
        sol = linprog(c, A_ub=A, b_ub=self.values, bounds=[(None, None)] * N + [(0, None)])
        if not sol.success or sol.x[-1] <= 0:
            raise ValueError("Wulff set has empty interior")
        return sol.x[:N]

    def vertices(self) -> np.ndarray:
        if self.directions.shape[1] == 1:
            return np.array([[-self.values[1]], [self.values[0]]])
        hs = np.hstack([self.directions, -self.values[:, None]])
        pts = HalfspaceIntersection(hs, self._interior_point()).intersections
        hull = ConvexHull(pts)
        return pts[hull.vertices]

    def support(self, p) -> np.ndarray:
        return np.max(np.asarray(p, float) @ self.vertices().T, axis=-1)

    def sample(self, boundary: int = 64, interior: int = 16) -> np.ndarray:
        """Vertices, ``boundary`` points along the boundary and an interior grid."""
        verts = self.vertices()
        pts = [verts]
        N = verts.shape[1]
        if N == 2 and len(verts) >= 3:
            closed = np.vstack([verts, verts[:1]])
            seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
            s = np.linspace(0, seg.sum(), boundary, endpoint=False)
            cum = np.concatenate([[0], np.cumsum(seg)])
            j = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
            t = (s - cum[j]) / np.where(seg[j] > 0, seg[j], 1)
            pts.append(closed[j] + t[:, None] * (closed[j + 1] - closed[j]))
        if interior:
            lo, hi = verts.min(axis=0), verts.max(axis=0)
            axes = [np.linspace(lo[d], hi[d], interior) for d in range(N)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, N)
            pts.append(grid[self.contains(grid)])
        return np.vstack(pts)

    def to_rows(self) -> list[dict]:
        return [{"direction": d.tolist(), "value": float(v)} for d, v in zip(self.directions, self.values)]


def wulff_set(vfield: VectorField, direction_count: int, grid: TorusGrid, tol: float = 1e-2,
              **kwargs) -> WulffSet:
    N = vfield.dimension
    if (N == 2 and direction_count < 8) or (N == 3 and direction_count < 32):
        raise ValueError("too few directions for a Wulff set")
    dirs = sphere_fan(N, direction_count)
    vals = np.array([effective_hamiltonian(vfield, d, grid, tol, **kwargs).limit for d in dirs])
    return WulffSet(dirs, vals)


# -- correctors ------------------------------------------------------------------


def corrector_field(vfield: VectorField, P, k: int, grid: TorusGrid,
                    value: CyclesValue | None = None, stencil_radius: int = 2,
                    candidates: int = 12) -> GridFunction:
    """Tilted truncated distance from a heuristic Aubry point at level ``Hbar_k(P)``.

    Candidate base points are cells of the critical cycle found just below the
    threshold plus a coarse lattice; the chosen one minimises the weight of
    the cheapest return cycle through it (zero on the discrete Aubry set).
    """
    P = tuple(float(p) for p in P)
    if value is None:
        value = effective_k_cycles(vfield, P, k, grid, stencil_radius=stencil_radius)
    table = build_weights(EdgeWeighting(value.hi, grid, P, truncation=k,
                                        stencil_radius=stencil_radius), vfield)
    cands = []
    if value.certificate is not None:
        cyc = [grid.ravel(np.array(c)) for c in value.certificate.cells]
        stride = max(1, len(cyc) // (candidates // 2))
        cands.extend(int(c) for c in cyc[::stride][: candidates // 2])
    lattice = np.arange(grid.size).reshape(grid.shape)
    sl = tuple(slice(None, None, max(1, n // 2)) for n in grid.resolution)
    cands.extend(int(c) for c in lattice[sl].ravel())
    cands = list(dict.fromkeys(cands))[:candidates]
    src_of = table.src_of()
    best = None
    for y in cands:
        dist = bellman_ford(table, source=y)[0]
        ret = float(np.min(dist[src_of[:, y]] + np.take_along_axis(
            table.weights, src_of[:, y][:, None], axis=1)[:, 0]))
        if best is None or ret < best[0]:
            best = (ret, dist)
    return GridFunction(grid, best[1])
