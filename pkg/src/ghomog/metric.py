"""Intrinsic path metrics on stencil graphs over the torus.

Edge ``c -> c + o`` carries the sigma-length of the straight segment from the
centre of ``c`` (2-point Gauss quadrature, composite where the segment
crosses the ``|V| = 1`` interface) plus the tilt ``P . (x - y) = -P . o h``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .fields import VectorField, field_constants
from .geometry import control_gauge, truncated_support_v
from .torus import GridFunction, TorusGrid, stencil_offsets

log = logging.getLogger(__name__)

__all__ = [
    "EdgeWeighting",
    "WeightTable",
    "CycleCertificate",
    "NegativeWeightError",
    "build_weights",
    "LevelFamily",
    "shortest_path_field",
    "distance_matrix",
    "unwrapped_distance",
    "bellman_ford",
    "bellman_ford_negative_cycle",
    "boundedness_check",
    "covering_check",
]

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))
_COMPOSITE = 8


class NegativeWeightError(ValueError):
    """Raised by Dijkstra-based routines; use :func:`bellman_ford` instead."""


@dataclass(frozen=True)
class EdgeWeighting:
    level: float
    grid: TorusGrid
    tilt: tuple[float, ...] | None = None
    truncation: int | None = None
    stencil_radius: int = 2

    def __post_init__(self):
        N = self.grid.dimension
        tilt = (0.0,) * N if self.tilt is None else tuple(float(t) for t in self.tilt)
        if len(tilt) != N:
            raise ValueError("tilt dimension mismatch")
        object.__setattr__(self, "tilt", tilt)
        if self.truncation is None and self.level <= 0:
            raise ValueError("untruncated distances need level a > 0")
        if self.truncation is not None:
            if self.truncation < 1:
                raise ValueError("truncation k must be >= 1")
            if self.level < 0:
                raise ValueError("truncated distances need level a >= 0")

    def with_level(self, level: float) -> EdgeWeighting:
        return EdgeWeighting(level, self.grid, self.tilt, self.truncation, self.stencil_radius)


@dataclass
class WeightTable:
    """Per-edge weights, indexed ``[offset, source_cell]`` (flat cell index)."""

    weighting: EdgeWeighting
    offsets: np.ndarray  # (E, N)
    weights: np.ndarray  # (E, n); +inf marks an absent edge
    lengths: np.ndarray  # (E, n) sigma-length part, level included
    dst: np.ndarray  # (E, n) flat target index
    _src_of: np.ndarray | None = field(default=None, repr=False)

    @property
    def grid(self) -> TorusGrid:
        return self.weighting.grid

    @property
    def displacements(self) -> np.ndarray:
        return self.offsets * self.grid.spacing

    def src_of(self) -> np.ndarray:
        """``src_of[e, v]`` is the cell whose ``e``-th edge lands on ``v``."""
        if self._src_of is None:
            grid = self.grid
            idx = grid.unravel(np.arange(grid.size))
            self._src_of = np.stack([grid.ravel(idx - o) for o in self.offsets])
        return self._src_of

    def edge_weight(self, src: int, e: int) -> float:
        return float(self.weights[e, src])

    def scaled(self, factor: float) -> WeightTable:
        """Rescale the length part (exact level scaling of untruncated metrics)."""
        if self.weighting.truncation is not None:
            raise ValueError("truncated lengths do not scale with the level")
        absent = ~np.isfinite(self.lengths)
        tilt = np.where(absent, 0.0, self.weights - np.where(absent, 0.0, self.lengths))
        lengths = self.lengths * factor
        w = self.weighting.with_level(self.weighting.level * factor)
        return WeightTable(w, self.offsets, lengths + tilt, lengths, self.dst, self._src_of)

    def csr(self) -> sp.csr_matrix:
        """Finite edges as a CSR matrix, parallel edges merged by min."""
        E, n = self.weights.shape
        src = np.broadcast_to(np.arange(n), (E, n)).ravel()
        dst = self.dst.ravel()
        w = self.weights.ravel()
        keep = np.isfinite(w) & (src != dst)
        src, dst, w = src[keep], dst[keep], w[keep]
        key = src.astype(np.int64) * n + dst
        order = np.lexsort((w, key))
        key, w = key[order], w[order]
        first = np.ones(key.size, bool)
        first[1:] = key[1:] != key[:-1]
        key, w = key[first], w[first]
        return sp.csr_matrix((w, (key // n, key % n)), shape=(n, n))


def _quadrature_points(vfield: VectorField, centers: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Equal-weight nodes along ``[x, x + q]``, shape (n, _COMPOSITE, N).

    Segments crossing ``|V| = 1`` get the composite midpoint rule; the others
    repeat the two Gauss nodes, so a plain mean is the Gauss rule.
    """
    ts = np.linspace(0.0, 1.0, _COMPOSITE + 1)
    speeds = np.linalg.norm(vfield(centers[:, None, :] + ts[None, :, None] * q), axis=-1)
    crossing = (speeds.min(axis=1) < 1.0) & (speeds.max(axis=1) >= 1.0)
    nodes = np.where(crossing[:, None], (np.arange(_COMPOSITE) + 0.5) / _COMPOSITE,
                     np.resize(np.asarray(_GAUSS), _COMPOSITE)[None, :])
    return centers[:, None, :] + nodes[..., None] * q


def _untruncated_lengths(vfield: VectorField, centers: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Level-1 sigma-length of the segments ``[x, x + q]``; +inf if any node is infinite."""
    return control_gauge(vfield(_quadrature_points(vfield, centers, q)), q).mean(axis=1)


def _sigma_lengths(vfield: VectorField, centers: np.ndarray, q: np.ndarray,
                   weighting: EdgeWeighting) -> np.ndarray:
    if weighting.truncation is None:
        return weighting.level * _untruncated_lengths(vfield, centers, q)
    V = vfield(_quadrature_points(vfield, centers, q))
    return truncated_support_v(V, q, weighting.truncation, weighting.level).mean(axis=1)


class LevelFamily:
    """Edge tables of one field, grid, tilt and truncation at varying levels.

    Everything that does not depend on the level is computed once: untruncated
    lengths scale exactly, truncated ones are re-evaluated only on the distinct
    velocity values met by the quadrature points.
    """

    def __init__(self, weighting: EdgeWeighting, vfield: VectorField):
        grid = weighting.grid
        if vfield.dimension != grid.dimension:
            raise ValueError("field and grid dimensions differ")
        self.weighting = weighting
        self.offsets = stencil_offsets(grid.dimension, weighting.stencil_radius)
        h = grid.spacing
        centers = grid.flat_centers()
        idx = grid.unravel(np.arange(grid.size))
        self.steps = self.offsets * h
        self.tilt = self.steps @ np.asarray(weighting.tilt)
        self.dst = np.stack([grid.ravel(idx + o) for o in self.offsets]).astype(np.int64)
        self._src_of = None
        if weighting.truncation is None:
            self._unit = np.stack([_untruncated_lengths(vfield, centers, q) for q in self.steps])
        else:
            V = np.stack([vfield(_quadrature_points(vfield, centers, q)) for q in self.steps])
            N = grid.dimension
            E = len(self.offsets)
            # key on (velocity, step) so each distinct pair is solved once per level
            keys = np.concatenate([V.reshape(E, -1, N),
                                   np.broadcast_to(self.steps[:, None, :], (E, V[0].size // N, N))],
                                  axis=-1).reshape(-1, 2 * N)
            uniq, inv = np.unique(np.round(keys, 12), axis=0, return_inverse=True)
            self._uniq, self._inv = uniq, inv.reshape(V.shape[:-1])

    def lengths(self, level: float) -> np.ndarray:
        w = self.weighting
        if w.truncation is None:
            return level * self._unit
        N = self._uniq.shape[1] // 2
        vals = truncated_support_v(self._uniq[:, :N], self._uniq[:, N:], w.truncation, level)
        return vals[self._inv].mean(axis=-1)

    def table(self, level: float) -> WeightTable:
        weighting = self.weighting.with_level(level)
        lengths = self.lengths(level)
        weights = lengths - self.tilt[:, None]
        t = WeightTable(weighting, self.offsets, weights, lengths, self.dst, self._src_of)
        if self._src_of is None:
            self._src_of = t.src_of()
        return t


def build_weights(weighting: EdgeWeighting, vfield: VectorField) -> WeightTable:
    return LevelFamily(weighting, vfield).table(weighting.level)


# -- nonnegative weights: Dijkstra --------------------------------------------


def _check_nonnegative(table: WeightTable):
    finite = table.weights[np.isfinite(table.weights)]
    if finite.size and finite.min() < 0:
        raise NegativeWeightError("negative edge weights present; use bellman_ford for tilted metrics")


def distance_matrix(table: WeightTable, sources) -> np.ndarray:
    """Shortest-path distances from each source (flat indices) to every cell."""
    _check_nonnegative(table)
    return np.atleast_2d(dijkstra(table.csr(), directed=True, indices=np.asarray(sources)))


def shortest_path_field(table: WeightTable, source) -> GridFunction:
    """Periodic distance field from one source cell (index tuple or flat int)."""
    grid = table.grid
    s = int(source) if np.isscalar(source) else int(grid.ravel(np.asarray(source)))
    return GridFunction(grid, distance_matrix(table, [s])[0])


def unwrapped_distance(vfield: VectorField, weighting: EdgeWeighting, source,
                       periods: int = 3) -> tuple[np.ndarray, tuple[int, ...]]:
    """Non-periodic distance on a ``periods^N`` block of copies of the torus.

    Returns the distance array over the block (shape ``periods * resolution``)
    and the block index of the source, which sits in the central copy.
    """
    grid = weighting.grid
    big = TorusGrid(tuple(periods * n for n in grid.resolution))
    h = grid.spacing
    res = np.asarray(big.resolution)
    centers = (big.unravel(np.arange(big.size)) + 0.5) * h
    idx = big.unravel(np.arange(big.size))
    offsets = stencil_offsets(grid.dimension, weighting.stencil_radius)
    P = np.asarray(weighting.tilt)
    rows, cols, vals = [], [], []
    for o in offsets:
        q = o * h
        w = _sigma_lengths(vfield, centers, q, weighting) - float(P @ q)
        tgt = idx + o
        inside = np.all((tgt >= 0) & (tgt < res), axis=1) & np.isfinite(w)
        rows.append(np.arange(big.size)[inside])
        cols.append(np.ravel_multi_index(tuple(tgt[inside].T), big.resolution))
        vals.append(w[inside])
    w = np.concatenate(vals)
    if w.size and w.min() < 0:
        raise NegativeWeightError("negative edge weights present")
    mat = sp.csr_matrix((w, (np.concatenate(rows), np.concatenate(cols))), shape=(big.size, big.size))
    src_cell = np.asarray(source, int) if not np.isscalar(source) else grid.unravel(int(source))
    src_big = tuple(int(s) + (periods // 2) * n for s, n in zip(src_cell, grid.resolution))
    d = dijkstra(mat, directed=True, indices=np.ravel_multi_index(src_big, big.resolution))
    return d.reshape(big.resolution), src_big


# -- signed weights: Bellman-Ford ---------------------------------------------


@dataclass(frozen=True)
class CycleCertificate:
    winding: tuple[int, ...]
    cells: tuple[tuple[int, ...], ...]
    offsets: tuple[tuple[int, ...], ...]
    edge_weights: tuple[float, ...]
    total_weight: float

    def resum(self) -> float:
        return float(np.sum(self.edge_weights))

    def to_dict(self) -> dict:
        return {
            "winding": list(self.winding),
            "cells": [list(c) for c in self.cells],
            "offsets": [list(o) for o in self.offsets],
            "edge_weights": list(self.edge_weights),
            "total_weight": self.total_weight,
        }


def _jump_to_cycles(pred: np.ndarray, n: int) -> np.ndarray:
    """Nodes reached after >= n predecessor steps (roots point to themselves)."""
    jump = pred.copy()
    steps = 1
    while steps < n:
        jump = jump[jump]
        steps *= 2
    return jump


def _extract_cycle(table: WeightTable, pred_e: np.ndarray, pred: np.ndarray):
    n = pred.size
    land = _jump_to_cycles(pred, n)
    on_cycle = np.unique(land[pred_e[land] >= 0])
    best = None
    seen = np.zeros(n, bool)
    for start in on_cycle:
        if seen[start]:
            continue
        nodes = [int(start)]
        seen[start] = True
        v = pred[start]
        while v != start:
            nodes.append(int(v))
            seen[v] = True
            v = pred[v]
        nodes.reverse()  # forward order: each node's successor follows it
        es = [int(pred_e[nodes[(i + 1) % len(nodes)]]) for i in range(len(nodes))]
        ws = [float(table.weights[e, u]) for e, u in zip(es, nodes)]
        total = float(np.sum(ws))
        if total < 0 and (best is None or total < best[3]):
            best = (nodes, es, ws, total)
    if best is None:
        return None
    nodes, es, ws, total = best
    grid = table.grid
    offs = table.offsets[es]
    wind = offs.sum(axis=0) / np.asarray(grid.resolution)
    return CycleCertificate(
        winding=tuple(int(round(z)) for z in wind),
        cells=tuple(tuple(int(i) for i in grid.unravel(v)) for v in nodes),
        offsets=tuple(tuple(int(i) for i in o) for o in offs),
        edge_weights=tuple(ws),
        total_weight=total,
    )


def bellman_ford(table: WeightTable, source=None, max_rounds: int | None = None):
    """Label-correcting relaxation over the torus graph.

    ``source=None`` starts every label at 0 (a virtual source joined to every
    cell), which is what negative-cycle detection needs.  Returns
    ``(dist, pred_offset, certificate)``; ``certificate`` is ``None`` iff the
    relaxation converged.
    """
    grid = table.grid
    n = grid.size
    src_of = table.src_of()
    w_in = np.take_along_axis(table.weights, src_of, axis=1)
    if source is None:
        dist = np.zeros(n)
    else:
        s = int(source) if np.isscalar(source) else int(grid.ravel(np.asarray(source)))
        dist = np.full(n, np.inf)
        dist[s] = 0.0
    pred_e = np.full(n, -1)
    pred = np.arange(n)
    cap = n + 5 if max_rounds is None else max_rounds
    cols = np.arange(n)
    scale = 1.0 + float(np.max(np.abs(w_in[np.isfinite(w_in)]), initial=0.0))
    for rnd in range(cap):
        cand = dist[src_of] + w_in
        e_best = np.argmin(cand, axis=0)
        c_best = cand[e_best, cols]
        improve = c_best < dist - 1e-12 * (scale + np.abs(np.where(np.isfinite(dist), dist, 0.0)))
        if not improve.any():
            return dist, pred_e, None
        dist = np.where(improve, c_best, dist)
        pred_e = np.where(improve, e_best, pred_e)
        pred = np.where(pred_e >= 0, src_of[np.maximum(pred_e, 0), cols], cols)
        cert = _extract_cycle(table, pred_e, pred)
        if cert is not None:
            log.debug("negative cycle after %d rounds, weight %.3e", rnd + 1, cert.total_weight)
            return dist, pred_e, cert
    cert = _extract_cycle(table, pred_e, pred)
    if cert is None:
        raise RuntimeError("relaxation cap reached without a certifiable cycle")
    return dist, pred_e, cert


def bellman_ford_negative_cycle(table: WeightTable) -> CycleCertificate | None:
    return bellman_ford(table)[2]


# -- diagnostics ---------------------------------------------------------------


@dataclass(frozen=True)
class BoundednessResult:
    finite: bool
    max_value: float


def boundedness_check(vfield: VectorField, grid: TorusGrid, stencil_radius: int = 2,
                      stride: int = 4, table: WeightTable | None = None) -> BoundednessResult:
    """Level-1 untilted periodic distance: finiteness and max over coarse sources."""
    if table is None:
        table = build_weights(EdgeWeighting(1.0, grid, stencil_radius=stencil_radius), vfield)
    sl = tuple(slice(None, None, stride) for _ in grid.resolution)
    sources = np.arange(grid.size).reshape(grid.shape)[sl].ravel()
    fwd = distance_matrix(table, sources)
    mat = table.csr()
    back = np.atleast_2d(dijkstra(mat.T.tocsr(), directed=True, indices=sources))
    finite = bool(np.isfinite(fwd).all() and np.isfinite(back).all())
    mx = float(fwd.max()) if finite else float("inf")
    return BoundednessResult(finite, mx)


def covering_check(vfield: VectorField, grid: TorusGrid, delta: float = 0.5, tilt=None,
                   stencil_radius: int = 2, slack: float | None = None) -> np.ndarray:
    """Per-cell flag: some ``y != x`` within ``(1 - delta)/L_V`` reaches ``x`` in one step
    with tilted cost at most ``1 + |P| r + slack``."""
    lip, _ = field_constants(vfield)
    r = (1.0 - delta) / max(lip, 1e-12)
    P = np.zeros(grid.dimension) if tilt is None else np.asarray(tilt, float)
    table = build_weights(EdgeWeighting(1.0, grid, tuple(P), stencil_radius=stencil_radius), vfield)
    if slack is None:
        slack = 2.0 * float(np.max(grid.spacing)) * stencil_radius
    bound = 1.0 + np.linalg.norm(P) * r + slack
    near = np.linalg.norm(table.displacements, axis=1) <= max(r, float(np.max(grid.spacing)))
    w_in = np.take_along_axis(table.weights, table.src_of(), axis=1)[near]
    if w_in.size == 0:
        return np.zeros(grid.size, bool)
    return (w_in.min(axis=0) <= bound)
