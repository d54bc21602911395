"""Cell-centred grids on the unit torus and scalar fields over them."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TorusGrid",
    "GridFunction",
    "wrap_point",
    "torus_displacement",
    "stencil_offsets",
    "inf_convolution",
    "sup_convolution",
    "discrete_lower_semilimit",
    "discrete_upper_semilimit",
    "write_csv",
    "read_csv",
]


def wrap_point(x) -> np.ndarray:
    """Representative of ``x`` in ``[0, 1)^N``."""
    x = np.asarray(x, dtype=float)
    y = x - np.floor(x)
    # x - floor(x) can round up to exactly 1.0 for tiny negative inputs
    return np.where(y >= 1.0, 0.0, y)


def torus_displacement(x, y) -> np.ndarray:
    """Shortest periodic representative of ``y - x``."""
    d = np.asarray(y, float) - np.asarray(x, float)
    return d - np.round(d)


def stencil_offsets(dimension: int, radius: int = 2) -> np.ndarray:
    """All nonzero integer offsets with Chebyshev norm <= radius, in a fixed order."""
    rng = range(-radius, radius + 1)
    offs = [o for o in itertools.product(rng, repeat=dimension) if any(o)]
    return np.array(offs, dtype=int)


@dataclass(frozen=True)
class TorusGrid:
    resolution: tuple[int, ...]

    def __init__(self, resolution: int | Sequence[int], dimension: int | None = None):
        if np.isscalar(resolution):
            res = (int(resolution),) * (dimension or 2)
        else:
            res = tuple(int(n) for n in resolution)
            if dimension is not None and len(res) != dimension:
                raise ValueError("resolution length does not match dimension")
        if not res or any(n < 4 for n in res):
            raise ValueError("each axis needs at least 4 cells")
        object.__setattr__(self, "resolution", res)

    @property
    def dimension(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> np.ndarray:
        return 1.0 / np.asarray(self.resolution, float)

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``resolution + (N,)``."""
        axes = [(np.arange(n) + 0.5) / n for n in self.resolution]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def flat_centers(self) -> np.ndarray:
        return self.centers().reshape(-1, self.dimension)

    def wrap_index(self, idx) -> np.ndarray:
        return np.mod(np.asarray(idx, int), self.resolution)

    def ravel(self, idx) -> np.ndarray:
        idx = self.wrap_index(idx)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.resolution)

    def unravel(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(flat, self.resolution), axis=-1)

    def cell_of(self, x) -> np.ndarray:
        """Index of the cell containing the (wrapped) point ``x``."""
        x = wrap_point(x)
        idx = np.floor(x * np.asarray(self.resolution)).astype(int)
        return self.wrap_index(idx)


@dataclass(frozen=True)
class GridFunction:
    """Scalar field on a :class:`TorusGrid`; ``+inf`` entries are allowed."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if np.isnan(vals).any():
            raise ValueError("grid functions may not contain NaN")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: TorusGrid, fn) -> GridFunction:
        return cls(grid, fn(grid.centers()))

    def __len__(self) -> int:
        return self.grid.size

    def spread(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(finite.max() - finite.min()) if finite.size else 0.0


# -- quadratic inf-convolution ----------------------------------------------


def _lower_envelope_1d(f: np.ndarray, pos: np.ndarray, xq: np.ndarray, delta: float):
    """min_j f[j] + (xq - pos[j])^2 / (2 delta) by the parabola lower envelope.

    ``pos`` must be increasing.  Returns values and argmin indices into ``f``.
    """
    m = f.size
    v = np.zeros(m, int)  # parabola indices on the envelope
    z = np.empty(m + 1)  # breakpoints
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    two_d = 2.0 * delta
    for q in range(1, m):
        while True:
            p = v[k]
            s = ((f[q] * two_d + pos[q] ** 2) - (f[p] * two_d + pos[p] ** 2)) / (2.0 * (pos[q] - pos[p]))
            if s <= z[k]:
                k -= 1
                if k < 0:
                    k = 0
                    break
                continue
            k += 1
            break
        v[k] = q
        z[k] = s if k > 0 else -np.inf
        z[k + 1] = np.inf
    seg = np.searchsorted(z[1 : k + 1], xq, side="left")
    arg = v[seg]
    val = f[arg] + (xq - pos[arg]) ** 2 / two_d
    return val, arg


def _inf_conv_axis(vals: np.ndarray, axis: int, n: int, delta: float, reps: int):
    """One separable pass along ``axis``; returns values and the periodic-unwrapped argmin."""
    moved = np.moveaxis(vals, axis, -1)
    lines = moved.reshape(-1, n)
    h = 1.0 / n
    pos = (np.arange(-reps * n, (reps + 1) * n) + 0.5) * h
    xq = (np.arange(n) + 0.5) * h
    out = np.empty_like(lines)
    arg = np.empty(lines.shape, int)
    for i, line in enumerate(lines):
        ext = np.tile(line, 2 * reps + 1)
        out[i], a = _lower_envelope_1d(ext, pos, xq, delta)
        arg[i] = a - reps * n  # unwrapped index, may lie outside [0, n)
    shape = moved.shape
    return (np.moveaxis(out.reshape(shape), -1, axis),
            np.moveaxis(arg.reshape(shape), -1, axis))


def inf_convolution(u: GridFunction, delta: float, return_argmin: bool = False):
    """``u_delta(x) = min_y u(y) + |x - y|^2 / (2 delta)`` over periodic grid points.

    With ``return_argmin`` also returns the optimal points ``y`` as an array
    of unwrapped positions (shape ``grid.shape + (N,)``), so ``|x - y|`` is
    the true distance to the optimal representative.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    vals = np.asarray(u.values, float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("inf_convolution requires finite values")
    grid = u.grid
    osc = float(vals.max() - vals.min())
    # beyond distance sqrt(2 delta osc) the penalty exceeds any gain
    reps = max(1, int(np.ceil(np.sqrt(2.0 * delta * osc))) + 1) if osc > 0 else 1
    if delta <= 1.0 / (8.0 * max(osc, 1e-300)):
        reps = 1
    out = vals
    args = []
    for axis, n in enumerate(grid.resolution):
        out, arg = _inf_conv_axis(out, axis, n, delta, reps)
        args.append(arg)
    result = GridFunction(grid, out)
    if not return_argmin:
        return result
    # compose per-axis argmins backwards: the last pass picks the final coordinate
    N = grid.dimension
    idx = np.indices(grid.shape)
    opt = np.empty(grid.shape + (N,), int)
    cur = tuple(idx)
    for axis in reversed(range(N)):
        a = args[axis][cur]
        opt[..., axis] = a
        cur = tuple(np.mod(a, grid.resolution[axis]) if d == axis else cur[d] for d in range(N))
    positions = (opt + 0.5) / np.asarray(grid.resolution, float)
    return result, positions


def sup_convolution(u: GridFunction, delta: float, return_argmin: bool = False):
    """``u^delta(x) = max_y u(y) - |x - y|^2 / (2 delta)``."""
    neg = GridFunction(u.grid, -u.values)
    res = inf_convolution(neg, delta, return_argmin)
    if return_argmin:
        f, pos = res
        return GridFunction(u.grid, -f.values), pos
    return GridFunction(u.grid, -res.values)


# -- weak semilimits ---------------------------------------------------------


def _neighborhood_reduce(vals: np.ndarray, op) -> np.ndarray:
    out = vals.copy()
    for shift in itertools.product((-1, 0, 1), repeat=vals.ndim):
        if any(shift):
            out = op(out, np.roll(vals, shift, axis=tuple(range(vals.ndim))))
    return out


def discrete_lower_semilimit(sequence: Sequence[GridFunction], tail: int | None = None) -> GridFunction:
    """Min over the last ``tail`` members (all by default) of the 3^N-neighbourhood min."""
    if not sequence:
        raise ValueError("empty sequence")
    grid = sequence[0].grid
    if any(g.grid != grid for g in sequence):
        raise ValueError("all members must share one grid")
    members = sequence if tail is None else sequence[-tail:]
    stacked = np.min(np.stack([m.values for m in members]), axis=0)
    return GridFunction(grid, _neighborhood_reduce(stacked, np.minimum))


def discrete_upper_semilimit(sequence: Sequence[GridFunction], tail: int | None = None) -> GridFunction:
    if not sequence:
        raise ValueError("empty sequence")
    neg = [GridFunction(g.grid, -g.values) for g in sequence]
    low = discrete_lower_semilimit(neg, tail)
    return GridFunction(low.grid, -low.values)


# -- serialisation -------------------------------------------------------------


def _fmt(v: float) -> str:
    if np.isposinf(v):
        return "inf"
    if np.isneginf(v):
        return "-inf"
    return repr(float(v))


def write_csv(u: GridFunction, stream=None, value_name: str = "value") -> str:
    """Rows ``(i_1, ..., i_N, value)``; ``+inf`` written as ``inf``."""
    buf = io.StringIO() if stream is None else stream
    w = csv.writer(buf, lineterminator="\n")
    N = u.grid.dimension
    w.writerow([f"i{d + 1}" for d in range(N)] + [value_name])
    for idx in np.ndindex(*u.grid.shape):
        w.writerow(list(idx) + [_fmt(u.values[idx])])
    return buf.getvalue() if stream is None else ""


def read_csv(text: str, grid: TorusGrid | None = None) -> GridFunction:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    N = len(header) - 1
    idx = np.array([[int(c) for c in r[:N]] for r in body])
    vals = np.array([float(r[N]) for r in body])
    if grid is None:
        grid = TorusGrid(tuple(int(m) + 1 for m in idx.max(axis=0)))
    out = np.empty(grid.shape)
    out[tuple(idx.T)] = vals
    return GridFunction(grid, out)
