"""Time-dependent solvers for ``u_t + |Du| + Du . V(x/eps) = 0`` on the unit torus.

The oscillatory problem is stepped with an explicit monotone scheme; the
homogenized one, ``u_t + Hbar(Du) = 0``, is evaluated pointwise through the
Hopf-Lax formula over a sampled Wulff set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .effective import WulffSet, wulff_set
from .fields import VectorField, field_constants
from .torus import TorusGrid, torus_displacement

__all__ = [
    "CFLError",
    "SolverConfig",
    "InitialData",
    "Snapshot",
    "HomogenizationTable",
    "scheme_step",
    "solve_oscillatory",
    "solve_homogenized",
    "homogenization_experiment",
    "monotonicity_audit",
]


class CFLError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float
    T: float
    resolution: int
    cfl: float = 0.5
    dimension: int = 2
    dt: float | None = None  # optional override, checked against the stability bound

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if not 0 < self.cfl < 1:
            raise ValueError("cfl must lie in (0, 1)")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.epsilon * self.resolution < 8 - 1e-9:
            raise ValueError(
                f"epsilon*resolution = {self.epsilon * self.resolution:g} < 8 cells per fast period")

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.resolution, self.dimension)

    def time_step(self, sup_norm: float) -> float:
        h = 1.0 / self.resolution
        bound = h / (self.dimension * (1.0 + sup_norm))
        if self.dt is not None:
            if self.dt > bound:
                raise CFLError(f"dt={self.dt:g} exceeds the stability bound {bound:g}")
            return self.dt
        return self.cfl * bound


@dataclass(frozen=True)
class InitialData:
    """Periodic bounded initial data.

    ``cone``: distance to ``centers[0]`` on the torus; ``plateau``: min of
    cones at ``centers`` clipped at ``level``; ``trig``: ``amplitude`` times
    the mean of ``cos(2 pi x_i)`` plus ``offset``.
    """

    variant: str = "cone"
    centers: tuple[tuple[float, ...], ...] = ((0.5, 0.5),)
    level: float = np.inf
    amplitude: float = 0.25
    offset: float = 0.5

    def __post_init__(self):
        if self.variant not in ("cone", "plateau", "trig"):
            raise ValueError(f"unknown initial data {self.variant!r}")
        object.__setattr__(self, "centers", tuple(tuple(float(c) for c in p) for p in self.centers))

    @classmethod
    def cone(cls, center=(0.5, 0.5)) -> InitialData:
        return cls("cone", (tuple(center),))

    @classmethod
    def plateau(cls, centers, level: float) -> InitialData:
        return cls("plateau", tuple(tuple(c) for c in centers), float(level))

    @classmethod
    def trig(cls, amplitude: float = 0.25, offset: float = 0.5) -> InitialData:
        return cls("trig", amplitude=amplitude, offset=offset)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.variant == "trig":
            return self.offset + self.amplitude * np.mean(np.cos(2 * np.pi * x), axis=-1)
        dists = [np.linalg.norm(torus_displacement(np.asarray(c), x), axis=-1) for c in self.centers]
        u = np.min(np.stack(dists), axis=0) if len(dists) > 1 else dists[0]
        return np.minimum(u, self.level) if self.variant == "plateau" else u

    def to_dict(self) -> dict:
        return {"variant": self.variant, "centers": [list(c) for c in self.centers],
                "level": self.level, "amplitude": self.amplitude, "offset": self.offset}


# -- oscillatory problem ----------------------------------------------------------------


def _fast_field(vfield: VectorField, grid: TorusGrid, epsilon: float) -> list[np.ndarray]:
    V = vfield(grid.centers() / epsilon)
    return [np.ascontiguousarray(V[..., i]) for i in range(grid.dimension)]


def scheme_step(u: np.ndarray, V: Sequence[np.ndarray], h: float, dt: float) -> np.ndarray:
    """One explicit step: Rouy-Tourin ``|Du|`` plus upwind advection."""
    rt = np.zeros_like(u)
    adv = np.zeros_like(u)
    for i, Vi in enumerate(V):
        back = (u - np.roll(u, 1, axis=i)) / h
        fwd = (np.roll(u, -1, axis=i) - u) / h
        rt += np.maximum(back, 0.0) ** 2 + np.minimum(fwd, 0.0) ** 2
        adv += np.where(Vi > 0, Vi * back, Vi * fwd)
    return u - dt * (np.sqrt(rt) + adv)


@dataclass(frozen=True)
class Snapshot:
    time: float
    values: np.ndarray
    steps: int


def solve_oscillatory(vfield: VectorField, u0: InitialData, config: SolverConfig,
                      times: Sequence[float] | None = None) -> list[Snapshot]:
    """Step from ``t = 0`` and return snapshots at ``times`` (default ``[T]``)."""
    if vfield.dimension != config.dimension:
        raise ValueError("field and solver dimensions differ")
    times = sorted(float(t) for t in (times if times is not None else [config.T]))
    if times and (times[0] < 0 or times[-1] > config.T + 1e-12):
        raise ValueError("snapshot times must lie in [0, T]")
    grid = config.grid
    h = 1.0 / config.resolution
    _, sup = field_constants(vfield)
    dt_max = config.time_step(sup)
    V = _fast_field(vfield, grid, config.epsilon)
    u = u0(grid.centers())
    out, t, steps = [], 0.0, 0
    for target in times:
        n = int(np.ceil((target - t) / dt_max - 1e-12))
        if n > 0:
            dt = (target - t) / n  # land exactly on the snapshot time
            for _ in range(n):
                u = scheme_step(u, V, h, dt)
            steps += n
            if not np.isfinite(u).all():
                raise FloatingPointError("non-finite values in the oscillatory solver")
        t = target
        out.append(Snapshot(target, u.copy(), steps))
    return out


def monotonicity_audit(vfield: VectorField, config: SolverConfig, u: np.ndarray,
                       rng: np.random.Generator, cells: int = 100, bump: float = 1e-3) -> int:
    """Count violations of monotonicity: raising one neighbour must not lower the update."""
    grid = config.grid
    h = 1.0 / config.resolution
    _, sup = field_constants(vfield)
    dt = config.time_step(sup)
    V = _fast_field(vfield, grid, config.epsilon)
    base = scheme_step(u, V, h, dt)
    N = grid.dimension
    bad = 0
    for _ in range(cells):
        c = tuple(int(i) for i in rng.integers(0, config.resolution, size=N))
        axis = int(rng.integers(N))
        shift = int(rng.choice([-1, 1]))
        nb = list(c)
        nb[axis] = (nb[axis] + shift) % config.resolution
        w = u.copy()
        w[tuple(nb)] += bump
        if scheme_step(w, V, h, dt)[c] < base[c] - 1e-12:
            bad += 1
    return bad


# -- homogenized problem ---------------------------------------------------------------


def _polygon_distance(z: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Euclidean distance from points ``z`` (..., 2) to the convex polygon ``verts`` (CCW)."""
    a = verts
    b = np.roll(verts, -1, axis=0)
    ab = b - a
    rel = z[..., None, :] - a  # (..., M, 2)
    t = np.clip(np.sum(rel * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
    gap = np.linalg.norm(rel - t[..., None] * ab, axis=-1).min(axis=-1)
    cross = ab[:, 0] * rel[..., 1] - ab[:, 1] * rel[..., 0]
    inside = np.all(cross >= -1e-14, axis=-1)
    return np.where(inside, 0.0, gap)


def _ccw(verts: np.ndarray) -> np.ndarray:
    c = verts.mean(axis=0)
    ang = np.arctan2(verts[:, 1] - c[1], verts[:, 0] - c[0])
    return verts[np.argsort(ang)]


def solve_homogenized(u0: InitialData, wulff: WulffSet | np.ndarray, x, t: float,
                      sample: np.ndarray | None = None) -> np.ndarray:
    """``u^0(x, t) = min_{v in W} u0(x - t v)``; ``x`` may be a batch of points.

    For planar cone and plateau data the minimum is the distance from
    ``x - c`` to the polygon ``t W`` over periodic copies, computed exactly.
    Otherwise ``W`` is replaced by a dense sample (vertices, boundary points
    and an interior grid).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.asarray(x, float)
    if t == 0:
        return u0(x)
    if isinstance(wulff, WulffSet) and u0.variant != "trig" and x.shape[-1] == 2 and sample is None:
        verts = _ccw(wulff.vertices()) * t
        reach = int(np.ceil(np.max(np.abs(verts)))) + 1
        copies = np.array([(i, j) for i in range(-reach, reach + 1) for j in range(-reach, reach + 1)], float)
        best = np.full(x.shape[:-1], np.inf)
        for c in u0.centers:
            rel = torus_displacement(np.asarray(c), x)
            for z in copies:
                best = np.minimum(best, _polygon_distance(rel + z, verts))
        return np.minimum(best, u0.level) if u0.variant == "plateau" else best
    if sample is None:
        sample = wulff.sample() if isinstance(wulff, WulffSet) else np.asarray(wulff, float)
    if len(sample) == 0:
        raise ValueError("empty Wulff sample")
    pts = x[..., None, :] - t * sample  # (..., S, N)
    return np.min(u0(pts), axis=-1)


@dataclass
class HomogenizationTable:
    epsilons: list[float]
    times: list[float]
    errors: np.ndarray  # (len(eps), len(times))
    resolution: int
    stride: int
    wulff: WulffSet | None = field(default=None, repr=False)

    @property
    def worst(self) -> np.ndarray:
        """``e(eps)``: max over lattice and times."""
        return self.errors.max(axis=1)

    @property
    def ratios(self) -> list[float]:
        e = self.worst
        return [float(e[i + 1] / e[i]) if e[i] > 0 else float("nan") for i in range(len(e) - 1)]

    def rows(self) -> list[dict]:
        out = []
        for i, eps in enumerate(self.epsilons):
            for j, t in enumerate(self.times):
                out.append({"epsilon": eps, "time": t, "error": float(self.errors[i, j])})
        return out


def homogenization_experiment(vfield: VectorField, u0: InitialData, eps_list: Sequence[float],
                              T: float, resolution: int, wulff: WulffSet | None = None,
                              stride: int = 8, cfl: float = 0.5, wulff_directions: int = 64,
                              wulff_resolution: int = 64) -> HomogenizationTable:
    """``e(eps) = max |u_eps - u^0|`` over every ``stride``-th cell at ``T/2`` and ``T``."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if wulff is None:
        wulff = wulff_set(vfield, wulff_directions, TorusGrid(wulff_resolution, vfield.dimension))
    times = [0.5 * T, T]
    grid = TorusGrid(resolution, vfield.dimension)
    sl = tuple(slice(None, None, stride) for _ in range(grid.dimension))
    lattice = grid.centers()[sl]
    exact = [solve_homogenized(u0, wulff, lattice, t) for t in times]
    errors = np.empty((len(eps_list), len(times)))
    for i, eps in enumerate(eps_list):
        cfg = SolverConfig(eps, T, resolution, cfl, vfield.dimension)
        snaps = solve_oscillatory(vfield, u0, cfg, times)
        for j, s in enumerate(snaps):
            errors[i, j] = float(np.max(np.abs(s.values[sl] - exact[j])))
    return HomogenizationTable(eps_list, times, errors, resolution, stride, wulff)
