"""Independent reference computations used by the tests.

Nothing here calls into the closed-form kernels of the package; each oracle
works from the defining formula by sampling, brute force or quadrature.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


def sampled_sigma(V, q, samples: int = 1_000_000) -> float:
    """``sup {p.q : |p| + p.V <= 1}`` over ``samples`` boundary rays of the set.

    Along a unit direction ``u`` the set reaches radius ``1/(1 + u.V)`` when
    that is positive and is unbounded otherwise.
    """
    V = np.asarray(V, float)
    q = np.asarray(q, float)
    th = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    u = np.stack([np.cos(th), np.sin(th)], axis=1)
    c = 1.0 + u @ V
    uq = u @ q
    if np.any((c <= 0) & (uq > 0)):
        return np.inf
    ok = c > 0
    return float(max(np.max(uq[ok] / c[ok]), 0.0))


def in_control_set(V, q, tol: float = 0.0, samples: int = 20001) -> bool:
    """``q in conv(B(V,1) u {0})`` iff ``|q - sV| <= s`` for some ``s`` in [0, 1]."""
    V = np.asarray(V, float)
    q = np.asarray(q, float)
    s = np.linspace(0.0, 1.0, samples)
    gap = np.linalg.norm(q[None, :] - s[:, None] * V[None, :], axis=1) - s
    return bool(gap.min() <= tol)


def control_set_sample(V, count: int = 4096) -> np.ndarray:
    """Boundary circle of ``B(V, 1)`` together with the origin."""
    th = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
    circle = np.asarray(V, float) + np.stack([np.cos(th), np.sin(th)], axis=1)
    return np.vstack([circle, np.zeros((1, 2))])


def sampled_truncated_sigma(V, q, k: float, a: float, samples: int = 200_000) -> float:
    """Support of ``{p : H_k(p) <= a}`` by bisection on the radius along sampled rays.

    The coarse sweep is followed by a zoom around its best rays, since at
    small ``a`` the set can be a thin sector.
    """
    V = np.asarray(V, float)
    q = np.asarray(q, float)

    def radius(th):
        u = np.stack([np.cos(th), np.sin(th)], axis=1)
        lo = np.zeros(len(th))
        hi = np.full(len(th), 4.0 * (a + 2 * k) + 4.0)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            p = mid[:, None] * u
            n = np.linalg.norm(p, axis=1)
            h = n + p @ V
            hk = np.maximum.reduce([h + n - k, h, n - 2 * k, np.full_like(n, -k)])
            inside = hk <= a
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return lo * (u @ q)

    th = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    vals = radius(th)
    step = 2 * np.pi / samples
    best = float(vals.max())
    for t0 in th[np.argsort(vals)[-20:]]:
        fine = np.linspace(t0 - 2 * step, t0 + 2 * step, 4001)
        best = max(best, float(radius(fine).max()))
    return best


def shear_hbar(P, amplitude: float = 2.0, m: int = 20000) -> float:
    """Effective value for ``V = (A sin 2 pi y, 0)`` from the one-dimensional cell problem.

    The corrector depends on ``y`` only, so ``Hbar`` is the smallest ``c``
    with ``c >= |p1| + max p1 v`` and ``mean sqrt((c - p1 v)^2 - p1^2) >= |p2|``.
    """
    p1, p2 = float(P[0]), float(P[1])
    y = (np.arange(m) + 0.5) / m
    v = amplitude * np.sin(2 * np.pi * y)
    c0 = abs(p1) + np.max(p1 * v)

    def F(c):
        return np.mean(np.sqrt(np.maximum((c - p1 * v) ** 2 - p1 ** 2, 0.0))) - abs(p2)

    if F(c0) >= 0:
        return float(c0)
    return float(brentq(F, c0, c0 + abs(p2) + 1.0, xtol=1e-13))


def torus_distance(x, y) -> np.ndarray:
    d = np.abs(np.asarray(x, float) - np.asarray(y, float))
    d = np.minimum(d, 1.0 - d)
    return np.linalg.norm(d, axis=-1)


def reachable_from(adjacency, stencil, shape, start) -> np.ndarray:
    """Plain breadth-first search over a stencil adjacency (``adjacency[e, c]``)."""
    from collections import deque

    n = int(np.prod(shape))
    seen = np.zeros(n, bool)
    seen[start] = True
    todo = deque([start])
    while todo:
        c = todo.popleft()
        idx = np.array(np.unravel_index(c, shape))
        for e in np.flatnonzero(adjacency[:, c]):
            nb = np.ravel_multi_index(tuple((idx + stencil[e]) % shape), shape)
            if not seen[nb]:
                seen[nb] = True
                todo.append(nb)
    return seen


def direction_feasible(V, q, radius: float) -> bool:
    """``q`` points into the cone of ``conv(B(V, r) u {0})`` (angle test)."""
    V = np.asarray(V, float)
    q = np.asarray(q, float)
    speed = np.linalg.norm(V)
    if speed < radius:
        return True
    cos = float(q @ V) / (np.linalg.norm(q) * speed)
    return bool(np.arccos(np.clip(cos, -1.0, 1.0)) <= np.arcsin(radius / speed))
