"""Convex geometry of ``H(x, p) = |p| + p . V(x)``.

The velocity sets ``F_delta(x) = conv(B(V(x), delta) u {0})`` and the
sublevels ``Z(x) = {p : H(x, p) <= 1}`` are polar to each other, so the
support function of ``Z(x)`` is the gauge of ``F(x)``.  The gauge has a
closed form: the smallest ``s >= 0`` with ``|q - s V| <= s delta`` is the
left root of ``s^2 (delta^2 - |V|^2) + 2 s q.V - |q|^2 = 0``, written as
``|q|^2 / (q.V + sqrt(D))`` or its conjugate, whichever avoids cancellation.

Functions ending in ``_v`` take raw velocity values ``V`` instead of a field
and a point; all of them broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import VectorField

__all__ = [
    "hamiltonian",
    "coercive_hamiltonian",
    "hamiltonian_v",
    "coercive_hamiltonian_v",
    "control_gauge",
    "ControlSetQuery",
    "SupportValue",
    "support_sigma",
    "support_value",
    "support_sigma_truncated",
    "truncated_support_v",
    "ray_radius",
    "gauge_membership",
    "recession_cone_contains",
    "project_onto_control_set",
]


def _norm(p: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(p * p, axis=-1))


def hamiltonian_v(V, p) -> np.ndarray:
    V = np.asarray(V, float)
    p = np.asarray(p, float)
    return _norm(p) + np.sum(p * V, axis=-1)


def coercive_hamiltonian_v(V, p, k: float) -> np.ndarray:
    """``max{H, -k} + max{|p| - k, 0}``."""
    if k < 1:
        raise ValueError("truncation level k must be >= 1")
    p = np.asarray(p, float)
    return np.maximum(hamiltonian_v(V, p), -k) + np.maximum(_norm(p) - k, 0.0)


def hamiltonian(vfield: VectorField, x, p) -> np.ndarray:
    return hamiltonian_v(vfield(x), p)


def coercive_hamiltonian(vfield: VectorField, k: float, x, p) -> np.ndarray:
    return coercive_hamiltonian_v(vfield(x), p, k)


def control_gauge(V, q, radius: float = 1.0) -> np.ndarray:
    """Minkowski gauge of ``conv(B(V, radius) u {0})`` at ``q`` (``+inf`` off its cone)."""
    V = np.asarray(V, float)
    q = np.asarray(q, float)
    A = radius * radius - np.sum(V * V, axis=-1)
    B = np.sum(q * V, axis=-1)
    C = np.sum(q * q, axis=-1)
    disc = B * B + A * C
    # points built as s (V + e) sit on the cone edge, where roundoff can make disc < 0
    on_cone = disc >= -1e-12 * (B * B + np.abs(A) * C)
    root = np.sqrt(np.maximum(disc, 0.0))
    den = B + root
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(on_cone & (den > 0.0), C / np.where(den > 0, den, 1.0), np.inf)
        # for q.V < 0 the conjugate form avoids cancellation in B + sqrt(D)
        alt = (root - B) / np.where(A > 0, A, 1.0)
        s = np.where((B < 0) & (A > 0), alt, s)
    return np.where(C == 0.0, 0.0, s)


@dataclass(frozen=True)
class ControlSetQuery:
    """Evaluation handle for ``F_delta(x)``: center ``V(x)`` and radius ``delta``."""

    center: np.ndarray
    radius: float = 1.0

    def gauge(self, q) -> np.ndarray:
        return control_gauge(self.center, q, self.radius)

    def contains(self, q, tol: float = 0.0):
        return gauge_membership(self, q, tol)

    def support(self, p) -> np.ndarray:
        """Support function of ``F_delta`` (its max with 0 accounts for the origin)."""
        p = np.asarray(p, float)
        return np.maximum(np.sum(p * self.center, axis=-1) + self.radius * _norm(p), 0.0)


def gauge_membership(query: ControlSetQuery, q, tol: float = 0.0):
    """True iff ``q`` lies in ``(1 + tol) F_delta(x)``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return query.gauge(q) <= 1.0 + tol


@dataclass(frozen=True)
class SupportValue:
    value: float
    attaining_direction: np.ndarray | None


def support_sigma(vfield: VectorField, x, q) -> np.ndarray:
    """``sigma(x, q) = sup {p . q : H(x, p) <= 1}``, possibly ``+inf``."""
    return control_gauge(vfield(x), q)


def support_value(vfield: VectorField, x, q) -> SupportValue:
    """Scalar query returning the value and the unit direction of a maximiser."""
    V = vfield(np.asarray(x, float))
    q = np.asarray(q, float)
    s = float(control_gauge(V, q))
    if not np.isfinite(s) or s == 0.0:
        return SupportValue(s, None)
    # q = s (V + e) with |e| = 1; the maximiser is a positive multiple of e
    e = (q - s * V) / s
    return SupportValue(s, e / np.linalg.norm(e))


def recession_cone_contains(vfield: VectorField, x, p) -> np.ndarray:
    return hamiltonian(vfield, x, p) <= 0.0


# -- truncated Hamiltonians ------------------------------------------------


def ray_radius(V, u, k: float, a: float) -> np.ndarray:
    """Largest ``r >= 0`` with ``H_k(x, r u) <= a`` for unit ``u``.

    Along a ray ``H = r c`` with ``c = 1 + u.V``, and ``H_k`` expands to
    ``max(r(c+1) - k, r c, r - 2k, -k)``, so the radius is a minimum of at
    most three linear bounds.
    """
    c = 1.0 + np.sum(np.asarray(u, float) * np.asarray(V, float), axis=-1)
    r = np.full(np.shape(c), a + 2.0 * k)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(c + 1.0 > 0, np.minimum(r, (a + k) / np.where(c + 1.0 > 0, c + 1.0, 1.0)), r)
        r = np.where(c > 0, np.minimum(r, a / np.where(c > 0, c, 1.0)), r)
    return r


def _sphere_directions(dimension: int) -> np.ndarray:
    if dimension == 1:
        return np.array([[1.0], [-1.0]])
    m = 1024
    i = np.arange(m) + 0.5
    z = 1 - 2 * i / m
    phi = np.pi * (1 + 5**0.5) * i
    rho = np.sqrt(1 - z * z)
    dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
    if dimension == 3:
        return dirs
    raise ValueError("truncated support implemented for N <= 3")


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def truncated_support_v(V, q, k: float, a: float, chunk: int = 4096) -> np.ndarray:
    """Support function of ``{p : H_k(x, p) <= a}`` at ``q`` for velocity values ``V``.

    The set is compact and star-shaped about 0, so its support is the max of
    ``r(u) u.q`` over unit ``u``.  In the plane the maximiser is one of
    finitely many candidates; for N=3 a direction sweep is refined by a
    pattern search.
    """
    if a < 0:
        raise ValueError("level a must be nonnegative")
    V = np.asarray(V, float)
    q = np.asarray(q, float)
    V, q = np.broadcast_arrays(V, q)
    shape = V.shape[:-1]
    n = V.shape[-1]
    Vf = V.reshape(-1, n)
    qf = q.reshape(-1, n)
    dirs = None if n == 2 else _sphere_directions(n)
    out = np.empty(Vf.shape[0])
    for lo in range(0, Vf.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        out[sl] = _truncated_chunk(Vf[sl], qf[sl], k, a, dirs)
    return out.reshape(shape)


def _truncated_chunk(V, q, k, a, dirs):
    n = V.shape[-1]
    if n == 2:
        return _planar_candidates(V, q, k, a)
    r = ray_radius(V[:, None, :], dirs[None, :, :], k, a)  # (m, D)
    vals = r * (q @ dirs.T)
    j = np.argmax(vals, axis=1)
    best = vals[np.arange(len(j)), j]
    if n == 1:
        return np.maximum(best, 0.0)
    # N = 3: shrinking pattern search in the tangent plane of the best direction
    u = dirs[j].copy()
    step = 0.08
    for _ in range(30):
        improved = np.zeros(len(u), bool)
        t1 = np.cross(u, np.where(np.abs(u[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]]))
        t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
        t2 = np.cross(u, t1)
        for tvec in (t1, -t1, t2, -t2):
            cand = u + step * tvec
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            val = ray_radius(V, cand, k, a) * np.sum(cand * q, axis=-1)
            better = val > best
            u = np.where(better[:, None], cand, u)
            best = np.where(better, val, best)
            improved |= better
        step = np.where(improved.any(), step, step * 0.5) * 0.8
    return np.maximum(best, 0.0)


def _planar_candidates(V, q, k, a):
    """Exact planar support: best of the pieces' own maximisers and their corners.

    ``r(u) = min_i alpha_i / (beta_i + u.W_i)`` with pieces ``(a, 1, V)``,
    ``(a + k, 2, V)`` and ``(a + 2k, 1, 0)``.  The support of an intersection
    of convex sets is attained at a smooth maximiser of one piece or at a
    boundary corner, and every candidate is scored with the true ``r``.
    """
    m = V.shape[0]
    zero = np.zeros_like(V)
    pieces = [(a, 1.0, V), (a + k, 2.0, V), (a + 2.0 * k, 1.0, zero)]
    cands = []
    for alpha, beta, W in pieces:
        # {|p| + p.W/beta <= alpha/beta}: maximiser along (q - sW')/|q - sW'|
        Wb = W / beta
        s = control_gauge(Wb, q)
        with np.errstate(invalid="ignore"):
            e = q - np.where(np.isfinite(s), s, 0.0)[:, None] * Wb
        cands.append(e)
    for i in range(3):
        for j in range(i + 1, 3):
            ai, bi, Wi = pieces[i]
            aj, bj, Wj = pieces[j]
            D = ai * Wj - aj * Wi
            g = np.full(m, aj * bi - ai * bj)
            d2 = np.sum(D * D, axis=-1)
            ok = d2 > g * g
            dn = np.sqrt(np.where(ok, d2, 1.0))
            t = np.sqrt(np.where(ok, 1.0 - g * g / np.where(ok, d2, 1.0), 0.0))
            base = (g / np.where(ok, d2, 1.0))[:, None] * D
            perp = np.stack([-D[:, 1], D[:, 0]], axis=-1) / dn[:, None]
            for sign in (1.0, -1.0):
                u = np.where(ok[:, None], base + sign * t[:, None] * perp, 0.0)
                # corners can sit exactly where a denominator vanishes; probe both sides
                for eps in (0.0, 1e-9, -1e-9):
                    c, sn = np.cos(eps), np.sin(eps)
                    cands.append(np.stack([c * u[:, 0] - sn * u[:, 1], sn * u[:, 0] + c * u[:, 1]], -1))
    best = np.zeros(m)
    for u in cands:
        nu = np.linalg.norm(u, axis=-1)
        good = nu > 0
        u = u / np.where(good, nu, 1.0)[:, None]
        val = ray_radius(V, u, k, a) * np.sum(u * q, axis=-1)
        best = np.maximum(best, np.where(good, val, 0.0))
    return best


def support_sigma_truncated(vfield: VectorField, k: float, a: float, x, q) -> np.ndarray:
    """Support of ``{p : H_k(x, p) <= a}``; always finite."""
    if k < 1:
        raise ValueError("truncation level k must be >= 1")
    return truncated_support_v(vfield(x), q, k, a)


def project_onto_control_set(V, z, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``z`` onto ``conv(B(V, radius) u {0})`` (single point)."""
    V = np.asarray(V, float)
    z = np.asarray(z, float)
    if control_gauge(V, z, radius) <= 1.0:
        return z.copy()

    def gap(s):
        return max(np.linalg.norm(z - s * V) - s * radius, 0.0)

    # distance to B(sV, s radius) is convex in s
    lo, hi = 0.0, 1.0
    for _ in range(80):
        m1 = hi - _GOLDEN * (hi - lo)
        m2 = lo + _GOLDEN * (hi - lo)
        if gap(m1) <= gap(m2):
            hi = m2
        else:
            lo = m1
    s = 0.5 * (lo + hi)
    center = s * V
    d = z - center
    nd = np.linalg.norm(d)
    if nd <= s * radius or nd == 0.0:
        return z.copy() if nd <= s * radius else center
    return center + d * (s * radius / nd)
