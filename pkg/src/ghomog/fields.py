"""Periodic Lipschitz advection fields and the standing-assumption checker.

Every catalog variant is compiled to a finite trigonometric polynomial

    V_i(x) = sum_m  a_mi cos(2 pi k_m . x) + b_mi sin(2 pi k_m . x)

with integer modes k_m, so periodicity, the Jacobian and the divergence are
all exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

__all__ = [
    "VectorField",
    "AssumptionReport",
    "divergence_norm",
    "check_assumptions",
    "isoperimetric_constant",
    "field_constants",
]


def _parse_profile(profile) -> list[tuple[str, int, float]]:
    """Normalise a shear profile to ``[(kind, mode, coef), ...]``.

    Accepts ``"sin:1"``, ``"sin:1:0.5,cos:2"`` or an iterable of tuples.
    """
    if isinstance(profile, str):
        terms = []
        for chunk in profile.split(","):
            parts = chunk.strip().split(":")
            kind, mode = parts[0], int(parts[1])
            coef = float(parts[2]) if len(parts) > 2 else 1.0
            terms.append((kind, mode, coef))
        profile = terms
    out = []
    for term in profile:
        kind, mode, *rest = term
        if kind not in ("sin", "cos"):
            raise ValueError(f"profile term kind must be sin or cos, got {kind!r}")
        out.append((kind, int(mode), float(rest[0]) if rest else 1.0))
    return out


@dataclass(frozen=True)
class VectorField:
    """A Z^N-periodic trigonometric vector field.

    Use the named constructors (:meth:`constant`, :meth:`shear`,
    :meth:`cellular`, :meth:`sink`, :meth:`trig_poly`); the raw arrays are
    ``modes`` (M, N) int, ``cos_coef`` and ``sin_coef`` (M, N).
    """

    dimension: int
    modes: np.ndarray
    cos_coef: np.ndarray
    sin_coef: np.ndarray
    kind: str = "trig_poly"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("modes", "cos_coef", "sin_coef"):
            arr = np.array(getattr(self, name), dtype=int if name == "modes" else float)
            arr = arr.reshape(-1, self.dimension)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.modes.shape == self.cos_coef.shape == self.sin_coef.shape):
            raise ValueError("modes and coefficient arrays must share shape (M, N)")

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, vector: Sequence[float]) -> VectorField:
        c = np.asarray(vector, dtype=float)
        n = c.size
        return cls(n, np.zeros((1, n), int), c[None, :], np.zeros((1, n)),
                   kind="constant", params={"vector": c.tolist()})

    @classmethod
    def shear(cls, amplitude: float, axis: int = 1, profile="sin:1",
              dimension: int = 2, transverse: int | None = None) -> VectorField:
        """Flow along ``axis`` (1-based) depending on one transverse coordinate."""
        if transverse is None:
            transverse = axis % dimension + 1
        if not (1 <= axis <= dimension and 1 <= transverse <= dimension) or axis == transverse:
            raise ValueError("shear needs distinct axis and transverse in 1..N")
        terms = _parse_profile(profile)
        modes = np.zeros((len(terms), dimension), int)
        cc = np.zeros((len(terms), dimension))
        sc = np.zeros((len(terms), dimension))
        for m, (kind, mode, coef) in enumerate(terms):
            modes[m, transverse - 1] = mode
            (sc if kind == "sin" else cc)[m, axis - 1] = amplitude * coef
        return cls(dimension, modes, cc, sc, kind="shear",
                   params={"amplitude": amplitude, "axis": axis, "transverse": transverse,
                           "profile": [list(t) for t in terms]})

    @classmethod
    def cellular(cls, amplitude: float, dimension: int = 2) -> VectorField:
        # A sin(a) cos(b) = A/2 [sin(a+b) + sin(a-b)];  -A cos(a) sin(b) = -A/2 [sin(a+b) - sin(a-b)]
        if dimension < 2:
            raise ValueError("cellular flow needs dimension >= 2")
        modes = np.zeros((2, dimension), int)
        modes[0, :2] = (1, 1)
        modes[1, :2] = (1, -1)
        sc = np.zeros((2, dimension))
        half = 0.5 * amplitude
        sc[0, :2] = (half, -half)
        sc[1, :2] = (half, half)
        return cls(dimension, modes, np.zeros((2, dimension)), sc,
                   kind="cellular", params={"amplitude": amplitude})

    @classmethod
    def sink(cls, amplitude: float, center: Sequence[float] | None = None,
             dimension: int = 2) -> VectorField:
        """Components ``-A sin(2 pi (x_i - c_i))``: a sink at ``center``."""
        c = np.full(dimension, 0.5) if center is None else np.asarray(center, float)
        dimension = c.size
        modes = np.eye(dimension, dtype=int)
        # -A sin(t - s) = -A cos(s) sin(t) + A sin(s) cos(t)
        sc = np.diag(-amplitude * np.cos(TWO_PI * c))
        cc = np.diag(amplitude * np.sin(TWO_PI * c))
        return cls(dimension, modes, cc, sc, kind="sink",
                   params={"amplitude": amplitude, "center": c.tolist()})

    @classmethod
    def trig_poly(cls, terms, dimension: int) -> VectorField:
        """Build from ``[(component, kind, mode_vector, coef), ...]`` (component 0-based)."""
        terms = list(terms)
        modes = np.zeros((max(len(terms), 1), dimension), int)
        cc = np.zeros_like(modes, dtype=float)
        sc = np.zeros_like(modes, dtype=float)
        for m, (comp, kind, mode, coef) in enumerate(terms):
            modes[m] = np.asarray(mode, int)
            if kind == "sin":
                sc[m, comp] = coef
            elif kind == "cos":
                cc[m, comp] = coef
            else:
                raise ValueError(f"unknown term kind {kind!r}")
        return cls(dimension, modes, cc, sc, kind="trig_poly",
                   params={"terms": [[int(c), k, list(map(int, m)), float(v)]
                                     for c, k, m, v in terms]})

    # -- evaluation -------------------------------------------------------

    def _phase(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ValueError(f"points must have trailing dimension {self.dimension}")
        x = x - np.floor(x)
        return TWO_PI * (x @ self.modes.T)

    def __call__(self, x) -> np.ndarray:
        ph = self._phase(x)
        return np.cos(ph) @ self.cos_coef + np.sin(ph) @ self.sin_coef

    def jacobian(self, x) -> np.ndarray:
        """``J[..., i, j] = dV_i/dx_j``."""
        ph = self._phase(x)
        # d/dx_j of a cos + b sin = 2 pi k_j (-a sin + b cos)
        c, s = np.cos(ph), np.sin(ph)
        amp = c[..., :, None] * self.sin_coef - s[..., :, None] * self.cos_coef  # (..., M, N_comp)
        return TWO_PI * np.einsum("...mi,mj->...ij", amp, self.modes)

    def divergence(self, x) -> np.ndarray:
        return np.trace(self.jacobian(x), axis1=-2, axis2=-1)

    @property
    def is_constant(self) -> bool:
        active = (np.abs(self.cos_coef) + np.abs(self.sin_coef)).sum(axis=1) > 0
        return not np.any(self.modes[active] != 0)

    def describe(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension, **self.params}


def _cell_centers(resolution: Sequence[int]) -> np.ndarray:
    axes = [(np.arange(n) + 0.5) / n for n in resolution]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def divergence_norm(vfield: VectorField, resolution: int | Sequence[int] = 256) -> float:
    """Midpoint-rule ``||div V||_{L^N(T^N)}`` using the analytic divergence."""
    n = vfield.dimension
    res = [resolution] * n if np.isscalar(resolution) else list(resolution)
    div = vfield.divergence(_cell_centers(res))
    return float(np.mean(np.abs(div) ** n) ** (1.0 / n))


def field_constants(vfield: VectorField, resolution: int | None = None,
                    inflation: float = 1.05) -> tuple[float, float]:
    """Grid estimates of ``(L_V, M_V)`` inflated by ``inflation``."""
    n = vfield.dimension
    if resolution is None:
        resolution = {1: 1024, 2: 128, 3: 32}.get(n, 8)
    x = _cell_centers([resolution] * n).reshape(-1, n)
    jac = vfield.jacobian(x)
    lip = float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1)))) if x.size else 0.0
    sup = float(np.max(np.linalg.norm(vfield(x), axis=-1)))
    return inflation * lip, inflation * sup


def isoperimetric_constant(dimension: int = 2, samples: int = 2001) -> float:
    """Small-side isoperimetric ratio on the flat torus, maximised over test families.

    ``chi = sup min(|T|, 1-|T|)^(1-1/N) / Per(T)`` over balls, slabs and
    (for N=3) cylinders.  For N=2 this returns 1/(2 sqrt 2), attained by a
    half-volume strip.
    """
    n = dimension
    expo = 1.0 - 1.0 / n
    best = 0.0
    r = np.linspace(1e-4, 0.5, samples)
    # balls of radius r <= 1/2 (no self-overlap on the unit torus)
    from scipy.special import gamma

    omega = np.pi ** (n / 2) / gamma(n / 2 + 1)
    vol = omega * r**n
    per = n * omega * r ** (n - 1)
    best = max(best, float(np.max(np.minimum(vol, 1 - vol) ** expo / per)))
    # slabs {x_1 in (0, w)}: two flat faces of area 1
    w = np.linspace(1e-4, 1 - 1e-4, samples)
    best = max(best, float(np.max(np.minimum(w, 1 - w) ** expo / 2.0)))
    if n == 3:
        # cylinders around a coordinate axis
        vol = np.pi * r**2
        per = 2 * np.pi * r
        best = max(best, float(np.max(np.minimum(vol, 1 - vol) ** expo / per)))
    return best


@dataclass(frozen=True)
class AssumptionReport:
    divergence_norm: float
    threshold: float
    lipschitz_bound: float
    sup_norm: float
    passes_A2: bool
    coercive_everywhere: bool
    chi: float

    def to_dict(self) -> dict:
        return {
            "divergence_norm": self.divergence_norm,
            "threshold": self.threshold,
            "lipschitz_bound": self.lipschitz_bound,
            "sup_norm": self.sup_norm,
            "passes_A2": self.passes_A2,
            "coercive_everywhere": self.coercive_everywhere,
            "chi": self.chi,
        }


def check_assumptions(vfield: VectorField, chi: float | None = None,
                      resolution: int | None = None) -> AssumptionReport:
    if chi is None:
        chi = isoperimetric_constant(vfield.dimension)
    if chi <= 0:
        raise ValueError("chi must be positive")
    if resolution is None:
        resolution = {1: 1024, 2: 256, 3: 48}.get(vfield.dimension, 8)
    norm = divergence_norm(vfield, resolution)
    lip, sup = field_constants(vfield, resolution)
    threshold = 1.0 / chi
    # sup_norm is inflated; coercivity is judged on it so the verdict stays conservative
    return AssumptionReport(
        divergence_norm=norm,
        threshold=threshold,
        lipschitz_bound=lip,
        sup_norm=sup,
        passes_A2=bool(norm <= threshold),
        coercive_everywhere=bool(sup < 1.0),
        chi=float(chi),
    )
