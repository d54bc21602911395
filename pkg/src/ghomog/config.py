"""Strict keyed-text run configuration.

Files hold ``section.key=value`` lines; ``#`` starts a comment.  Vectors are
comma separated, lists of vectors use ``;`` between entries.  Unknown keys
and malformed values raise :class:`ConfigError`.  A JSON manifest written by
a previous run is accepted as well.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Callable

SCHEMA_VERSION = 1

__all__ = ["ConfigError", "RunConfig", "KEYS", "SCHEMA_VERSION", "parse_text", "load"]


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _vector(s: str) -> tuple[float, ...]:
    return tuple(_float(t) for t in s.split(",") if t.strip())


def _int_vector(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.split(",") if t.strip())


def _vectors(s: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_vector(chunk) for chunk in s.split(";") if chunk.strip())


def _optional(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(s: str):
        return None if s.strip().lower() in ("", "none", "auto") else conv(s)
    return parse


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


KEYS: dict[str, Key] = {
    "field.kind": Key(_choice("constant", "shear", "cellular", "sink", "trig_poly"), "shear", "field variant"),
    "field.dimension": Key(int, 2, "space dimension N"),
    "field.amplitude": Key(_float, 2.0, "amplitude of shear, cellular and sink fields"),
    "field.axis": Key(int, 1, "shear flow axis (1-based)"),
    "field.transverse": Key(_optional(int), None, "shear transverse axis (1-based)"),
    "field.profile": Key(str, "sin:1", "shear profile, e.g. sin:1 or sin:1:0.5,cos:2"),
    "field.vector": Key(_vector, (0.0, 0.0), "constant field value"),
    "field.center": Key(_optional(_vector), None, "sink centre"),
    "field.terms": Key(str, "", "trig_poly terms comp:sin|cos:m1,m2:coef separated by ';'"),
    "assumptions.chi": Key(_optional(_float), None, "isoperimetric constant override"),
    "grid.resolution": Key(int, 64, "cells per axis"),
    "grid.dimension": Key(_optional(int), None, "must equal field.dimension when set"),
    "metric.stencil_radius": Key(int, 2, "Chebyshev radius of the stencil"),
    "metric.eta": Key(_float, 0.05, "reachability margin"),
    "metric.check_margin": Key(_bool, False, "reject inner graphs with h*R > eta/L_V (else warn)"),
    "metric.level": Key(_float, 1.0, "metric level a"),
    "metric.tilt": Key(_optional(_vector), None, "tilt P of the metric"),
    "metric.truncation": Key(_optional(int), None, "truncation k (None = untruncated)"),
    "metric.source": Key(_optional(_int_vector), None, "source cell index (default: origin cell)"),
    "dynamics.side": Key(_choice("inner", "outer", "both"), "both", "reachability graphs to analyse"),
    "dynamics.labels": Key(_bool, False, "also write a per-cell component CSV"),
    "dynamics.tol": Key(_float, 0.25, "slack in the boundary-normal check"),
    "sigma.fan": Key(int, 16, "number of q directions"),
    "sigma.radius": Key(_float, 1.0, "length of the q vectors"),
    "effective.P": Key(_vectors, ((1.0, 0.0),), "tilts, e.g. 1,0;0,1"),
    "effective.fan": Key(int, 0, "use a fan of this many unit tilts instead of effective.P"),
    "effective.tol": Key(_float, 1e-2, "tolerance on successive H_k values"),
    "effective.bisection_tol": Key(_optional(_float), None, "bisection tolerance"),
    "effective.k_max": Key(int, 32, "largest truncation level"),
    "effective.k": Key(int, 4, "truncation level for corrector and cycle"),
    "effective.audit": Key(_bool, False, "also run the PDE route"),
    "effective.directions": Key(int, 64, "directions of the Wulff set"),
    "solver.epsilon": Key(_vector, (0.25, 0.125, 0.0625), "epsilon values, decreasing"),
    "solver.T": Key(_float, 0.5, "final time"),
    "solver.cfl": Key(_float, 0.5, "CFL number"),
    "solver.resolution": Key(int, 256, "cells per unit length"),
    "solver.initial": Key(_choice("cone", "plateau", "trig"), "cone", "initial data"),
    "solver.center": Key(_vectors, ((0.5, 0.5),), "cone centres"),
    "solver.level": Key(_optional(_float), None, "plateau clipping level"),
    "solver.stride": Key(int, 8, "evaluation lattice stride"),
    "solver.snapshots": Key(_optional(_vector), None, "snapshot times for evolve (default: T)"),
    "solver.wulff_resolution": Key(int, 64, "grid used for the Wulff set"),
    "output.directory": Key(str, "out", "output directory"),
    "output.format": Key(_choice("csv", "json"), "csv", "tabular output format"),
    "run.seed": Key(int, 0, "seed for randomised audits"),
}


def _render(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_render(v) for v in value]
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _text_of(value: Any) -> str:
    """Inverse of the key parsers for manifest round-trips."""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return ";".join(_text_of(v) for v in value)
        return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in value)
    return str(value)


class RunConfig:
    """Fully resolved configuration; read values with ``cfg["section.key"]``."""

    def __init__(self, values: dict[str, Any] | None = None):
        self._values = {k: spec.default for k, spec in KEYS.items()}
        for k, v in (values or {}).items():
            self._values[k] = v

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def set_text(self, key: str, text: str) -> None:
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            self._values[key] = KEYS[key].parse(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None

    def updated(self, assignments: list[str]) -> RunConfig:
        out = RunConfig(dict(self._values))
        for a in assignments:
            if "=" not in a:
                raise ConfigError(f"override must look like key=value, got {a!r}")
            k, v = a.split("=", 1)
            out.set_text(k, v)
        out.validate()
        return out

    def validate(self) -> None:
        dim = self["field.dimension"]
        if dim not in (1, 2, 3):
            raise ConfigError("field.dimension must be 1, 2 or 3")
        if self["grid.dimension"] not in (None, dim):
            raise ConfigError("grid.dimension differs from field.dimension")
        if self["grid.resolution"] < 4:
            raise ConfigError("grid.resolution must be at least 4")
        if self["field.kind"] == "constant" and len(self["field.vector"]) != dim:
            raise ConfigError("field.vector length must equal field.dimension")
        if self["metric.tilt"] is not None and len(self["metric.tilt"]) != dim:
            raise ConfigError("metric.tilt length must equal field.dimension")
        if not 0 < self["metric.eta"] < 1:
            raise ConfigError("metric.eta must lie in (0, 1)")
        if any(len(p) != dim for p in self["effective.P"]):
            raise ConfigError("effective.P entries must have field.dimension components")
        if self["solver.initial"] == "plateau" and self["solver.level"] is None:
            raise ConfigError("plateau initial data needs solver.level")

    def as_dict(self) -> dict[str, Any]:
        return {k: _render(self._values[k]) for k in sorted(self._values)}

    def as_text(self) -> str:
        return "".join(f"{k}={_text_of(self._values[k])}\n" for k in sorted(self._values))


def parse_text(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        cfg.set_text(k, v)
    cfg.validate()
    return cfg


def load(path: str) -> tuple[RunConfig, str | None]:
    """Read a keyed-text file or a JSON manifest; returns the config and the manifest command."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if "config" not in doc:
            raise ConfigError(f"{path}: manifest lacks a config section")
        cfg = RunConfig()
        for k, v in doc["config"].items():
            cfg.set_text(k, _text_of(v))
        cfg.validate()
        return cfg, doc.get("command")
    return parse_text(text), None
