"""Command-line front end: ``ghomog <subcommand> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed assumption check under ``--strict``.  Set ``GHOMOG_THREADS`` to cap
the BLAS/OpenMP thread pools.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .config import KEYS, SCHEMA_VERSION, ConfigError, RunConfig, load

log = logging.getLogger("ghomog")

COMMANDS = ("check-assumptions", "sigma", "distance", "cycle", "invariant-sets", "effective",
            "wulff", "corrector", "homogenize", "evolve")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSUMPTION = 0, 2, 3, 4


class AssumptionFailure(Exception):
    pass


# -- output helpers --------------------------------------------------------------------


def _num(v) -> str:
    v = float(v)
    if v == float("inf"):
        return "inf"
    if v == float("-inf"):
        return "-inf"
    return repr(v)


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return _num(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and obj in (float("inf"), float("-inf")):
        return _num(obj)
    return obj


class Output:
    def __init__(self, cfg: RunConfig):
        self.dir = Path(cfg["output.directory"])
        self.fmt = cfg["output.format"]
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def json(self, name: str, doc: dict) -> None:
        doc = {"schema_version": SCHEMA_VERSION, **doc}
        path = self.dir / f"{name}.json"
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.written.append(path.name)

    def table(self, name: str, header: list[str], rows: list[list]) -> None:
        """CSV, or a JSON list of records when ``output.format=json``."""
        if self.fmt == "json":
            self.json(name, {"rows": [dict(zip(header, r)) for r in rows]})
            return
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        path = self.dir / f"{name}.csv"
        path.write_text(buf.getvalue(), encoding="utf-8")
        self.written.append(path.name)


# -- building blocks ---------------------------------------------------------------------


def build_field(cfg: RunConfig):
    from .fields import VectorField

    kind = cfg["field.kind"]
    dim = cfg["field.dimension"]
    amp = cfg["field.amplitude"]
    if kind == "constant":
        return VectorField.constant(cfg["field.vector"])
    if kind == "shear":
        return VectorField.shear(amp, cfg["field.axis"], cfg["field.profile"], dim, cfg["field.transverse"])
    if kind == "cellular":
        return VectorField.cellular(amp, dim)
    if kind == "sink":
        return VectorField.sink(amp, cfg["field.center"], dim)
    terms = []
    for chunk in cfg["field.terms"].split(";"):
        if not chunk.strip():
            continue
        try:
            comp, kind_, mode, coef = chunk.split(":")
            terms.append((int(comp), kind_.strip(), [int(m) for m in mode.split(",")], float(coef)))
        except ValueError:
            raise ConfigError(f"bad trig_poly term {chunk!r}") from None
    if not terms:
        raise ConfigError("trig_poly needs field.terms")
    return VectorField.trig_poly(terms, dim)


def _grid(cfg):
    from .torus import TorusGrid

    return TorusGrid(cfg["grid.resolution"], cfg["field.dimension"])


def _tilt(cfg):
    t = cfg["metric.tilt"]
    return tuple(t) if t is not None else (0.0,) * cfg["field.dimension"]


def _tilts(cfg):
    from .effective import sphere_fan

    if cfg["effective.fan"] > 0:
        return [tuple(float(c) for c in p) for p in sphere_fan(cfg["field.dimension"], cfg["effective.fan"])]
    return [tuple(p) for p in cfg["effective.P"]]


def _source(cfg, grid):
    src = cfg["metric.source"]
    if src is None:
        return 0
    if len(src) != grid.dimension:
        raise ConfigError("metric.source needs one index per axis")
    return int(grid.ravel(list(src)))


def _initial(cfg):
    from .hj import InitialData

    kind = cfg["solver.initial"]
    if kind == "trig":
        return InitialData.trig()
    centers = cfg["solver.center"]
    if kind == "cone":
        return InitialData.cone(centers[0])
    return InitialData.plateau(centers, cfg["solver.level"])


# -- subcommands ---------------------------------------------------------------------------


def cmd_check_assumptions(cfg, out, strict):
    from .fields import check_assumptions

    vf = build_field(cfg)
    rep = check_assumptions(vf, cfg["assumptions.chi"])
    out.json("assumptions", {"field": vf.describe(), **rep.to_dict()})
    if strict and not rep.passes_A2:
        raise AssumptionFailure(
            f"divergence norm {rep.divergence_norm:.6g} exceeds threshold {rep.threshold:.6g}")


def cmd_sigma(cfg, out, strict):
    import numpy as np

    from .effective import sphere_fan
    from .geometry import support_sigma

    vf = build_field(cfg)
    grid = _grid(cfg)
    x = grid.flat_centers()
    qs = sphere_fan(grid.dimension, cfg["sigma.fan"]) * cfg["sigma.radius"]
    N = grid.dimension
    rows = []
    for xi in x:
        vals = support_sigma(vf, np.broadcast_to(xi, qs.shape), qs)
        for q, s in zip(qs, vals):
            rows.append([*map(float, xi), *map(float, q), float(s)])
    header = [f"x{d + 1}" for d in range(N)] + [f"q{d + 1}" for d in range(N)] + ["sigma"]
    out.table("sigma", header, rows)


def _weighting(cfg, grid, level=None):
    from .metric import EdgeWeighting

    return EdgeWeighting(cfg["metric.level"] if level is None else level, grid, _tilt(cfg),
                         cfg["metric.truncation"], cfg["metric.stencil_radius"])


def cmd_distance(cfg, out, strict):
    import numpy as np

    from .metric import bellman_ford, build_weights, shortest_path_field
    from .torus import GridFunction, write_csv

    vf = build_field(cfg)
    grid = _grid(cfg)
    table = build_weights(_weighting(cfg, grid), vf)
    src = _source(cfg, grid)
    finite = table.weights[np.isfinite(table.weights)]
    if finite.size and finite.min() < 0:
        dist, _, cert = bellman_ford(table, source=src)
        if cert is not None:
            raise ArithmeticError("negative cycle: tilted distance is unbounded below")
        u = GridFunction(grid, dist)
    else:
        u = shortest_path_field(table, src)
    if out.fmt == "json":
        out.json("distance", {"shape": list(grid.shape), "values": u.values.ravel().tolist()})
    else:
        path = out.dir / "distance.csv"
        path.write_text(write_csv(u, value_name="distance"), encoding="utf-8")
        out.written.append(path.name)


def cmd_cycle(cfg, out, strict):
    from .metric import bellman_ford_negative_cycle, build_weights

    vf = build_field(cfg)
    grid = _grid(cfg)
    cert = bellman_ford_negative_cycle(build_weights(_weighting(cfg, grid), vf))
    doc = {"negative_cycle": cert is not None, "level": cfg["metric.level"], "tilt": list(_tilt(cfg))}
    if cert is not None:
        doc.update(cert.to_dict())
    out.json("cycle", doc)


def cmd_invariant_sets(cfg, out, strict):
    from .dynamics import boundary_normal_check, build_reachability_graph, detect_invariant_sets

    vf = build_field(cfg)
    grid = _grid(cfg)
    sides = ("inner", "outer") if cfg["dynamics.side"] == "both" else (cfg["dynamics.side"],)
    doc = {"field": vf.describe(), "resolution": list(grid.shape), "eta": cfg["metric.eta"]}
    for side in sides:
        g = build_reachability_graph(vf, grid, cfg["metric.eta"], side, cfg["metric.stencil_radius"],
                                     cfg["metric.check_margin"])
        rep = detect_invariant_sets(g)
        entry = rep.to_dict()
        entry["verdict"] = "proper invariant set" if rep.proper_invariant_found else "none"
        entry["volumes"] = [rep.volumes[c] for c in rep.closed] if rep.closed else [1.0]
        entry["edge_count"] = g.edge_count
        if rep.proper_invariant_found and rep.closed:
            entry["boundary_stats"] = boundary_normal_check(rep, vf, tol=cfg["dynamics.tol"]).to_dict()
        doc[side] = entry
        if cfg["dynamics.labels"]:
            rows = [[*map(int, grid.unravel(i)), int(rep.labels[i])] for i in range(grid.size)]
            out.table(f"labels_{side}", [f"i{d + 1}" for d in range(grid.dimension)] + ["component"], rows)
    out.json("invariant_sets", doc)


def cmd_effective(cfg, out, strict):
    from .effective import effective_hamiltonian

    vf = build_field(cfg)
    grid = _grid(cfg)
    N = grid.dimension
    rows = []
    for P in _tilts(cfg):
        res = effective_hamiltonian(vf, P, grid, cfg["effective.tol"], cfg["effective.k_max"],
                                    cfg["effective.bisection_tol"], cfg["metric.stencil_radius"],
                                    cfg["effective.audit"])
        for r in res.rows():
            rows.append([*P, res.lower, res.upper, r["k"], r["value"], r["route"], res.limit])
    header = [f"P{d + 1}" for d in range(N)] + ["lower", "upper", "k", "value", "route", "limit"]
    out.table("effective", header, rows)


def cmd_wulff(cfg, out, strict):
    from .effective import wulff_set

    vf = build_field(cfg)
    W = wulff_set(vf, cfg["effective.directions"], _grid(cfg), cfg["effective.tol"],
                  k_max=cfg["effective.k_max"], bisection_tol=cfg["effective.bisection_tol"],
                  stencil_radius=cfg["metric.stencil_radius"])
    N = vf.dimension
    rows = [[*map(float, d), float(v)] for d, v in zip(W.directions, W.values)]
    out.table("wulff", [f"n{d + 1}" for d in range(N)] + ["value"], rows)


def cmd_corrector(cfg, out, strict):
    from .effective import corrector_field
    from .torus import write_csv

    vf = build_field(cfg)
    grid = _grid(cfg)
    P = _tilts(cfg)[0]
    u = corrector_field(vf, P, cfg["effective.k"], grid, stencil_radius=cfg["metric.stencil_radius"])
    path = out.dir / "corrector.csv"
    path.write_text(write_csv(u, value_name="corrector"), encoding="utf-8")
    out.written.append(path.name)


def cmd_homogenize(cfg, out, strict):
    from .hj import homogenization_experiment

    vf = build_field(cfg)
    tab = homogenization_experiment(vf, _initial(cfg), cfg["solver.epsilon"], cfg["solver.T"],
                                    cfg["solver.resolution"], stride=cfg["solver.stride"],
                                    cfl=cfg["solver.cfl"], wulff_directions=cfg["effective.directions"],
                                    wulff_resolution=cfg["solver.wulff_resolution"])
    out.table("homogenize", ["epsilon", "time", "error"],
              [[r["epsilon"], r["time"], r["error"]] for r in tab.rows()])
    out.json("homogenize_summary", {"epsilon": tab.epsilons, "error": tab.worst.tolist(),
                                    "ratios": tab.ratios, "resolution": tab.resolution})


def cmd_evolve(cfg, out, strict):
    from .hj import SolverConfig, solve_oscillatory

    vf = build_field(cfg)
    eps = cfg["solver.epsilon"][0]
    sc = SolverConfig(eps, cfg["solver.T"], cfg["solver.resolution"], cfg["solver.cfl"], vf.dimension)
    times = cfg["solver.snapshots"] or (cfg["solver.T"],)
    snaps = solve_oscillatory(vf, _initial(cfg), sc, times)
    grid = sc.grid
    rows = []
    for s in snaps:
        flat = s.values.ravel()
        for i in range(grid.size):
            rows.append([s.time, *map(int, grid.unravel(i)), float(flat[i])])
    out.table("evolve", ["time"] + [f"i{d + 1}" for d in range(grid.dimension)] + ["u"], rows)


HANDLERS = {
    "check-assumptions": cmd_check_assumptions,
    "sigma": cmd_sigma,
    "distance": cmd_distance,
    "cycle": cmd_cycle,
    "invariant-sets": cmd_invariant_sets,
    "effective": cmd_effective,
    "wulff": cmd_wulff,
    "corrector": cmd_corrector,
    "homogenize": cmd_homogenize,
    "evolve": cmd_evolve,
}


def _parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:<26} {v.help} (default {v.default!r})" for k, v in KEYS.items())
    p = argparse.ArgumentParser(
        prog="ghomog",
        description="Homogenization of the G-equation with non-coercive advection.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="configuration keys:\n" + keys + "\n\nexit codes: 0 ok, 2 configuration error, "
               "3 numerical failure, 4 assumption check failed (--strict)\n"
               "environment: GHOMOG_THREADS caps BLAS/OpenMP threads",
    )
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="subcommand (may be omitted when --config is a manifest)")
    p.add_argument("--config", help="keyed-text file or manifest.json from an earlier run")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable; wins over --config)")
    p.add_argument("-o", "--output", help="shorthand for --set output.directory=DIR")
    p.add_argument("--strict", action="store_true", help="exit 4 when check-assumptions fails (A2)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _limit_threads() -> None:
    n = os.environ.get("GHOMOG_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def main(argv: list[str] | None = None) -> int:
    _limit_threads()
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg, manifest_cmd = load(args.config) if args.config else (RunConfig(), None)
        overrides = list(args.overrides)
        if args.output:
            overrides.append(f"output.directory={args.output}")
        cfg = cfg.updated(overrides)
        command = args.command or manifest_cmd
        if command not in HANDLERS:
            raise ConfigError("no subcommand given")
        out = Output(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from .dynamics import MarginError, UnstableVerdictError
    from .effective import BracketError, NonMonotoneError
    from .hj import CFLError
    from .metric import NegativeWeightError

    try:
        HANDLERS[command](cfg, out, args.strict)
    except AssumptionFailure as exc:
        print(f"assumption check failed: {exc}", file=sys.stderr)
        code = EXIT_ASSUMPTION
    except (ConfigError, MarginError, NegativeWeightError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CFLError, BracketError, NonMonotoneError, UnstableVerdictError, FloatingPointError,
            ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    else:
        code = EXIT_OK
    manifest = {"command": command, "config": cfg.as_dict(), "outputs": sorted(out.written),
                "exit_code": code}
    out.json("manifest", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
